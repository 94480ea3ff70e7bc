#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "sensorgrad/dynamics_pipeline.hpp"

using namespace sensorgrad;

namespace {

const Vector kThrow = (Vector(9) << -0.595, -0.572, -0.525, 2.865, 3.081, 2.245, 1.671, 0.828, -0.101).finished();

PretrainingConfig pretraining() { return PretrainingConfig{kThrow, 0.01 * Matrix::Identity(9, 9), 40}; }

const DynamicsModel& shared_model() {
  static const DynamicsModel model = [] {
    Rng rng = make_rng(7);
    const ArmWorld world;
    return fit_dynamics_model(world, sample_pretraining_states(world, pretraining(), 2000, rng));
  }();
  return model;
}

Vector true_acceleration(const ArmWorld& w, const Vector& tau, const Vector& x, const Vector& v) {
  return arm_dynamics(w, ArmState{x, v, 0.0}, tau);
}

}  // namespace

TEST_CASE("pretraining states are finite and deterministic") {
  const ArmWorld world;
  Rng a = make_rng(1), b = make_rng(1);
  const auto states = sample_pretraining_states(world, pretraining(), 500, a);
  const auto again = sample_pretraining_states(world, pretraining(), 500, b);
  REQUIRE(states.size() == 500);
  for (std::size_t i = 0; i < states.size(); ++i) {
    CHECK(states[i].angles.allFinite());
    CHECK(states[i].velocities.allFinite());
    CHECK(states[i].angles == again[i].angles);
  }
}

TEST_CASE("pretraining states cover the angles of held-out rollouts") {
  const ArmWorld world;
  Rng rng = make_rng(derive_seed(5, 2));
  const auto states = sample_pretraining_states(world, pretraining(), 2000, rng);
  const Matrix factor = psd_factor(pretraining().exploration_cov);
  Rng held_out = make_rng(derive_seed(5, 99));
  std::vector<DartRollout> rollouts;
  for (int r = 0; r < 20; ++r) rollouts.push_back(simulate_dart(world, sample_gaussian(kThrow, factor, held_out), held_out));
  for (Eigen::Index j = 0; j < 3; ++j) {
    double lo = 1e9, hi = -1e9, rlo = 1e9, rhi = -1e9;
    for (const auto& s : states) {
      lo = std::min(lo, s.angles(j));
      hi = std::max(hi, s.angles(j));
    }
    for (const auto& roll : rollouts) {
      for (const auto& s : roll.states) {
        rlo = std::min(rlo, s.angles(j));
        rhi = std::max(rhi, s.angles(j));
      }
    }
    const double overlap = std::max(0.0, std::min(hi, rhi) - std::max(lo, rlo));
    INFO("joint ", j, " sampled [", lo, ", ", hi, "] rollouts [", rlo, ", ", rhi, "]");
    CHECK(overlap >= 0.8 * (rhi - rlo));
  }
}

TEST_CASE("dynamics model fit quality") {
  const ArmWorld world;
  const DynamicsModel& model = shared_model();
  CHECK(model.state_feature_dim() == 10);
  CHECK(model.motion_feature_dim() == 28);

  Rng rng = make_rng(3);
  const auto states = sample_pretraining_states(world, pretraining(), 2000, rng);
  // In-sample R² of vec(m⁻¹) pooled over entries.
  Matrix targets(static_cast<Eigen::Index>(states.size()), 9), fitted(static_cast<Eigen::Index>(states.size()), 9);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    targets.row(r) = vec_mat(arm_mass_matrix(world, states[i].angles).inverse()).transpose();
    fitted.row(r) = (model.inverse_mass.transpose() * quad_features(states[i].angles)).transpose();
  }
  const Eigen::RowVectorXd means = targets.colwise().mean();
  const double ss_res = (targets - fitted).squaredNorm();
  const double ss_tot = (targets.rowwise() - means).squaredNorm();
  CHECK(1.0 - ss_res / ss_tot >= 0.9);

  std::vector<double> errors;
  const SplinePolicy controller(world);
  for (std::size_t i = 0; i < 100; ++i) {
    const StateSample& s = states[i * 19];
    const Vector tau = controller.commanded_torque(kThrow, ArmState{s.angles, s.velocities, 0.0});
    const Vector truth = true_acceleration(world, tau, s.angles, s.velocities);
    errors.push_back((predict_acceleration(model, tau, s.angles, s.velocities) - truth).norm() / truth.norm());
  }
  std::nth_element(errors.begin(), errors.begin() + 50, errors.end());
  CHECK(errors[50] <= 0.25);
}

TEST_CASE("term isolation and zero-velocity Coriolis") {
  const ArmWorld world;
  const DynamicsModel& model = shared_model();
  const Vector x = (Vector(3) << -0.5, 2.0, 0.5).finished();
  const Vector gravity_only = model.gravity.transpose() * quad_features(x);
  const Vector at_rest = predict_acceleration(model, Vector::Zero(3), x, Vector::Zero(3));
  Vector zero_motion(6);
  zero_motion << x, Vector::Zero(3);
  CHECK((at_rest - gravity_only - model.coriolis.transpose() * quad_features(zero_motion)).norm() < 1e-12);

  std::vector<StateSample> resting;
  Rng rng = make_rng(5);
  for (int i = 0; i < 200; ++i) resting.push_back(StateSample{standard_normal_vector(3, rng), Vector::Zero(3)});
  const DynamicsModel still = fit_dynamics_model(world, resting);
  for (const auto& s : resting) {
    Vector joint(6);
    joint << s.angles, s.velocities;
    CHECK((still.coriolis.transpose() * quad_features(joint)).norm() < 1e-8);
  }
}

TEST_CASE("single-link arm has a constant inverse mass reproduced exactly") {
  ArmWorld one;
  one.links = {Link::rod(0.3, 2.0)};
  one.kp = Vector::Constant(1, 50.0);
  one.kd = Vector::Constant(1, 5.0);
  one.start_posture = Vector::Zero(1);
  one.gravity = 0.0;
  Rng rng = make_rng(2);
  std::vector<StateSample> states;
  for (int i = 0; i < 50; ++i) states.push_back(StateSample{standard_normal_vector(1, rng), standard_normal_vector(1, rng)});
  const DynamicsModel model = fit_dynamics_model(one, states);
  const double inv = 1.0 / arm_mass_matrix(one, Vector::Zero(1))(0, 0);
  for (const auto& s : states) {
    CHECK(std::abs((model.inverse_mass.transpose() * quad_features(s.angles))(0) - inv) < 1e-8);
    const Vector tau = Vector::Constant(1, 0.7);
    CHECK((predict_acceleration(model, tau, s.angles, s.velocities) - true_acceleration(one, tau, s.angles, s.velocities))
              .norm() < 1e-8 * (1.0 + inv));
  }
}

TEST_CASE("fit errors and order invariance") {
  const ArmWorld world;
  std::vector<StateSample> same(40, StateSample{Vector::Ones(3), Vector::Ones(3)});
  CHECK_THROWS_WITH_AS(fit_dynamics_model(world, same), doctest::Contains("insufficient state diversity"), RegressionError);
  std::vector<StateSample> few(5, StateSample{Vector::Ones(3), Vector::Ones(3)});
  CHECK_THROWS_AS(fit_dynamics_model(world, few), RegressionError);

  Rng rng = make_rng(4);
  auto states = sample_pretraining_states(world, pretraining(), 300, rng);
  const DynamicsModel a = fit_dynamics_model(world, states);
  std::reverse(states.begin(), states.end());
  const DynamicsModel b = fit_dynamics_model(world, states);
  CHECK((a.inverse_mass - b.inverse_mass).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((a.coriolis - b.coriolis).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("velocity residuals with an exact predictor") {
  ArmWorld world;
  world.torque_noise_multiplicative = 0.0;
  world.torque_noise_additive = 0.0;
  world.release_time_std = 0.0;
  Rng rng = make_rng(1);
  const DartRollout roll = simulate_dart(world, kThrow, rng);
  const AccelerationPredictor exact = [&](const Vector& tau, const Vector& x, const Vector& v) {
    return true_acceleration(world, tau, x, v);
  };
  const ResidualCurve curve = velocity_residuals(exact, roll.states, roll.commanded_torques, world.timestep);
  CHECK(curve.residuals.size() == roll.states.size() - 1);
  const double dt = world.timestep;
  double worst = 0.0, jerk = 0.0, mismatch = 0.0;
  for (std::size_t t = 1; t < roll.states.size(); ++t) {
    const ArmState& prev = roll.states[t - 1];
    const ArmState& next = roll.states[t];
    const Vector& tau = roll.commanded_torques[t - 1];
    const Vector change = exact(tau, next.angles, next.velocities) - exact(tau, prev.angles, prev.velocities);
    const Vector& r = curve.residuals[t - 1];
    worst = std::max(worst, r.cwiseAbs().maxCoeff());
    jerk = std::max(jerk, change.cwiseAbs().maxCoeff() / dt);
    mismatch = std::max(mismatch, (r - 0.5 * dt * change).cwiseAbs().maxCoeff());
  }
  CHECK(worst > 0.0);
  CHECK(worst < 10.0 * dt * dt * jerk);
  CHECK(mismatch < 0.05 * worst);

  // Arm held still by torques that cancel gravity.
  const Vector x = (Vector(3) << -0.6, 2.2, 0.4).finished();
  const Vector hold = -arm_gravity(world, x);
  std::vector<ArmState> still(5, ArmState{x, Vector::Zero(3), 0.0});
  const ResidualCurve flat = velocity_residuals(exact, still, std::vector<Vector>(4, hold), world.timestep);
  for (const auto& r : flat.residuals) CHECK(r.norm() < 1e-12);

  CHECK_THROWS_AS(velocity_residuals(exact, still, std::vector<Vector>(2, hold), world.timestep), Error);
  CHECK_THROWS_AS(velocity_residuals(exact, {still.front()}, {}, world.timestep), Error);
}

TEST_CASE("a single torque impulse shows up through the inverse mass") {
  const ArmWorld world;
  const DynamicsModel& model = shared_model();
  const double dt = world.timestep;
  const ArmState start{world.start_posture, Vector::Zero(3), 0.0};
  const Vector tau = Vector::Zero(3);
  const Vector eps = (Vector(3) << 0.5, -0.3, 0.2).finished();
  const ArmState pushed = rk4_step(world, start, tau + eps, dt);
  const ArmState plain = rk4_step(world, start, tau, dt);
  const auto r_pushed = velocity_residuals(model, {start, pushed}, {tau}, dt).residuals.front();
  const auto r_plain = velocity_residuals(model, {start, plain}, {tau}, dt).residuals.front();
  const Vector expected = resh(model.inverse_mass.transpose() * quad_features(start.angles), 3, 3) * eps * dt;
  CHECK(((r_pushed - r_plain) - expected).norm() <= 0.25 * expected.norm());
}

TEST_CASE("residual projection") {
  const ArmWorld world;
  const std::size_t steps = static_cast<std::size_t>(world.step_count());
  const Matrix basis = residual_basis(world, steps);
  CHECK(basis.cols() == 3);
  ResidualCurve zero{std::vector<Vector>(steps, Vector::Zero(3)), world.timestep};
  CHECK(project_residuals(zero, basis).isZero(0.0));

  ResidualCurve unit{std::vector<Vector>(steps, Vector::Zero(3)), world.timestep};
  for (std::size_t t = 0; t < steps; ++t) unit.residuals[t](1) = basis(static_cast<Eigen::Index>(t), 2);
  const Vector coeffs = project_residuals(unit, basis, 0.21);
  Vector expected = Vector::Zero(10);
  expected(1 * 3 + 2) = 1.0;
  expected(9) = 0.21;
  CHECK((coeffs - expected).cwiseAbs().maxCoeff() < 1e-10);

  Rng rng = make_rng(8);
  ResidualCurve a{{}, world.timestep}, b{{}, world.timestep};
  for (std::size_t t = 0; t < steps; ++t) {
    a.residuals.push_back(standard_normal_vector(3, rng));
    b.residuals.push_back(standard_normal_vector(3, rng));
  }
  Matrix targets(static_cast<Eigen::Index>(steps), 3);
  for (std::size_t t = 0; t < steps; ++t) targets.row(static_cast<Eigen::Index>(t)) = a.residuals[t].transpose();
  const Matrix normal = (basis.transpose() * basis).ldlt().solve(basis.transpose() * targets);
  const Vector pa = project_residuals(a, basis);
  for (Eigen::Index j = 0; j < 3; ++j) CHECK((pa.segment(3 * j, 3) - normal.col(j)).norm() < 1e-8);

  ResidualCurve combo{{}, world.timestep};
  for (std::size_t t = 0; t < steps; ++t) combo.residuals.push_back(2.5 * a.residuals[t] + b.residuals[t]);
  CHECK((project_residuals(combo, basis) - (2.5 * pa + project_residuals(b, basis))).norm() < 1e-10);

  ResidualCurve tiny{std::vector<Vector>(2, Vector::Zero(3)), world.timestep};
  CHECK_THROWS_AS(project_residuals(tiny, basis.topRows(2)), Error);
}

TEST_CASE("model files round trip") {
  const DynamicsModel& model = shared_model();
  std::stringstream io;
  save_dynamics_model(model, io);
  const DynamicsModel back = load_dynamics_model(io);
  CHECK(back.inverse_mass == model.inverse_mass);
  CHECK(back.gravity == model.gravity);
  CHECK(back.coriolis == model.coriolis);
  std::stringstream bad("sensorgrad-dynamics-model 1\njoints 3\nA_M 1 1\n");
  CHECK_THROWS_AS(load_dynamics_model(bad), Error);
}

TEST_CASE("dart environment encodes ten sensors") {
  const ArmWorld world;
  const DartEnvironment env(world, std::make_shared<DynamicsModel>(shared_model()));
  CHECK(env.sensor_dim() == 10);
  Rng rng = make_rng(12);
  const TrialRecord t = env.run_trial(kThrow, rng);
  REQUIRE(t.encoded_sensors.has_value());
  CHECK(t.encoded_sensors->size() == 10);
  CHECK((*t.encoded_sensors)(9) == t.raw_sensors(t.raw_sensors.size() - 1));
  CHECK((*t.encoded_sensors - dart_sensor_features(world, shared_model(), kThrow, t.raw_sensors)).norm() < 1e-12);
}
