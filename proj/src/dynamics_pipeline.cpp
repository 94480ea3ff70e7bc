#include "sensorgrad/dynamics_pipeline.hpp"

#include <cstdio>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace sensorgrad {

namespace {

Vector motion_features(const Vector& angles, const Vector& velocities) {
  Vector joint(angles.size() + velocities.size());
  joint << angles, velocities;
  return quad_features(joint);
}

Matrix fit_or_diversity_error(const Matrix& design, const Matrix& targets) {
  try {
    return least_squares(design, targets);
  } catch (const RegressionError&) {
    // An identically zero target is reproduced exactly by zero coefficients.
    if (targets.cwiseAbs().maxCoeff() == 0.0) return Matrix::Zero(design.cols(), targets.cols());
    throw RegressionError("insufficient state diversity");
  }
}

void write_matrix(std::ostream& out, const char* name, const Matrix& m) {
  out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  char buf[40];
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
      out << (c ? " " : "") << buf;
    }
    out << '\n';
  }
}

Matrix read_matrix(std::istream& in, const std::string& expected) {
  std::string name;
  Eigen::Index rows = 0, cols = 0;
  if (!(in >> name >> rows >> cols) || name != expected || rows < 0 || cols < 0) {
    throw Error("dynamics model file: expected matrix " + expected);
  }
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!(in >> m(r, c))) throw Error("dynamics model file: truncated matrix " + expected);
    }
  }
  return m;
}

}  // namespace

void DynamicsModel::validate() const {
  const Eigen::Index fx = state_feature_dim();
  const Eigen::Index fxv = motion_feature_dim();
  if (joints < 1) throw Error("dynamics model needs at least one joint");
  if (inverse_mass.rows() != fx || inverse_mass.cols() != joints * joints || gravity.rows() != fx ||
      gravity.cols() != joints || coriolis.rows() != fxv || coriolis.cols() != joints) {
    throw Error("dynamics model matrices have inconsistent shapes");
  }
}

std::vector<StateSample> sample_pretraining_states(const ArmWorld& world, const PretrainingConfig& config,
                                                   std::size_t count, Rng& rng) {
  const Matrix factor = psd_factor(config.exploration_cov);
  std::vector<StateSample> pool;
  for (std::size_t r = 0; r < config.rollouts; ++r) {
    const Vector policy = sample_gaussian(config.nominal_policy, factor, rng);
    const DartRollout rollout = simulate_dart(world, policy, rng);
    if (rollout.flagged) continue;
    for (const ArmState& s : rollout.states) pool.push_back(StateSample{s.angles, s.velocities});
  }
  if (pool.size() < count) throw Error("pretraining rollouts visited fewer states than requested");
  // Partial Fisher-Yates: the first `count` entries become a uniform sample.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

DynamicsModel fit_dynamics_model(const ArmWorld& world, const std::vector<StateSample>& states) {
  const Eigen::Index k = world.joint_count();
  DynamicsModel model;
  model.joints = k;
  const Eigen::Index fx = model.state_feature_dim();
  const Eigen::Index fxv = model.motion_feature_dim();
  const Eigen::Index n = static_cast<Eigen::Index>(states.size());
  if (n < fxv + 2) throw RegressionError("insufficient state diversity");

  Matrix phi_state(n, fx), phi_motion(n, fxv);
  Matrix inv_mass(n, k * k), inv_gravity(n, k), inv_coriolis(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const StateSample& s = states[static_cast<std::size_t>(i)];
    phi_state.row(i) = quad_features(s.angles).transpose();
    phi_motion.row(i) = motion_features(s.angles, s.velocities).transpose();
    const Matrix minv = arm_mass_matrix(world, s.angles).inverse();
    inv_mass.row(i) = vec_mat(minv).transpose();
    inv_gravity.row(i) = (minv * arm_gravity(world, s.angles)).transpose();
    inv_coriolis.row(i) = (minv * arm_coriolis(world, s.angles, s.velocities)).transpose();
  }
  model.inverse_mass = fit_or_diversity_error(phi_state, inv_mass);
  model.gravity = fit_or_diversity_error(phi_state, inv_gravity);
  model.coriolis = fit_or_diversity_error(phi_motion, inv_coriolis);
  return model;
}

Vector predict_acceleration(const DynamicsModel& model, const Vector& torques, const Vector& angles,
                            const Vector& velocities) {
  const Eigen::Index k = model.joints;
  if (torques.size() != k || angles.size() != k || velocities.size() != k) {
    throw Error("predict_acceleration: dimension mismatch");
  }
  const Vector phi = quad_features(angles);
  const Matrix inv_mass = resh(model.inverse_mass.transpose() * phi, k, k);
  return inv_mass * torques + model.gravity.transpose() * phi +
         model.coriolis.transpose() * motion_features(angles, velocities);
}

ResidualCurve velocity_residuals(const AccelerationPredictor& predictor, const std::vector<ArmState>& trajectory,
                                 const std::vector<Vector>& torques, double timestep) {
  if (trajectory.size() < 2) throw Error("velocity residuals need at least two states");
  if (torques.size() != trajectory.size() - 1) throw Error("torque count does not match trajectory length");
  ResidualCurve curve;
  curve.timestep = timestep;
  curve.residuals.reserve(trajectory.size() - 1);
  for (std::size_t t = 1; t < trajectory.size(); ++t) {
    const ArmState& prev = trajectory[t - 1];
    const Vector predicted = prev.velocities + predictor(torques[t - 1], prev.angles, prev.velocities) * timestep;
    curve.residuals.push_back(trajectory[t].velocities - predicted);
  }
  return curve;
}

ResidualCurve velocity_residuals(const DynamicsModel& model, const std::vector<ArmState>& trajectory,
                                 const std::vector<Vector>& torques, double timestep) {
  return velocity_residuals(
      [&model](const Vector& tau, const Vector& x, const Vector& v) { return predict_acceleration(model, tau, x, v); },
      trajectory, torques, timestep);
}

Matrix residual_basis(const ArmWorld& world, std::size_t residual_count) {
  const KnotSpline spline(world.knots_per_joint, world.sim_duration);
  Matrix basis(static_cast<Eigen::Index>(residual_count), world.knots_per_joint);
  for (std::size_t i = 0; i < residual_count; ++i) {
    const double t = static_cast<double>(i + 1) * world.timestep;
    basis.row(static_cast<Eigen::Index>(i)) = spline.basis(t).tail(world.knots_per_joint).transpose();
  }
  return basis;
}

Vector project_residuals(const ResidualCurve& curve, const Matrix& basis, std::optional<double> release_time) {
  const Eigen::Index steps = static_cast<Eigen::Index>(curve.residuals.size());
  if (steps == 0) throw Error("empty residual curve");
  if (basis.rows() != steps) throw Error("basis is not sampled at the curve's timestamps");
  if (steps < basis.cols()) throw Error("fewer timesteps than basis functions");
  const Eigen::Index k = curve.residuals.front().size();
  Matrix targets(steps, k);
  for (Eigen::Index t = 0; t < steps; ++t) targets.row(t) = curve.residuals[static_cast<std::size_t>(t)].transpose();
  const Matrix coeffs = least_squares(basis, targets);  // nb × k
  const Eigen::Index nb = basis.cols();
  Vector out(k * nb + (release_time ? 1 : 0));
  for (Eigen::Index j = 0; j < k; ++j) out.segment(j * nb, nb) = coeffs.col(j);
  if (release_time) out(out.size() - 1) = *release_time;
  return out;
}

namespace {

Vector encode_dart_payload(const ArmWorld& world, const DynamicsModel& model, const Matrix& basis,
                           const Vector& policy, const Vector& raw_sensors) {
  const std::vector<ArmState> states = unpack_dart_states(raw_sensors, world.joint_count(), world.timestep);
  const SplinePolicy controller(world);
  std::vector<Vector> torques;
  torques.reserve(states.size() - 1);
  for (std::size_t i = 0; i + 1 < states.size(); ++i) torques.push_back(controller.commanded_torque(policy, states[i]));
  const ResidualCurve curve = velocity_residuals(model, states, torques, world.timestep);
  return project_residuals(curve, basis, raw_sensors(raw_sensors.size() - 1));
}

}  // namespace

Vector dart_sensor_features(const ArmWorld& world, const DynamicsModel& model, const Vector& policy,
                            const Vector& raw_sensors) {
  const std::size_t steps = static_cast<std::size_t>((raw_sensors.size() - 1) / (2 * world.joint_count())) - 1;
  return encode_dart_payload(world, model, residual_basis(world, steps), policy, raw_sensors);
}

void save_dynamics_model(const DynamicsModel& model, std::ostream& out) {
  model.validate();
  out << "sensorgrad-dynamics-model 1\n";
  out << "joints " << model.joints << '\n';
  write_matrix(out, "A_M", model.inverse_mass);
  write_matrix(out, "A_G", model.gravity);
  write_matrix(out, "A_C", model.coriolis);
}

DynamicsModel load_dynamics_model(std::istream& in) {
  std::string magic, key;
  int version = 0;
  DynamicsModel model;
  if (!(in >> magic >> version) || magic != "sensorgrad-dynamics-model" || version != 1) {
    throw Error("dynamics model file: bad header");
  }
  if (!(in >> key >> model.joints) || key != "joints") throw Error("dynamics model file: missing joint count");
  model.inverse_mass = read_matrix(in, "A_M");
  model.gravity = read_matrix(in, "A_G");
  model.coriolis = read_matrix(in, "A_C");
  model.validate();
  return model;
}

DartEnvironment::DartEnvironment(ArmWorld world, std::shared_ptr<const DynamicsModel> model)
    : world_(std::move(world)), model_(std::move(model)) {
  world_.validate();
  if (!model_) throw Error("dart environment needs a dynamics model");
  model_->validate();
  if (model_->joints != world_.joint_count()) throw Error("dynamics model joint count does not match the arm");
  basis_ = residual_basis(world_, static_cast<std::size_t>(world_.step_count()));
}

TrialRecord DartEnvironment::run_trial(const Vector& policy, Rng& rng) const {
  TrialRecord rec = dart_trial(world_, policy, rng);
  rec.encoded_sensors = encode_dart_payload(world_, *model_, basis_, policy, rec.raw_sensors);
  return rec;
}

std::unique_ptr<Environment> DartEnvironment::with_noise_scale(double scale) const {
  ArmWorld w = world_;
  w.torque_noise_multiplicative *= scale;
  w.torque_noise_additive *= scale;
  w.release_time_std *= scale;
  return std::make_unique<DartEnvironment>(std::move(w), model_);
}

}  // namespace sensorgrad
