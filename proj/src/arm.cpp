#include "sensorgrad/arm.hpp"

#include <algorithm>
#include <cmath>

namespace sensorgrad {

namespace {

/// Lever arm of link a's angle on the center of mass of link i.
double lever(const ArmWorld& world, Eigen::Index a, Eigen::Index i) {
  if (a < i) return world.links[static_cast<std::size_t>(a)].length;
  if (a == i) return 0.5 * world.links[static_cast<std::size_t>(a)].length;
  return 0.0;
}

/// Absolute link angles θ = L q with L lower-triangular ones.
Vector absolute_angles(const Vector& q) {
  Vector theta(q.size());
  double acc = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i) theta(i) = (acc += q(i));
  return theta;
}

/// Lᵀ y: suffix sums.
Vector to_joint_space(const Vector& y) {
  Vector out(y.size());
  double acc = 0.0;
  for (Eigen::Index i = y.size() - 1; i >= 0; --i) out(i) = (acc += y(i));
  return out;
}

/// K_ab = Σ_i m_i c_a^(i) c_b^(i) + δ_ab I_a, the constant part of the
/// absolute-angle inertia H_ab = K_ab cos(θ_a − θ_b).
Matrix coupling_constants(const ArmWorld& world) {
  const Eigen::Index k = world.joint_count();
  Matrix out = Matrix::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double m = world.links[static_cast<std::size_t>(i)].mass;
    for (Eigen::Index a = 0; a <= i; ++a) {
      for (Eigen::Index b = 0; b <= i; ++b) out(a, b) += m * lever(world, a, i) * lever(world, b, i);
    }
    out(i, i) += world.links[static_cast<std::size_t>(i)].inertia;
  }
  return out;
}

void check_size(const Vector& v, Eigen::Index k, const char* what) {
  if (v.size() != k) throw Error(std::string(what) + " has the wrong length");
}

}  // namespace

Eigen::Index ArmWorld::step_count() const {
  return static_cast<Eigen::Index>(std::llround(sim_duration / timestep));
}

void ArmWorld::validate() const {
  const Eigen::Index k = joint_count();
  if (k < 1) throw Error("arm needs at least one link");
  for (const auto& l : links) {
    if (!(l.length > 0.0) || !(l.mass > 0.0) || l.inertia < 0.0) throw Error("link lengths and masses must be positive");
  }
  if (!(timestep > 0.0)) throw Error("timestep must be positive");
  if (!(sim_duration >= timestep)) throw Error("sim_duration must be at least one timestep");
  check_size(kp, k, "kp");
  check_size(kd, k, "kd");
  check_size(start_posture, k, "start_posture");
  if (knots_per_joint < 1) throw Error("knots_per_joint must be at least 1");
  if (torque_noise_multiplicative < 0 || torque_noise_additive < 0 || release_time_std < 0) {
    throw Error("noise standard deviations must be non-negative");
  }
}

Matrix arm_mass_matrix(const ArmWorld& world, const Vector& angles) {
  const Eigen::Index k = world.joint_count();
  check_size(angles, k, "angles");
  const Vector theta = absolute_angles(angles);
  const Matrix kc = coupling_constants(world);
  Matrix h(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = 0; b < k; ++b) h(a, b) = kc(a, b) * std::cos(theta(a) - theta(b));
  }
  // M = Lᵀ H L.
  Matrix hl(k, k);
  for (Eigen::Index c = 0; c < k; ++c) hl.col(c) = h.rightCols(k - c).rowwise().sum();
  Matrix m(k, k);
  for (Eigen::Index r = 0; r < k; ++r) m.row(r) = hl.bottomRows(k - r).colwise().sum();
  return 0.5 * (m + m.transpose());
}

Vector arm_gravity(const ArmWorld& world, const Vector& angles) {
  const Eigen::Index k = world.joint_count();
  check_size(angles, k, "angles");
  const Vector theta = absolute_angles(angles);
  Vector dv(k);
  for (Eigen::Index a = 0; a < k; ++a) {
    double moment = 0.0;
    for (Eigen::Index i = a; i < k; ++i) moment += world.links[static_cast<std::size_t>(i)].mass * lever(world, a, i);
    dv(a) = world.gravity * moment * std::cos(theta(a));
  }
  return -to_joint_space(dv);
}

Vector arm_coriolis(const ArmWorld& world, const Vector& angles, const Vector& velocities) {
  const Eigen::Index k = world.joint_count();
  check_size(angles, k, "angles");
  check_size(velocities, k, "velocities");
  const Vector theta = absolute_angles(angles);
  const Vector omega = absolute_angles(velocities);
  const Matrix kc = coupling_constants(world);
  Vector h = Vector::Zero(k);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = 0; b < k; ++b) h(a) += kc(a, b) * std::sin(theta(a) - theta(b)) * omega(b) * omega(b);
  }
  return -to_joint_space(h);
}

Vector arm_dynamics(const ArmWorld& world, const ArmState& state, const Vector& torques) {
  check_size(torques, world.joint_count(), "torques");
  const Matrix m = arm_mass_matrix(world, state.angles);
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) throw Error("mass matrix is not positive definite");
  const Vector rhs = torques + arm_gravity(world, state.angles) + arm_coriolis(world, state.angles, state.velocities);
  return llt.solve(rhs);
}

ArmState rk4_step(const ArmWorld& world, const ArmState& s, const Vector& torques, double dt) {
  auto accel = [&](const Vector& x, const Vector& v) { return arm_dynamics(world, ArmState{x, v, 0.0}, torques); };
  const Vector k1x = s.velocities;
  const Vector k1v = accel(s.angles, s.velocities);
  const Vector k2x = s.velocities + 0.5 * dt * k1v;
  const Vector k2v = accel(s.angles + 0.5 * dt * k1x, k2x);
  const Vector k3x = s.velocities + 0.5 * dt * k2v;
  const Vector k3v = accel(s.angles + 0.5 * dt * k2x, k3x);
  const Vector k4x = s.velocities + dt * k3v;
  const Vector k4v = accel(s.angles + dt * k3x, k4x);
  ArmState out;
  out.angles = s.angles + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
  out.velocities = s.velocities + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
  out.time = s.time + dt;
  return out;
}

double arm_kinetic_energy(const ArmWorld& world, const ArmState& state) {
  return 0.5 * state.velocities.dot(arm_mass_matrix(world, state.angles) * state.velocities);
}

double arm_potential_energy(const ArmWorld& world, const Vector& angles) {
  const Vector theta = absolute_angles(angles);
  double energy = 0.0;
  for (Eigen::Index i = 0; i < world.joint_count(); ++i) {
    double height = 0.0;
    for (Eigen::Index a = 0; a <= i; ++a) height += lever(world, a, i) * std::sin(theta(a));
    energy += world.links[static_cast<std::size_t>(i)].mass * world.gravity * height;
  }
  return energy;
}

Eigen::Vector2d fingertip_position(const ArmWorld& world, const Vector& angles) {
  const Vector theta = absolute_angles(angles);
  Eigen::Vector2d p = world.shoulder_position;
  for (Eigen::Index a = 0; a < world.joint_count(); ++a) {
    const double l = world.links[static_cast<std::size_t>(a)].length;
    p += l * Eigen::Vector2d(std::cos(theta(a)), std::sin(theta(a)));
  }
  return p;
}

Eigen::Vector2d fingertip_velocity(const ArmWorld& world, const Vector& angles, const Vector& velocities) {
  const Vector theta = absolute_angles(angles);
  const Vector omega = absolute_angles(velocities);
  Eigen::Vector2d v = Eigen::Vector2d::Zero();
  for (Eigen::Index a = 0; a < world.joint_count(); ++a) {
    const double l = world.links[static_cast<std::size_t>(a)].length;
    v += l * omega(a) * Eigen::Vector2d(-std::sin(theta(a)), std::cos(theta(a)));
  }
  return v;
}

// ---------------------------------------------------------------------------

KnotSpline::KnotSpline(int knots, double duration)
    : knots_(knots), duration_(duration), spacing_(duration / knots) {
  if (knots < 1 || !(duration > 0.0)) throw Error("spline needs at least one knot and a positive duration");
  const Eigen::Index n = knots + 1;
  const double h = spacing_;
  Matrix a = Matrix::Zero(n, n);
  Matrix r = Matrix::Zero(n, n);  // right-hand side as a linear map of the data
  a(0, 0) = 2.0 * h;
  a(0, 1) = h;
  r(0, 0) = -6.0 / h;
  r(0, 1) = 6.0 / h;
  for (Eigen::Index i = 1; i < n - 1; ++i) {
    a(i, i - 1) = h;
    a(i, i) = 4.0 * h;
    a(i, i + 1) = h;
    r(i, i - 1) = 6.0 / h;
    r(i, i) = -12.0 / h;
    r(i, i + 1) = 6.0 / h;
  }
  a(n - 1, n - 1) = 1.0;
  second_derivatives_ = a.partialPivLu().solve(r);
}

double KnotSpline::interval_value(const Vector& second, const Vector& data, double t, bool derivative) const {
  const double h = spacing_;
  if (t <= 0.0) return derivative ? 0.0 : data(0);
  if (t > duration_) {
    const double end_slope = interval_value(second, data, duration_, true);
    return derivative ? end_slope : data(knots_) + end_slope * (t - duration_);
  }
  const int i = std::min(knots_ - 1, static_cast<int>(t / h));
  const double left = i * h;
  const double right = left + h;
  const double mi = second(i);
  const double mj = second(i + 1);
  const double ci = data(i) / h - mi * h / 6.0;
  const double cj = data(i + 1) / h - mj * h / 6.0;
  if (derivative) {
    return -mi * (right - t) * (right - t) / (2.0 * h) + mj * (t - left) * (t - left) / (2.0 * h) - ci + cj;
  }
  return mi * std::pow(right - t, 3) / (6.0 * h) + mj * std::pow(t - left, 3) / (6.0 * h) + ci * (right - t) +
         cj * (t - left);
}

Vector KnotSpline::basis(double t) const {
  Vector out(knots_ + 1);
  for (int m = 0; m <= knots_; ++m) {
    out(m) = interval_value(second_derivatives_.col(m), Vector::Unit(knots_ + 1, m), t, false);
  }
  return out;
}

Vector KnotSpline::basis_derivative(double t) const {
  Vector out(knots_ + 1);
  for (int m = 0; m <= knots_; ++m) {
    out(m) = interval_value(second_derivatives_.col(m), Vector::Unit(knots_ + 1, m), t, true);
  }
  return out;
}

SplinePolicy::SplinePolicy(const ArmWorld& world) : world_(&world), spline_(world.knots_per_joint, world.sim_duration) {}

DesiredMotion SplinePolicy::desired(const Vector& policy, double t) const {
  const Eigen::Index k = world_->joint_count();
  const int knots = world_->knots_per_joint;
  check_size(policy, world_->policy_dim(), "policy");
  const Vector b = spline_.basis(t);
  const Vector db = spline_.basis_derivative(t);
  DesiredMotion out{Vector(k), Vector(k)};
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto knot_values = policy.segment(j * knots, knots);
    out.angles(j) = world_->start_posture(j) * b(0) + b.tail(knots).dot(knot_values);
    out.velocities(j) = world_->start_posture(j) * db(0) + db.tail(knots).dot(knot_values);
  }
  return out;
}

Vector SplinePolicy::commanded_torque(const Vector& policy, const ArmState& sensed) const {
  const DesiredMotion target = desired(policy, sensed.time);
  return world_->kp.cwiseProduct(target.angles - sensed.angles) +
         world_->kd.cwiseProduct(target.velocities - sensed.velocities);
}

// ---------------------------------------------------------------------------

DartRollout simulate_dart(const ArmWorld& world, const Vector& policy, Rng& rng) {
  world.validate();
  check_size(policy, world.policy_dim(), "policy");
  if (!policy.allFinite()) throw Error("policy knots must be finite");
  const Eigen::Index k = world.joint_count();
  const Eigen::Index window = world.step_count();
  const double dt = world.timestep;
  const SplinePolicy controller(world);

  DartRollout out;
  const double release_offset = world.release_time_std * standard_normal(rng);
  out.release_time = std::max(dt, world.sim_duration + release_offset);
  const Eigen::Index release_step = static_cast<Eigen::Index>(std::floor(out.release_time / dt));
  const Eigen::Index total_steps = std::max(window, release_step + 1);

  ArmState state{world.start_posture, Vector::Zero(k), 0.0};
  out.states.reserve(static_cast<std::size_t>(window + 1));
  out.states.push_back(state);
  bool released = false;
  for (Eigen::Index step = 0; step < total_steps; ++step) {
    const Vector command = controller.commanded_torque(policy, state);
    Vector applied(k);
    for (Eigen::Index j = 0; j < k; ++j) {
      const double mult = world.torque_noise_multiplicative * standard_normal(rng);
      const double add = world.torque_noise_additive * standard_normal(rng);
      applied(j) = command(j) * (1.0 + mult) + add;
    }
    if (step < window) out.commanded_torques.push_back(command);
    try {
      if (!released && step == release_step) {
        const double partial = out.release_time - static_cast<double>(step) * dt;
        const ArmState at_release = partial > 0.0 ? rk4_step(world, state, applied, partial) : state;
        if (!at_release.angles.allFinite() || !at_release.velocities.allFinite()) throw Error("non-finite state");
        out.release_position = fingertip_position(world, at_release.angles);
        out.release_velocity = fingertip_velocity(world, at_release.angles, at_release.velocities);
        released = true;
      }
      state = rk4_step(world, state, applied, dt);
      state.time = static_cast<double>(step + 1) * dt;
      if (!state.angles.allFinite() || !state.velocities.allFinite()) throw Error("non-finite state");
    } catch (const Error&) {
      out.flagged = true;
      out.score = kFailedTrialPenalty;
      while (out.states.size() < static_cast<std::size_t>(window + 1)) out.states.push_back(out.states.back());
      while (out.commanded_torques.size() < static_cast<std::size_t>(window)) out.commanded_torques.push_back(Vector::Zero(k));
      return out;
    }
    if (step < window) out.states.push_back(state);
  }

  const double wall = world.target_position.x();
  const double vx = out.release_velocity.x();
  if (!(vx > 1e-3) || out.release_position.x() >= wall) {
    out.flagged = true;
    out.score = kFailedTrialPenalty;
    return out;
  }
  const double flight = (wall - out.release_position.x()) / vx;
  const double height = out.release_position.y() + out.release_velocity.y() * flight - 0.5 * world.gravity * flight * flight;
  out.vertical_miss = height - world.target_position.y();
  out.score = -out.vertical_miss * out.vertical_miss;
  return out;
}

Vector pack_dart_sensors(const DartRollout& rollout) {
  const Eigen::Index k = rollout.states.front().angles.size();
  const Eigen::Index count = static_cast<Eigen::Index>(rollout.states.size());
  Vector raw(count * 2 * k + 1);
  for (Eigen::Index i = 0; i < count; ++i) {
    const ArmState& s = rollout.states[static_cast<std::size_t>(i)];
    raw.segment(i * 2 * k, k) = s.angles;
    raw.segment(i * 2 * k + k, k) = s.velocities;
  }
  raw(raw.size() - 1) = rollout.release_time;
  return raw;
}

std::vector<ArmState> unpack_dart_states(const Vector& raw, Eigen::Index joints, double timestep) {
  if (joints < 1 || raw.size() < 1 || (raw.size() - 1) % (2 * joints) != 0) {
    throw Error("dart sensor payload has an unexpected length");
  }
  const Eigen::Index count = (raw.size() - 1) / (2 * joints);
  std::vector<ArmState> states;
  states.reserve(static_cast<std::size_t>(count));
  for (Eigen::Index i = 0; i < count; ++i) {
    states.push_back(ArmState{raw.segment(i * 2 * joints, joints), raw.segment(i * 2 * joints + joints, joints),
                              static_cast<double>(i) * timestep});
  }
  return states;
}

TrialRecord dart_trial(const ArmWorld& world, const Vector& policy, Rng& rng) {
  const DartRollout rollout = simulate_dart(world, policy, rng);
  TrialRecord rec;
  rec.policy = policy;
  rec.raw_sensors = pack_dart_sensors(rollout);
  rec.score = rollout.score;
  rec.flagged = rollout.flagged;
  return rec;
}

}  // namespace sensorgrad
