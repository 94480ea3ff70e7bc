#pragma once

#include <vector>

#include "sensorgrad/environments.hpp"

namespace sensorgrad {

/// Uniform rigid rod; inertia is taken about the rod's center of mass.
struct Link {
  double length = 0.0;
  double mass = 0.0;
  double inertia = 0.0;

  static Link rod(double length, double mass) { return Link{length, mass, mass * length * length / 12.0}; }
};

/// Planar serial arm in a vertical plane, revolute joints, relative joint
/// angles measured counter-clockwise (joint 0 from the horizontal toward the
/// target wall). Gravity points along −y.
struct ArmWorld {
  std::vector<Link> links = {Link::rod(0.30, 2.0), Link::rod(0.27, 1.3), Link::rod(0.15, 0.5)};
  double gravity = 9.81;
  Vector kp = (Vector(3) << 50.0, 50.0, 5.0).finished();
  Vector kd = (Vector(3) << 5.0, 5.0, 0.5).finished();
  /// Each joint torque becomes τ (1 + ε_m) + ε_a with the standard deviations below.
  double torque_noise_multiplicative = 0.2;
  double torque_noise_additive = 0.5;
  double release_time_std = 0.01;
  double sim_duration = 0.2;
  double timestep = 1e-3;
  Eigen::Vector2d shoulder_position = Eigen::Vector2d::Zero();
  /// Board center; the wall is the vertical line through it.
  Eigen::Vector2d target_position = Eigen::Vector2d(2.44, 0.0);
  /// Fixed posture (and zero velocity) at t = 0.
  Vector start_posture = (Vector(3) << -0.6, 2.2, 0.4).finished();
  int knots_per_joint = 3;

  Eigen::Index joint_count() const { return static_cast<Eigen::Index>(links.size()); }
  Eigen::Index policy_dim() const { return joint_count() * knots_per_joint; }
  /// Number of integration steps covering [0, sim_duration].
  Eigen::Index step_count() const;
  void validate() const;
};

struct ArmState {
  Vector angles;
  Vector velocities;
  double time = 0.0;
};

Matrix arm_mass_matrix(const ArmWorld& world, const Vector& angles);
/// Generalized gravity force g(x) on the right-hand side of m a = τ + g + c.
Vector arm_gravity(const ArmWorld& world, const Vector& angles);
/// Generalized Coriolis/centrifugal force c(x, v) on the right-hand side.
Vector arm_coriolis(const ArmWorld& world, const Vector& angles, const Vector& velocities);
/// Solves m(x) a = τ + g(x) + c(x, v). Throws if m(x) is not positive definite.
Vector arm_dynamics(const ArmWorld& world, const ArmState& state, const Vector& torques);
/// One classical Runge-Kutta step with torques held constant over the step.
ArmState rk4_step(const ArmWorld& world, const ArmState& state, const Vector& torques, double dt);
double arm_kinetic_energy(const ArmWorld& world, const ArmState& state);
double arm_potential_energy(const ArmWorld& world, const Vector& angles);

Eigen::Vector2d fingertip_position(const ArmWorld& world, const Vector& angles);
Eigen::Vector2d fingertip_velocity(const ArmWorld& world, const Vector& angles, const Vector& velocities);

/// Cubic spline through a fixed start value at t = 0 and K knot values at
/// uniformly spaced times up to `duration`; zero slope at the start, zero
/// curvature at the end, linear continuation afterward. The curve is linear
/// in its data, so it is stored as one cardinal basis function per datum.
class KnotSpline {
 public:
  KnotSpline(int knots, double duration);

  int knots() const { return knots_; }
  double duration() const { return duration_; }
  /// Basis values at t: entry 0 multiplies the start value, entry j ≥ 1 knot j.
  Vector basis(double t) const;
  Vector basis_derivative(double t) const;

 private:
  double interval_value(const Vector& second, const Vector& data, double t, bool derivative) const;

  int knots_;
  double duration_;
  double spacing_;
  /// Column m: spline second derivatives at the nodes for unit datum m.
  Matrix second_derivatives_;
};

/// Desired joint angles and velocities of the policy's spline trajectory.
struct DesiredMotion {
  Vector angles;
  Vector velocities;
};

class SplinePolicy {
 public:
  explicit SplinePolicy(const ArmWorld& world);
  DesiredMotion desired(const Vector& policy, double t) const;
  /// Noise-free PD torque for a sensed state.
  Vector commanded_torque(const Vector& policy, const ArmState& sensed) const;
  const KnotSpline& spline() const { return spline_; }

 private:
  const ArmWorld* world_;
  KnotSpline spline_;
};

/// Full record of one simulated throw.
struct DartRollout {
  /// Sensed states at t = 0, Δt, …, sim_duration.
  std::vector<ArmState> states;
  /// Noise-free PD torque computed at each sensed state (one per step).
  std::vector<Vector> commanded_torques;
  double release_time = 0.0;
  Eigen::Vector2d release_position = Eigen::Vector2d::Zero();
  Eigen::Vector2d release_velocity = Eigen::Vector2d::Zero();
  double vertical_miss = 0.0;
  double score = 0.0;
  bool flagged = false;
};

inline constexpr double kFailedTrialPenalty = -1e6;

/// Simulates one throw. The generator supplies the release-time offset
/// first, then per step and joint the multiplicative and additive torque noise.
DartRollout simulate_dart(const ArmWorld& world, const Vector& policy, Rng& rng);

/// Raw sensor payload: for each sensed state the joint angles followed by the
/// joint velocities, then the realized release time as the last entry.
Vector pack_dart_sensors(const DartRollout& rollout);
/// Inverse of pack_dart_sensors for the state part, given the joint count.
std::vector<ArmState> unpack_dart_states(const Vector& raw, Eigen::Index joints, double timestep);

/// Scores a throw; raw_sensors holds the packed payload, encoded sensors are
/// left empty (see DartEnvironment for the residual encoding).
TrialRecord dart_trial(const ArmWorld& world, const Vector& policy, Rng& rng);

}  // namespace sensorgrad
