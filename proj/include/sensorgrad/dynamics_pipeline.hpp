#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "sensorgrad/arm.hpp"
#include "sensorgrad/gradient_estimators.hpp"

namespace sensorgrad {

/// Quadratic-feature regression model of the arm's joint-space dynamics:
///   vec(m⁻¹)   ≈ A_Mᵀ φ(x)
///   vec(m⁻¹g)  ≈ A_Gᵀ φ(x)
///   vec(m⁻¹c)  ≈ A_Cᵀ φ([x; v])
struct DynamicsModel {
  Eigen::Index joints = 0;
  Matrix inverse_mass;   // A_M: (k+1)(k+2)/2 × k²
  Matrix gravity;        // A_G: (k+1)(k+2)/2 × k
  Matrix coriolis;       // A_C: (2k+1)(2k+2)/2 × k

  Eigen::Index state_feature_dim() const { return static_cast<Eigen::Index>(quad_feature_count(static_cast<std::size_t>(joints))); }
  Eigen::Index motion_feature_dim() const { return static_cast<Eigen::Index>(quad_feature_count(static_cast<std::size_t>(2 * joints))); }
  void validate() const;
};

/// Where pretraining rollouts draw their policies from.
struct PretrainingConfig {
  Vector nominal_policy;
  Matrix exploration_cov;
  std::size_t rollouts = 40;
};

struct StateSample {
  Vector angles;
  Vector velocities;
};

/// Runs random policies from the exploration distribution and subsamples
/// `count` visited states uniformly over all recorded timesteps.
std::vector<StateSample> sample_pretraining_states(const ArmWorld& world, const PretrainingConfig& config,
                                                   std::size_t count, Rng& rng);

/// Regresses the simulator's exact m⁻¹, m⁻¹g and m⁻¹c on quadratic features.
/// Throws "insufficient state diversity" when a feature design loses rank.
DynamicsModel fit_dynamics_model(const ArmWorld& world, const std::vector<StateSample>& states);

Vector predict_acceleration(const DynamicsModel& model, const Vector& torques, const Vector& angles,
                            const Vector& velocities);

/// Predicted acceleration from (commanded torque, angles, velocities).
using AccelerationPredictor = std::function<Vector(const Vector&, const Vector&, const Vector&)>;

/// Per-timestep velocity prediction errors, entries 1…T of a trajectory.
struct ResidualCurve {
  std::vector<Vector> residuals;
  double timestep = 0.0;
};

/// residual(t) = v(t) − [v(t−1) + â(τ(t−1), x(t−1), v(t−1)) Δt]. `torques`
/// holds the commanded torque at each of the first T states.
ResidualCurve velocity_residuals(const AccelerationPredictor& predictor, const std::vector<ArmState>& trajectory,
                                 const std::vector<Vector>& torques, double timestep);
ResidualCurve velocity_residuals(const DynamicsModel& model, const std::vector<ArmState>& trajectory,
                                 const std::vector<Vector>& torques, double timestep);

/// Policy spline basis (knot functions only, not the start-value function)
/// sampled at the residual timestamps Δt, 2Δt, …, TΔt. Rows are timesteps.
Matrix residual_basis(const ArmWorld& world, std::size_t residual_count);

/// Least-squares coefficients of each joint's residual curve on `basis`,
/// concatenated over joints; `release_time` is appended when given.
Vector project_residuals(const ResidualCurve& curve, const Matrix& basis, std::optional<double> release_time = {});

/// Full sensor encoding of one dart trial: recompute the commanded torques
/// from the policy and sensed states, take velocity residuals under the
/// model and project them on the policy basis, then append the release time.
Vector dart_sensor_features(const ArmWorld& world, const DynamicsModel& model, const Vector& policy,
                            const Vector& raw_sensors);

/// Plain-text matrix dump (see README for the layout).
void save_dynamics_model(const DynamicsModel& model, std::ostream& out);
DynamicsModel load_dynamics_model(std::istream& in);

/// Dart task whose trials carry residual-encoded sensors.
class DartEnvironment final : public Environment {
 public:
  DartEnvironment(ArmWorld world, std::shared_ptr<const DynamicsModel> model);
  std::string name() const override { return "dart"; }
  Eigen::Index policy_dim() const override { return world_.policy_dim(); }
  Eigen::Index sensor_dim() const override { return world_.policy_dim() + 1; }
  TrialRecord run_trial(const Vector& policy, Rng& rng) const override;
  std::unique_ptr<Environment> with_noise_scale(double scale) const override;
  const ArmWorld& world() const { return world_; }
  const DynamicsModel& model() const { return *model_; }

 private:
  ArmWorld world_;
  std::shared_ptr<const DynamicsModel> model_;
  Matrix basis_;
};

}  // namespace sensorgrad
