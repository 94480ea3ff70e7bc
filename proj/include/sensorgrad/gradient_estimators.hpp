#pragma once

#include <optional>
#include <vector>

#include "sensorgrad/regression.hpp"

namespace sensorgrad {

/// One policy execution.
struct TrialRecord {
  Vector policy;
  /// Everything the agent sensed, in the environment's payload layout.
  Vector raw_sensors;
  /// Sensor vector handed to the estimators, when the environment provides one.
  std::optional<Vector> encoded_sensors;
  double score = 0.0;
  /// Set for failed trials (non-finite simulation, dart never reaching the
  /// wall). Flagged trials carry a penalty score and are kept out of batches.
  bool flagged = false;
};

/// Trials of one hill-climbing step together with their exploration law.
struct TrialBatch {
  Vector nominal_policy;
  Matrix exploration_cov;
  std::vector<TrialRecord> trials;

  std::size_t size() const { return trials.size(); }
  Eigen::Index policy_dim() const;
  /// Encoded sensor dimension; throws when any trial lacks encoded sensors
  /// or the dimensions disagree.
  Eigen::Index sensor_dim() const;

  Matrix policies() const;
  Matrix encoded_sensors() const;
  Matrix raw_sensors() const;
  Vector scores() const;
};

struct GradientEstimate {
  Vector gradient;
  std::optional<Vector> sensor_coefficients;
  double offset = 0.0;
  std::optional<Matrix> predicted_variance;
  /// Residual mean square with n − d − d_s − 1 degrees of freedom; absent
  /// when the fit leaves no residual degrees of freedom.
  std::optional<double> residual_variance;
};

/// Noise parameters of the linear-Gaussian score model.
struct NoiseSpec {
  double output_variance = 0.0;
  Matrix sensor_cov;
  Vector sensor_mean;
  /// d × d_s; sensors are drawn around couplingᵀπ + coupling_offset + sensor_mean.
  Matrix policy_sensor_coupling;
  Vector coupling_offset;

  Eigen::Index sensor_dim() const { return sensor_cov.rows(); }
  void validate(Eigen::Index policy_dim) const;
};

/// Known noise model used to attach predicted variances to estimates.
struct KnownNoise {
  NoiseSpec spec;
  Vector sensor_slope;
};

/// Sample count entering the variance laws for a batch of n centered trials.
/// Centering spends one degree of freedom, so the design Gram matrix is
/// Wishart with n − 1 degrees of freedom.
inline double effective_samples(std::size_t batch_size) {
  return static_cast<double>(batch_size) - 1.0;
}

GradientEstimate estimate_g1(const TrialBatch& batch);
GradientEstimate estimate_g1(const TrialBatch& batch, const KnownNoise& noise);

GradientEstimate estimate_g2(const TrialBatch& batch);
GradientEstimate estimate_g2(const TrialBatch& batch, const KnownNoise& noise);

/// Matrix-level forms shared with the encoding search. `sensors` may have
/// zero columns, in which case g2 coincides with g1.
GradientEstimate fit_g1(const Matrix& policies, const Vector& scores);
GradientEstimate fit_g2(const Matrix& policies, const Matrix& sensors, const Vector& scores);

/// Σ_e⁻¹ (A_sᵀ Σ_s A_s + σ²) / (N − d − 1).
Matrix predicted_variance_g1(const Matrix& exploration_cov, const NoiseSpec& spec,
                             const Vector& sensor_slope, double samples, Eigen::Index d);

/// Σ_e⁻¹ σ² / (N − d − d_s − 1).
Matrix predicted_variance_g2(const Matrix& exploration_cov, double output_variance, double samples,
                             Eigen::Index d, Eigen::Index ds);

/// A_{π,s} A_s: how far g2 falls short of the value gradient when the
/// sensors depend on the policy.
Vector predicted_bias_g2(const NoiseSpec& spec, const Vector& sensor_slope);

/// (Σ_e − D)⁻¹ σ² / (N − d − d_s − 1) with Σ_es = Σ_e A_{π,s} and
/// D = Σ_es (A_{π,s}ᵀ Σ_e A_{π,s} + Σ_s)⁻¹ Σ_esᵀ.
Matrix predicted_variance_g2_correlated(const Matrix& exploration_cov, const NoiseSpec& spec,
                                        double samples, Eigen::Index d, Eigen::Index ds);

}  // namespace sensorgrad
