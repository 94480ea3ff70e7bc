#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sensorgrad/gradient_estimators.hpp"

namespace sensorgrad {

/// Linear map from raw sensor payloads to a low-dimensional encoding:
/// encoded = rawᵀ basis. Columns are orthonormal after a search.
struct SensorProjection {
  Matrix basis;  // d_s_raw × d_s
  /// Column norms of the optimizer's iterate before normalization.
  Vector column_norms;

  Eigen::Index raw_dim() const { return basis.rows(); }
  Eigen::Index encoded_dim() const { return basis.cols(); }
  static SensorProjection identity(Eigen::Index dim);
};

struct EncodingSearchConfig {
  Eigen::Index target_dim = 1;
  int max_iterations = 100;
  /// Step of the central finite differences of the LOO cost.
  double gradient_step = 1e-4;
  /// Random orthonormal initializations tried in addition to the PCA start.
  int restarts = 5;
  std::uint64_t seed = 0;
  /// Replaces the PCA start when present (d_s_raw × target_dim).
  std::optional<Matrix> warm_start;

  void validate() const;
};

struct RestartTrace {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  /// Cost after each accepted quasi-Newton iteration.
  std::vector<double> costs;
  bool failed = false;
};

struct EncodingSearchResult {
  SensorProjection projection;
  std::size_t best_restart = 0;
  std::vector<RestartTrace> restarts;

  double initial_cost() const { return restarts[best_restart].initial_cost; }
  double final_cost() const { return restarts[best_restart].final_cost; }
  std::size_t iterations_performed() const;
};

/// Sum over trials of the squared error in predicting trial i's score from a
/// sensor-augmented fit on the other n − 1 trials. Uses the closed-form
/// leave-one-out residual e_i / (1 − h_ii) of the full affine fit.
/// Requires n ≥ d + d_s + 2, so each held-out fit is at least square.
double loo_cost(const Matrix& policies, const Matrix& raw_sensors, const Vector& scores, const Matrix& basis);
double loo_cost(const TrialBatch& batch, const SensorProjection& projection);

/// Quasi-Newton (BFGS, finite-difference gradients) search for the
/// projection minimizing loo_cost, over several starts.
EncodingSearchResult search_projection(const Matrix& policies, const Matrix& raw_sensors, const Vector& scores,
                                       const EncodingSearchConfig& config);
EncodingSearchResult search_projection(const TrialBatch& batch, const EncodingSearchConfig& config);
SensorProjection optimize_projection(const TrialBatch& batch, const EncodingSearchConfig& config);

/// estimate_g2 on the batch with encoded sensors replaced by raw · basis.
GradientEstimate estimate_gradient_encoded(const TrialBatch& batch, const SensorProjection& projection);

/// Copy of `batch` whose encoded sensors are raw_sensors · basis.
TrialBatch encode_batch(const TrialBatch& batch, const SensorProjection& projection);

}  // namespace sensorgrad
