#pragma once

#include <optional>
#include <span>

#include "sensorgrad/regression.hpp"

namespace sensorgrad {

struct MeanAndError {
  double mean = 0.0;
  /// Standard error of the mean; absent when fewer than two samples.
  std::optional<double> standard_error;
};

MeanAndError mean_and_error(std::span<const double> values);

/// Unbiased sample covariance of the rows of `samples`.
Matrix sample_covariance(const Matrix& samples);

/// ‖estimate − reference‖_F / ‖reference‖_F.
double relative_frobenius_error(const Matrix& estimate, const Matrix& reference);

struct PairedTest {
  double mean_difference = 0.0;
  double t_statistic = 0.0;
  /// One-sided p-value for the alternative mean(a − b) > 0.
  double p_value = 1.0;
  std::size_t pairs = 0;
};

/// Paired one-sided Student t test of a against b.
PairedTest paired_t_test_greater(std::span<const double> a, std::span<const double> b);

/// Pearson sample correlation.
double correlation(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b);

}  // namespace sensorgrad
