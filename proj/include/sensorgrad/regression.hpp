#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace sensorgrad {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a regression cannot be solved (too few rows, rank loss).
class RegressionError : public Error {
 public:
  using Error::Error;
};

/// Singular-value ratio above which a design counts as rank deficient.
inline constexpr double kRankConditionLimit = 1e10;

struct CenteredColumns {
  Matrix centered;
  Vector means;
};

/// Subtracts the arithmetic column means. Throws "empty batch" for n = 0.
CenteredColumns center_columns(const Matrix& x);

/// Ordinary least squares of y on X with a separately carried intercept.
/// Both X and y are centered internally; the prediction for a new row x
/// is (x - column_means_x)ᵀ coefficients + mean_y.
struct OlsFit {
  Vector coefficients;
  Vector column_means_x;
  double mean_y = 0.0;
  Vector residuals;

  double predict(const Eigen::Ref<const Vector>& x) const;
  /// Intercept of the affine model: mean_y - column_means_xᵀ coefficients.
  double intercept() const;
  double residual_sum_of_squares() const { return residuals.squaredNorm(); }
};

OlsFit ols(const Matrix& x, const Vector& y);

/// Solves min ‖X A - Y‖ column by column without centering. X must have
/// full column rank by the same singular-value criterion as ols().
Matrix least_squares(const Matrix& x, const Matrix& y);

/// Smallest-to-largest singular value ratio test shared by ols() and
/// least_squares(). Returns true when the columns are numerically dependent.
bool is_rank_deficient(const Eigen::JacobiSVD<Matrix>& svd);

/// triu([1, xᵀ]ᵀ [1, xᵀ]) stacked row by row; length (k+1)(k+2)/2.
Vector quad_features(const Eigen::Ref<const Vector>& x);

constexpr std::size_t quad_feature_count(std::size_t k) {
  return (k + 1) * (k + 2) / 2;
}

/// Row-major flattening, and its inverse.
Vector vec_mat(const Matrix& m);
Matrix resh(const Eigen::Ref<const Vector>& v, Eigen::Index rows, Eigen::Index cols);

/// Copy of rows whose index differs from `skip`.
Matrix drop_row(const Matrix& m, Eigen::Index skip);
Vector drop_entry(const Vector& v, Eigen::Index skip);

/// Throws RegressionError when any entry is NaN or infinite.
void require_finite(const Matrix& m, const std::string& what);

}  // namespace sensorgrad
