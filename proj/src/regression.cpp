#include "sensorgrad/regression.hpp"

#include <cmath>

namespace sensorgrad {

CenteredColumns center_columns(const Matrix& x) {
  if (x.rows() == 0) throw RegressionError("empty batch");
  CenteredColumns out;
  out.means = x.colwise().mean().transpose();
  out.centered = x.rowwise() - out.means.transpose();
  return out;
}

bool is_rank_deficient(const Eigen::JacobiSVD<Matrix>& svd) {
  const Vector& sv = svd.singularValues();
  if (sv.size() == 0) return false;
  const double largest = sv(0);
  const double smallest = sv(sv.size() - 1);
  if (!(largest > 0.0) || !(smallest > 0.0)) return true;
  return largest / smallest > kRankConditionLimit;
}

double OlsFit::predict(const Eigen::Ref<const Vector>& x) const {
  return (x - column_means_x).dot(coefficients) + mean_y;
}

double OlsFit::intercept() const { return mean_y - column_means_x.dot(coefficients); }

OlsFit ols(const Matrix& x, const Vector& y) {
  if (x.rows() != y.size()) throw RegressionError("row count mismatch between design and response");
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  if (n == 0) throw RegressionError("empty batch");
  if (n < p + 1) throw RegressionError("insufficient samples");
  require_finite(x, "design");
  require_finite(y, "response");

  CenteredColumns cx = center_columns(x);
  OlsFit fit;
  fit.column_means_x = std::move(cx.means);
  fit.mean_y = y.mean();
  const Vector yc = y.array() - fit.mean_y;

  if (p == 0) {
    fit.coefficients = Vector(0);
    fit.residuals = yc;
    return fit;
  }
  Eigen::JacobiSVD<Matrix> svd(cx.centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (is_rank_deficient(svd)) throw RegressionError("rank deficient design");
  fit.coefficients = svd.solve(yc);
  fit.residuals = yc - cx.centered * fit.coefficients;
  return fit;
}

Matrix least_squares(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows()) throw RegressionError("row count mismatch between design and response");
  if (x.rows() < x.cols()) throw RegressionError("insufficient samples");
  require_finite(x, "design");
  require_finite(y, "response");
  Eigen::JacobiSVD<Matrix> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (is_rank_deficient(svd)) throw RegressionError("rank deficient design");
  return svd.solve(y);
}

Vector quad_features(const Eigen::Ref<const Vector>& x) {
  const Eigen::Index k = x.size();
  Vector aug(k + 1);
  aug(0) = 1.0;
  aug.tail(k) = x;
  Vector out(static_cast<Eigen::Index>(quad_feature_count(static_cast<std::size_t>(k))));
  Eigen::Index idx = 0;
  for (Eigen::Index i = 0; i <= k; ++i) {
    for (Eigen::Index j = i; j <= k; ++j) out(idx++) = aug(i) * aug(j);
  }
  return out;
}

Vector vec_mat(const Matrix& m) {
  Vector out(m.size());
  Eigen::Index idx = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out(idx++) = m(r, c);
  }
  return out;
}

Matrix resh(const Eigen::Ref<const Vector>& v, Eigen::Index rows, Eigen::Index cols) {
  if (rows < 0 || cols < 0 || v.size() != rows * cols) throw Error("length mismatch");
  Matrix out(rows, cols);
  Eigen::Index idx = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = v(idx++);
  }
  return out;
}

Matrix drop_row(const Matrix& m, Eigen::Index skip) {
  Matrix out(m.rows() - 1, m.cols());
  Eigen::Index dst = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (r != skip) out.row(dst++) = m.row(r);
  }
  return out;
}

Vector drop_entry(const Vector& v, Eigen::Index skip) {
  Vector out(v.size() - 1);
  Eigen::Index dst = 0;
  for (Eigen::Index r = 0; r < v.size(); ++r) {
    if (r != skip) out(dst++) = v(r);
  }
  return out;
}

void require_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw RegressionError("non-finite entry in " + what);
}

}  // namespace sensorgrad
