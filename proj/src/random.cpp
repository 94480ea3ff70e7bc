#include "sensorgrad/random.hpp"

namespace sensorgrad {

Matrix psd_factor(const Matrix& cov) {
  if (cov.rows() != cov.cols()) throw Error("covariance must be square");
  if (cov.size() == 0) return Matrix(0, 0);
  const Matrix sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  const Vector& values = eig.eigenvalues();
  const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
  if (values.minCoeff() < -1e-10 * scale) throw Error("covariance is not positive semidefinite");
  const Vector roots = values.cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal();
}

}  // namespace sensorgrad
