#include "sensorgrad/gradient_estimators.hpp"

#include <string>

namespace sensorgrad {

namespace {

Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

Matrix spd_inverse(const Matrix& m, const char* what) {
  Eigen::LLT<Matrix> llt(symmetrized(m));
  if (llt.info() != Eigen::Success) throw Error(std::string(what) + " is not positive definite");
  return symmetrized(llt.solve(Matrix::Identity(m.rows(), m.cols())));
}

void require_square(const Matrix& m, Eigen::Index n, const char* what) {
  if (m.rows() != n || m.cols() != n) {
    throw Error(std::string(what) + " must be " + std::to_string(n) + "x" + std::to_string(n));
  }
}

GradientEstimate from_fit(const OlsFit& fit, Eigen::Index d, bool with_sensors) {
  GradientEstimate est;
  est.gradient = fit.coefficients.head(d);
  if (with_sensors) est.sensor_coefficients = fit.coefficients.tail(fit.coefficients.size() - d);
  est.offset = fit.intercept();
  const Eigen::Index dof = fit.residuals.size() - fit.coefficients.size() - 1;
  if (dof > 0) est.residual_variance = fit.residual_sum_of_squares() / static_cast<double>(dof);
  return est;
}

}  // namespace

Eigen::Index TrialBatch::policy_dim() const {
  if (trials.empty()) throw RegressionError("empty batch");
  return trials.front().policy.size();
}

Eigen::Index TrialBatch::sensor_dim() const {
  if (trials.empty()) throw RegressionError("empty batch");
  Eigen::Index ds = -1;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const auto& s = trials[i].encoded_sensors;
    if (!s) throw RegressionError("trial " + std::to_string(i) + " has no encoded sensors");
    if (ds < 0) ds = s->size();
    if (s->size() != ds) throw RegressionError("encoded sensor dimension differs at trial " + std::to_string(i));
  }
  return ds;
}

Matrix TrialBatch::policies() const {
  const Eigen::Index d = policy_dim();
  Matrix out(static_cast<Eigen::Index>(trials.size()), d);
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (trials[i].policy.size() != d) throw RegressionError("policy dimension differs at trial " + std::to_string(i));
    out.row(static_cast<Eigen::Index>(i)) = trials[i].policy.transpose();
  }
  return out;
}

Matrix TrialBatch::encoded_sensors() const {
  const Eigen::Index ds = sensor_dim();
  Matrix out(static_cast<Eigen::Index>(trials.size()), ds);
  for (std::size_t i = 0; i < trials.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = trials[i].encoded_sensors->transpose();
  return out;
}

Matrix TrialBatch::raw_sensors() const {
  if (trials.empty()) throw RegressionError("empty batch");
  const Eigen::Index dr = trials.front().raw_sensors.size();
  Matrix out(static_cast<Eigen::Index>(trials.size()), dr);
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (trials[i].raw_sensors.size() != dr) throw RegressionError("raw sensor length differs at trial " + std::to_string(i));
    out.row(static_cast<Eigen::Index>(i)) = trials[i].raw_sensors.transpose();
  }
  return out;
}

Vector TrialBatch::scores() const {
  Vector out(static_cast<Eigen::Index>(trials.size()));
  for (std::size_t i = 0; i < trials.size(); ++i) out(static_cast<Eigen::Index>(i)) = trials[i].score;
  return out;
}

void NoiseSpec::validate(Eigen::Index policy_dim) const {
  const Eigen::Index ds = sensor_cov.rows();
  if (output_variance < 0.0) throw Error("output variance must be non-negative");
  require_square(sensor_cov, ds, "sensor covariance");
  if (sensor_mean.size() != ds) throw Error("sensor mean has the wrong length");
  if (policy_sensor_coupling.rows() != policy_dim || policy_sensor_coupling.cols() != ds) {
    throw Error("policy-sensor coupling must be d x d_s");
  }
  if (coupling_offset.size() != ds) throw Error("coupling offset has the wrong length");
}

GradientEstimate fit_g1(const Matrix& policies, const Vector& scores) {
  try {
    return from_fit(ols(policies, scores), policies.cols(), false);
  } catch (const RegressionError& e) {
    if (std::string(e.what()) == "rank deficient design") throw RegressionError("degenerate exploration");
    throw;
  }
}

GradientEstimate fit_g2(const Matrix& policies, const Matrix& sensors, const Vector& scores) {
  if (sensors.rows() != policies.rows()) throw RegressionError("sensor and policy row counts differ");
  Matrix joint(policies.rows(), policies.cols() + sensors.cols());
  joint << policies, sensors;
  return from_fit(ols(joint, scores), policies.cols(), true);
}

GradientEstimate estimate_g1(const TrialBatch& batch) {
  const Eigen::Index d = batch.policy_dim();
  if (static_cast<Eigen::Index>(batch.size()) < d + 2) throw RegressionError("insufficient samples");
  return fit_g1(batch.policies(), batch.scores());
}

GradientEstimate estimate_g1(const TrialBatch& batch, const KnownNoise& noise) {
  GradientEstimate est = estimate_g1(batch);
  est.predicted_variance = predicted_variance_g1(batch.exploration_cov, noise.spec, noise.sensor_slope,
                                                 effective_samples(batch.size()), batch.policy_dim());
  return est;
}

GradientEstimate estimate_g2(const TrialBatch& batch) {
  const Eigen::Index d = batch.policy_dim();
  const Eigen::Index ds = batch.sensor_dim();
  if (static_cast<Eigen::Index>(batch.size()) < d + ds + 2) throw RegressionError("insufficient samples");
  return fit_g2(batch.policies(), batch.encoded_sensors(), batch.scores());
}

GradientEstimate estimate_g2(const TrialBatch& batch, const KnownNoise& noise) {
  GradientEstimate est = estimate_g2(batch);
  const Eigen::Index d = batch.policy_dim();
  const Eigen::Index ds = batch.sensor_dim();
  const double samples = effective_samples(batch.size());
  if (noise.spec.policy_sensor_coupling.size() > 0 && !noise.spec.policy_sensor_coupling.isZero(0.0)) {
    est.predicted_variance = predicted_variance_g2_correlated(batch.exploration_cov, noise.spec, samples, d, ds);
  } else {
    est.predicted_variance = predicted_variance_g2(batch.exploration_cov, noise.spec.output_variance, samples, d, ds);
  }
  return est;
}

Matrix predicted_variance_g1(const Matrix& exploration_cov, const NoiseSpec& spec, const Vector& sensor_slope,
                             double samples, Eigen::Index d) {
  require_square(exploration_cov, d, "exploration covariance");
  if (samples <= static_cast<double>(d) + 1.0) throw Error("variance undefined");
  if (sensor_slope.size() != spec.sensor_cov.rows()) throw Error("sensor slope does not match sensor covariance");
  const double explained = sensor_slope.size() > 0 ? sensor_slope.dot(spec.sensor_cov * sensor_slope) : 0.0;
  const double noise = explained + spec.output_variance;
  return symmetrized(spd_inverse(exploration_cov, "exploration covariance") * noise /
                     (samples - static_cast<double>(d) - 1.0));
}

Matrix predicted_variance_g2(const Matrix& exploration_cov, double output_variance, double samples,
                             Eigen::Index d, Eigen::Index ds) {
  require_square(exploration_cov, d, "exploration covariance");
  const double denom = samples - static_cast<double>(d + ds) - 1.0;
  if (denom <= 0.0) throw Error("variance undefined");
  return symmetrized(spd_inverse(exploration_cov, "exploration covariance") * output_variance / denom);
}

Vector predicted_bias_g2(const NoiseSpec& spec, const Vector& sensor_slope) {
  if (spec.policy_sensor_coupling.cols() != sensor_slope.size()) {
    throw Error("dimension mismatch between coupling and sensor slope");
  }
  return spec.policy_sensor_coupling * sensor_slope;
}

Matrix predicted_variance_g2_correlated(const Matrix& exploration_cov, const NoiseSpec& spec, double samples,
                                        Eigen::Index d, Eigen::Index ds) {
  require_square(exploration_cov, d, "exploration covariance");
  const double denom = samples - static_cast<double>(d + ds) - 1.0;
  if (denom <= 0.0) throw Error("variance undefined");
  const Matrix& coupling = spec.policy_sensor_coupling;
  if (coupling.rows() != d || coupling.cols() != ds || spec.sensor_cov.rows() != ds) {
    throw Error("dimension mismatch in correlated noise spec");
  }
  const Matrix cross = exploration_cov * coupling;
  const Matrix sensor_marginal = coupling.transpose() * exploration_cov * coupling + spec.sensor_cov;
  Matrix reduction = Matrix::Zero(d, d);
  if (ds > 0) reduction = cross * spd_inverse(sensor_marginal, "sensor marginal covariance") * cross.transpose();
  const Matrix schur = symmetrized(exploration_cov - reduction);
  Eigen::LLT<Matrix> llt(schur);
  if (llt.info() != Eigen::Success) throw Error("degenerate coupling");
  const Matrix inv = llt.solve(Matrix::Identity(d, d));
  return symmetrized(inv * spec.output_variance / denom);
}

}  // namespace sensorgrad
