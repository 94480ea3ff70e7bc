#include "sensorgrad/stats.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

namespace sensorgrad {

MeanAndError mean_and_error(std::span<const double> values) {
  MeanAndError out;
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    const double n = static_cast<double>(values.size());
    out.standard_error = std::sqrt(ss / (n - 1.0) / n);
  }
  return out;
}

Matrix sample_covariance(const Matrix& samples) {
  if (samples.rows() < 2) throw Error("sample covariance needs at least two rows");
  const Matrix centered = samples.rowwise() - samples.colwise().mean();
  return centered.transpose() * centered / static_cast<double>(samples.rows() - 1);
}

double relative_frobenius_error(const Matrix& estimate, const Matrix& reference) {
  return (estimate - reference).norm() / reference.norm();
}

PairedTest paired_t_test_greater(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("paired test needs equal-length samples");
  PairedTest out;
  out.pairs = a.size();
  if (a.size() < 2) return out;
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
  const MeanAndError me = mean_and_error(diff);
  out.mean_difference = me.mean;
  const double se = *me.standard_error;
  if (se == 0.0) {
    out.t_statistic = me.mean > 0 ? std::numeric_limits<double>::infinity()
                                  : (me.mean < 0 ? -std::numeric_limits<double>::infinity() : 0.0);
    out.p_value = me.mean > 0 ? 0.0 : (me.mean < 0 ? 1.0 : 0.5);
    return out;
  }
  out.t_statistic = me.mean / se;
  boost::math::students_t dist(static_cast<double>(a.size() - 1));
  out.p_value = boost::math::cdf(boost::math::complement(dist, out.t_statistic));
  return out;
}

double correlation(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  if (a.size() != b.size() || a.size() < 2) throw Error("correlation needs two equal-length samples");
  const Vector ac = a.array() - a.mean();
  const Vector bc = b.array() - b.mean();
  const double denom = std::sqrt(ac.squaredNorm() * bc.squaredNorm());
  if (denom == 0.0) return 0.0;
  return ac.dot(bc) / denom;
}

}  // namespace sensorgrad
