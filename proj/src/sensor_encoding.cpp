#include "sensorgrad/sensor_encoding.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "sensorgrad/random.hpp"

namespace sensorgrad {

namespace {

constexpr double kLeverageLimit = 1e-10;
constexpr double kInf = std::numeric_limits<double>::infinity();

Matrix orthonormal_columns(const Matrix& m) {
  if (m.cols() == 0) return m;
  Eigen::HouseholderQR<Matrix> qr(m);
  Matrix q = qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
  // Fix signs so that the result does not depend on Householder conventions.
  const Matrix r = qr.matrixQR().topRows(m.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index c = 0; c < q.cols(); ++c) {
    if (r(c, c) < 0) q.col(c) *= -1.0;
  }
  return q;
}

/// LOO cost on an already-assembled design.
double loo_cost_of_design(const Matrix& design, const Vector& scores) {
  const Eigen::Index n = design.rows();
  const Eigen::Index p = design.cols();
  if (n < p + 2) throw RegressionError("insufficient samples for leave-one-out");
  require_finite(design, "design");
  const Matrix centered = design.rowwise() - design.colwise().mean();
  const Vector yc = scores.array() - scores.mean();
  Vector residuals = yc;
  Vector leverage = Vector::Constant(n, 1.0 / static_cast<double>(n));
  if (p > 0) {
    Eigen::JacobiSVD<Matrix> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (is_rank_deficient(svd)) throw RegressionError("held-out fit 0 has a rank deficient design");
    residuals = yc - centered * svd.solve(yc);
    leverage += svd.matrixU().rowwise().squaredNorm();
  }
  double cost = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double slack = 1.0 - leverage(i);
    if (slack < kLeverageLimit) {
      throw RegressionError("held-out fit " + std::to_string(i) + " has a rank deficient design");
    }
    const double r = residuals(i) / slack;
    cost += r * r;
  }
  return cost;
}

Matrix joint_design(const Matrix& policies, const Matrix& sensors) {
  Matrix joint(policies.rows(), policies.cols() + sensors.cols());
  joint << policies, sensors;
  return joint;
}

struct StandardizedSensors {
  Matrix values;      // centered and scaled columns
  Vector inv_scale;   // raw basis = diag(inv_scale) * standardized basis
};

StandardizedSensors standardize(const Matrix& raw) {
  StandardizedSensors out;
  const Matrix centered = raw.rowwise() - raw.colwise().mean();
  out.inv_scale = Vector::Ones(raw.cols());
  out.values = centered;
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    const double sd = std::sqrt(centered.col(c).squaredNorm() / std::max<Eigen::Index>(1, raw.rows() - 1));
    if (sd > 0.0) {
      out.values.col(c) /= sd;
      out.inv_scale(c) = 1.0 / sd;
    }
  }
  return out;
}

class LooObjective {
 public:
  LooObjective(const Matrix& policies, const Matrix& sensors, const Vector& scores, Eigen::Index target_dim)
      : policies_(policies), sensors_(sensors), scores_(scores), target_dim_(target_dim),
        design_(policies.rows(), policies.cols() + target_dim) {
    design_.leftCols(policies.cols()) = policies_;
  }

  double operator()(const Vector& params) {
    const Eigen::Map<const Matrix> basis(params.data(), sensors_.cols(), target_dim_);
    design_.rightCols(target_dim_) = sensors_ * basis;
    if (!design_.allFinite()) return kInf;
    try {
      return loo_cost_of_design(design_, scores_);
    } catch (const RegressionError&) {
      return kInf;
    }
  }

  Vector gradient(const Vector& params, double step) {
    Vector grad(params.size());
    Vector probe = params;
    for (Eigen::Index j = 0; j < params.size(); ++j) {
      probe(j) = params(j) + step;
      const double up = (*this)(probe);
      probe(j) = params(j) - step;
      const double down = (*this)(probe);
      probe(j) = params(j);
      grad(j) = (up - down) / (2.0 * step);
    }
    return grad;
  }

 private:
  const Matrix& policies_;
  const Matrix& sensors_;
  const Vector& scores_;
  Eigen::Index target_dim_;
  Matrix design_;
};

/// BFGS with Armijo backtracking. Only cost decreases are accepted, so the
/// returned point is never worse than the start.
Vector bfgs_minimize(LooObjective& objective, Vector x, const EncodingSearchConfig& config, RestartTrace& trace) {
  double fx = objective(x);
  trace.initial_cost = fx;
  trace.final_cost = fx;
  if (!std::isfinite(fx)) {
    trace.failed = true;
    return x;
  }
  Vector g = objective.gradient(x, config.gradient_step);
  Matrix h = Matrix::Identity(x.size(), x.size());
  bool scaled = false;
  for (int iter = 0; iter < config.max_iterations; ++iter) {
    if (!g.allFinite() || g.norm() <= 1e-14 * (1.0 + std::abs(fx))) break;
    Vector direction = -h * g;
    if (direction.dot(g) >= 0.0) {
      h.setIdentity();
      direction = -g;
    }
    double alpha = scaled ? 1.0 : std::min(1.0, 0.1 / direction.norm());
    const double slope = direction.dot(g);
    bool accepted = false;
    Vector candidate;
    double fc = kInf;
    for (int tries = 0; tries < 40; ++tries) {
      candidate = x + alpha * direction;
      fc = objective(candidate);
      if (std::isfinite(fc) && fc <= fx + 1e-4 * alpha * slope && fc < fx) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
    const Vector g_new = objective.gradient(candidate, config.gradient_step);
    const Vector s = candidate - x;
    const Vector y = g_new - g;
    const double ys = y.dot(s);
    if (ys > 1e-300 && y.allFinite()) {
      if (!scaled) {
        h *= ys / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / ys;
      const Matrix identity = Matrix::Identity(x.size(), x.size());
      h = (identity - rho * s * y.transpose()) * h * (identity - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    const double improvement = fx - fc;
    x = candidate;
    fx = fc;
    g = g_new;
    trace.costs.push_back(fx);
    trace.final_cost = fx;
    if (improvement <= 1e-13 * (1.0 + std::abs(fx))) break;
  }
  return x;
}

}  // namespace

SensorProjection SensorProjection::identity(Eigen::Index dim) {
  return SensorProjection{Matrix::Identity(dim, dim), Vector::Ones(dim)};
}

void EncodingSearchConfig::validate() const {
  if (target_dim < 1) throw Error("encoding target_dim must be at least 1");
  if (max_iterations < 1) throw Error("encoding max_iterations must be at least 1");
  if (!(gradient_step > 0.0)) throw Error("encoding gradient_step must be positive");
  if (restarts < 0) throw Error("encoding restarts must be non-negative");
}

std::size_t EncodingSearchResult::iterations_performed() const {
  std::size_t total = 0;
  for (const auto& r : restarts) total += r.costs.size();
  return total;
}

double loo_cost(const Matrix& policies, const Matrix& raw_sensors, const Vector& scores, const Matrix& basis) {
  if (raw_sensors.rows() != policies.rows() || scores.size() != policies.rows()) {
    throw RegressionError("row count mismatch in leave-one-out inputs");
  }
  if (basis.rows() != raw_sensors.cols()) throw RegressionError("projection does not match raw sensor length");
  if (basis.cols() == 0) return loo_cost_of_design(policies, scores);
  return loo_cost_of_design(joint_design(policies, raw_sensors * basis), scores);
}

double loo_cost(const TrialBatch& batch, const SensorProjection& projection) {
  return loo_cost(batch.policies(), batch.raw_sensors(), batch.scores(), projection.basis);
}

EncodingSearchResult search_projection(const Matrix& policies, const Matrix& raw_sensors, const Vector& scores,
                                       const EncodingSearchConfig& config) {
  config.validate();
  const Eigen::Index raw_dim = raw_sensors.cols();
  const Eigen::Index ds = config.target_dim;
  if (ds > raw_dim) throw Error("encoding target_dim exceeds raw sensor dimension");
  if (policies.rows() < policies.cols() + ds + 2) {
    throw RegressionError("insufficient samples for leave-one-out with d_s = " + std::to_string(ds));
  }
  const StandardizedSensors std_sensors = standardize(raw_sensors);
  LooObjective objective(policies, std_sensors.values, scores, ds);

  std::vector<Matrix> starts;
  if (config.warm_start) {
    if (config.warm_start->rows() != raw_dim || config.warm_start->cols() != ds) {
      throw Error("warm start has the wrong shape");
    }
    const Vector scale = std_sensors.inv_scale.cwiseInverse();
    starts.push_back(orthonormal_columns(scale.asDiagonal() * (*config.warm_start)));
  } else {
    Eigen::JacobiSVD<Matrix> svd(std_sensors.values, Eigen::ComputeThinV);
    Matrix pca = svd.matrixV().leftCols(ds);
    starts.push_back(orthonormal_columns(pca));
  }
  Rng rng = make_rng(config.seed);
  for (int r = 0; r < config.restarts; ++r) {
    Matrix draw(raw_dim, ds);
    for (Eigen::Index c = 0; c < ds; ++c) draw.col(c) = standard_normal_vector(raw_dim, rng);
    starts.push_back(orthonormal_columns(draw));
  }

  EncodingSearchResult result;
  Matrix best_basis;
  double best_cost = kInf;
  for (std::size_t r = 0; r < starts.size(); ++r) {
    RestartTrace trace;
    const Vector x0 = Eigen::Map<const Vector>(starts[r].data(), starts[r].size());
    const Vector x = bfgs_minimize(objective, x0, config, trace);
    if (!trace.failed && trace.final_cost < best_cost) {
      best_cost = trace.final_cost;
      best_basis = Eigen::Map<const Matrix>(x.data(), raw_dim, ds);
      result.best_restart = r;
    }
    result.restarts.push_back(std::move(trace));
  }
  if (!std::isfinite(best_cost)) throw RegressionError("all encoding restarts failed the leave-one-out preconditions");

  const Matrix raw_basis = std_sensors.inv_scale.asDiagonal() * best_basis;
  result.projection.column_norms = raw_basis.colwise().norm().transpose();
  result.projection.basis = orthonormal_columns(raw_basis);
  return result;
}

EncodingSearchResult search_projection(const TrialBatch& batch, const EncodingSearchConfig& config) {
  return search_projection(batch.policies(), batch.raw_sensors(), batch.scores(), config);
}

SensorProjection optimize_projection(const TrialBatch& batch, const EncodingSearchConfig& config) {
  return search_projection(batch, config).projection;
}

TrialBatch encode_batch(const TrialBatch& batch, const SensorProjection& projection) {
  TrialBatch out = batch;
  for (auto& trial : out.trials) {
    if (trial.raw_sensors.size() != projection.raw_dim()) {
      throw RegressionError("projection does not match raw sensor length");
    }
    trial.encoded_sensors = Vector(projection.basis.transpose() * trial.raw_sensors);
  }
  return out;
}

GradientEstimate estimate_gradient_encoded(const TrialBatch& batch, const SensorProjection& projection) {
  return estimate_g2(encode_batch(batch, projection));
}

}  // namespace sensorgrad
