#include <doctest.h>

#include "sensorgrad/random.hpp"
#include "sensorgrad/sensor_encoding.hpp"

using namespace sensorgrad;

namespace {

/// Deletes each trial in turn, refits on the rest and predicts it.
double brute_force_loo(const Matrix& policies, const Matrix& raw, const Vector& scores, const Matrix& basis) {
  const Matrix encoded = raw * basis;
  Matrix design(policies.rows(), policies.cols() + encoded.cols());
  design << policies, encoded;
  double cost = 0.0;
  for (Eigen::Index i = 0; i < design.rows(); ++i) {
    const OlsFit fit = ols(drop_row(design, i), drop_entry(scores, i));
    const double err = fit.predict(design.row(i).transpose()) - scores(i);
    cost += err * err;
  }
  return cost;
}

struct Planted {
  Matrix policies;
  Matrix raw;
  Vector scores;
  Vector direction;
  Vector gradient;

  TrialBatch batch() const {
    TrialBatch b{Vector::Zero(policies.cols()), Matrix::Identity(policies.cols(), policies.cols()), {}};
    for (Eigen::Index i = 0; i < policies.rows(); ++i) {
      TrialRecord t;
      t.policy = policies.row(i).transpose();
      t.raw_sensors = raw.row(i).transpose();
      t.encoded_sensors = t.raw_sensors;
      t.score = scores(i);
      b.trials.push_back(std::move(t));
    }
    return b;
  }
};

/// Scores f = πᵀa + c·(sᵀu) + noise with u a fixed unit direction in raw space.
Planted planted(std::uint64_t seed, Eigen::Index n, Eigen::Index d, Eigen::Index raw_dim, const Vector& direction,
                double signal, double noise_sd) {
  Rng rng = make_rng(seed);
  Planted p;
  p.direction = direction.normalized();
  p.gradient = Vector::LinSpaced(d, 1.0, -0.5);
  p.policies = Matrix(n, d);
  p.raw = Matrix(n, raw_dim);
  p.scores = Vector(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p.policies.row(i) = standard_normal_vector(d, rng).transpose();
    p.raw.row(i) = standard_normal_vector(raw_dim, rng).transpose();
    p.scores(i) = p.policies.row(i).dot(p.gradient) + signal * p.raw.row(i).dot(p.direction) + noise_sd * standard_normal(rng);
  }
  return p;
}

Matrix random_basis(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

}  // namespace

TEST_CASE("loo_cost matches the delete-and-refit oracle") {
  Rng rng = make_rng(8);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::Index n = rep % 2 ? 8 : 15;
    const Planted p = planted(100 + static_cast<std::uint64_t>(rep), n, 2, 4, Vector::Ones(4), 1.0, 0.5);
    const Matrix basis = random_basis(rng, 4, rep % 3 == 0 ? 2 : 1);
    const double fast = loo_cost(p.policies, p.raw, p.scores, basis);
    const double slow = brute_force_loo(p.policies, p.raw, p.scores, basis);
    CHECK(std::abs(fast - slow) <= 1e-8 * std::max(1.0, slow));
  }
}

TEST_CASE("loo_cost edge cases") {
  const Planted exact = planted(3, 10, 2, 3, Vector::Unit(3, 0), 2.0, 0.0);
  CHECK(loo_cost(exact.policies, exact.raw, exact.scores, Vector::Unit(3, 0)) < 1e-16);

  const Planted p = planted(4, 10, 2, 3, Vector::Unit(3, 1), 1.0, 0.3);
  const double empty = loo_cost(p.policies, p.raw, p.scores, Matrix::Zero(3, 0));
  CHECK(empty == doctest::Approx(brute_force_loo(p.policies, Matrix::Zero(10, 0), p.scores, Matrix::Zero(0, 0))));

  CHECK_THROWS_AS(loo_cost(p.policies.topRows(4), p.raw.topRows(4), p.scores.head(4), Vector::Unit(3, 0)), RegressionError);
  CHECK_THROWS_WITH_AS(loo_cost(p.policies, p.raw, p.scores, Matrix::Zero(3, 1)), doctest::Contains("rank deficient"),
                       RegressionError);
}

TEST_CASE("loo_cost depends only on the column space") {
  Rng rng = make_rng(17);
  const Planted p = planted(5, 20, 2, 5, Vector::Ones(5), 1.0, 0.3);
  for (int rep = 0; rep < 10; ++rep) {
    const Matrix basis = random_basis(rng, 5, 2);
    const Matrix mix = random_basis(rng, 2, 2) + 3.0 * Matrix::Identity(2, 2);
    const double a = loo_cost(p.policies, p.raw, p.scores, basis);
    const double b = loo_cost(p.policies, p.raw, p.scores, basis * mix);
    CHECK(std::abs(a - b) <= 1e-8 * std::max(1.0, a));
  }
}

TEST_CASE("search recovers a planted single-coordinate signal") {
  const Planted p = planted(21, 50, 2, 10, Vector::Unit(10, 0), 1.0, 0.1);
  EncodingSearchConfig config;
  config.target_dim = 1;
  config.seed = 1;
  const EncodingSearchResult result = search_projection(p.policies, p.raw, p.scores, config);
  CHECK(std::abs(result.projection.basis(0, 0)) >= 0.95);
  CHECK(result.final_cost() <= result.initial_cost());
  CHECK(std::abs(result.projection.basis.col(0).norm() - 1.0) < 1e-12);
  std::size_t total = 0;
  for (const auto& r : result.restarts) total += r.costs.size();
  CHECK(result.iterations_performed() == total);
}

TEST_CASE("search finds nothing in sensors independent of the score") {
  Rng rng = make_rng(31);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Planted p = planted(500 + seed, 30, 2, 6, Vector::Ones(6), 0.0, 1.0);
    EncodingSearchConfig config;
    config.seed = seed;
    config.restarts = 2;
    const double found = search_projection(p.policies, p.raw, p.scores, config).final_cost();
    const double random = loo_cost(p.policies, p.raw, p.scores, random_basis(rng, 6, 1));
    CHECK(found / random >= 0.5);
  }
}

TEST_CASE("an optimal warm start is a fixed point") {
  const Planted exact = planted(41, 20, 2, 4, (Vector(4) << 1, 2, 0, 0).finished(), 1.5, 0.0);
  EncodingSearchConfig config;
  config.restarts = 0;
  config.warm_start = exact.direction;
  const EncodingSearchResult result = search_projection(exact.policies, exact.raw, exact.scores, config);
  CHECK(result.final_cost() < 1e-12);
  CHECK(std::abs(std::abs(result.projection.basis.col(0).dot(exact.direction)) - 1.0) < 1e-6);
}

TEST_CASE("search never ends above its own start") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Planted p = planted(900 + seed, 14, 2, 5, Vector::Ones(5), 0.5, 1.0);
    EncodingSearchConfig config;
    config.seed = seed;
    config.target_dim = 2;
    const EncodingSearchResult result = search_projection(p.policies, p.raw, p.scores, config);
    for (const auto& r : result.restarts) {
      if (!r.failed) CHECK(r.final_cost <= r.initial_cost);
    }
  }
}

TEST_CASE("search is deterministic and validates its configuration") {
  const Planted p = planted(61, 30, 2, 5, Vector::Ones(5), 1.0, 0.2);
  EncodingSearchConfig config;
  config.seed = 9;
  const Matrix a = search_projection(p.policies, p.raw, p.scores, config).projection.basis;
  const Matrix b = search_projection(p.policies, p.raw, p.scores, config).projection.basis;
  CHECK(a == b);
  config.target_dim = 0;
  CHECK_THROWS_AS(config.validate(), Error);
  config.target_dim = 1;
  config.max_iterations = 0;
  CHECK_THROWS_AS(config.validate(), Error);
  config.max_iterations = 10;
  CHECK_THROWS_AS(search_projection(p.policies.topRows(4), p.raw.topRows(4), p.scores.head(4), config), Error);
}

TEST_CASE("encoded estimate reductions") {
  const Planted p = planted(71, 20, 2, 2, Vector::Unit(2, 0), 1.0, 0.2);
  const TrialBatch batch = p.batch();
  const GradientEstimate direct = estimate_g2(batch);
  const GradientEstimate encoded = estimate_gradient_encoded(batch, SensorProjection::identity(2));
  CHECK((direct.gradient - encoded.gradient).norm() < 1e-12);

  const Planted exact = planted(72, 12, 2, 3, Vector::Unit(3, 2), 2.0, 0.0);
  const GradientEstimate fit = estimate_gradient_encoded(exact.batch(), SensorProjection{Vector::Unit(3, 2), Vector::Ones(1)});
  CHECK((fit.gradient - exact.gradient).cwiseAbs().maxCoeff() < 1e-8);

  // Scaling the raw sensors is absorbed by the searched projection.
  EncodingSearchConfig config;
  config.seed = 3;
  const Planted q = planted(73, 30, 2, 4, Vector::Ones(4), 1.0, 0.3);
  Planted scaled = q;
  scaled.raw *= 7.5;
  const GradientEstimate g_a = estimate_gradient_encoded(q.batch(), optimize_projection(q.batch(), config));
  const GradientEstimate g_b = estimate_gradient_encoded(scaled.batch(), optimize_projection(scaled.batch(), config));
  CHECK((g_a.gradient - g_b.gradient).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("planted encoding beats g1 in most replications") {
  Vector direction(10);
  direction << 0.8, 0.1, 0.8, -0.6, 0, 0.6, 0, -0.4, 0.1, 0.4;
  int wins = 0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    const Planted p = planted(2000 + static_cast<std::uint64_t>(r), 50, 2, 10, direction, 1.0, 0.1);
    const TrialBatch batch = p.batch();
    EncodingSearchConfig config;
    config.seed = static_cast<std::uint64_t>(r);
    config.restarts = 1;
    const GradientEstimate enc = estimate_gradient_encoded(batch, optimize_projection(batch, config));
    const GradientEstimate g1 = estimate_g1(batch);
    wins += (enc.gradient - p.gradient).norm() < (g1.gradient - p.gradient).norm() ? 1 : 0;
  }
  CHECK(wins >= 160);
}
