#include <doctest.h>

#include "sensorgrad/random.hpp"
#include "sensorgrad/regression.hpp"
#include "sensorgrad/stats.hpp"

using namespace sensorgrad;

TEST_CASE("center_columns subtracts column means") {
  Matrix x(2, 1);
  x << 1, 3;
  const CenteredColumns c = center_columns(x);
  CHECK(c.means(0) == doctest::Approx(2.0));
  CHECK(c.centered(0, 0) == doctest::Approx(-1.0));
  CHECK(c.centered(1, 0) == doctest::Approx(1.0));

  Matrix constant = Matrix::Constant(2, 2, 5.0);
  const CenteredColumns k = center_columns(constant);
  CHECK(k.centered.isZero(0.0));
  CHECK(k.means.isApprox(Vector::Constant(2, 5.0)));
}

TEST_CASE("center_columns on random data is zero-mean and idempotent") {
  Rng rng = make_rng(3);
  Matrix x(20, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 10.0 * standard_normal(rng) + 4.0;
  const Matrix c = center_columns(x).centered;
  for (Eigen::Index j = 0; j < 3; ++j) CHECK(std::abs(c.col(j).sum()) < 1e-10);
  const Matrix twice = center_columns(c).centered;
  CHECK((twice - c).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("center_columns rejects an empty batch") {
  CHECK_THROWS_WITH_AS(center_columns(Matrix(0, 2)), doctest::Contains("empty batch"), Error);
}

TEST_CASE("ols recovers exact and constant responses") {
  Matrix x(3, 1);
  x << -1, 0, 1;
  Vector y(3);
  y << -2, 0, 2;
  CHECK(ols(x, y).coefficients(0) == doctest::Approx(2.0));

  y << 7, 7, 7;
  const OlsFit fit = ols(x, y);
  CHECK(std::abs(fit.coefficients(0)) < 1e-12);
  CHECK(fit.mean_y == doctest::Approx(7.0));
  CHECK(fit.intercept() == doctest::Approx(7.0));
}

TEST_CASE("ols on noisy data and residual orthogonality") {
  Rng rng = make_rng(11);
  Matrix x(50, 2);
  Vector y(50);
  for (int i = 0; i < 50; ++i) {
    x(i, 0) = standard_normal(rng);
    x(i, 1) = standard_normal(rng);
    y(i) = 3.0 * x(i, 0) - x(i, 1) + 0.1 * standard_normal(rng);
  }
  const OlsFit fit = ols(x, y);
  CHECK(std::abs(fit.coefficients(0) - 3.0) < 0.2);
  CHECK(std::abs(fit.coefficients(1) + 1.0) < 0.2);
  const Matrix xc = center_columns(x).centered;
  for (Eigen::Index j = 0; j < 2; ++j) CHECK(std::abs(xc.col(j).dot(fit.residuals)) < 1e-8 * 50);
  const Vector probe = x.row(4).transpose();
  CHECK(fit.predict(probe) == doctest::Approx(y(4) - fit.residuals(4)));
}

TEST_CASE("ols errors") {
  Matrix x(4, 2);
  x << 1, 2, 2, 4, 3, 6, 4, 8;
  Vector y = Vector::LinSpaced(4, 0, 1);
  CHECK_THROWS_WITH_AS(ols(x, y), doctest::Contains("rank deficient design"), RegressionError);
  Matrix small(2, 2);
  small << 1, 0, 0, 1;
  CHECK_THROWS_WITH_AS(ols(small, Vector::Ones(2)), doctest::Contains("insufficient samples"), RegressionError);
  Matrix bad = Matrix::Identity(4, 1);
  bad(2, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(ols(bad, y), RegressionError);
}

TEST_CASE("quad_features layout") {
  CHECK(quad_features(Vector(0)).size() == 1);
  CHECK(quad_features(Vector(0))(0) == 1.0);
  Vector one(1);
  one << 2;
  CHECK(quad_features(one).isApprox((Vector(3) << 1, 2, 4).finished()));
  Vector two(2);
  two << 1, 2;
  CHECK(quad_features(two).isApprox((Vector(6) << 1, 1, 2, 1, 2, 4).finished()));
  for (std::size_t k = 0; k <= 10; ++k) {
    CHECK(static_cast<std::size_t>(quad_features(Vector::Ones(static_cast<Eigen::Index>(k))).size()) ==
          quad_feature_count(k));
    CHECK(quad_feature_count(k) == (k + 1) * (k + 2) / 2);
  }
}

TEST_CASE("vec_mat and resh round trip") {
  Matrix m(2, 2);
  m << 1, 2, 3, 4;
  CHECK(vec_mat(m).isApprox((Vector(4) << 1, 2, 3, 4).finished()));
  CHECK(resh(vec_mat(m), 2, 2) == m);
  CHECK(vec_mat(Matrix::Constant(1, 1, 7.0))(0) == 7.0);
  CHECK_THROWS_WITH_AS(resh((Vector(3) << 1, 2, 3).finished(), 2, 2), doctest::Contains("length mismatch"), Error);
}

TEST_CASE("drop_row and least_squares") {
  Matrix m(3, 2);
  m << 1, 2, 3, 4, 5, 6;
  const Matrix d = drop_row(m, 1);
  CHECK(d.rows() == 2);
  CHECK(d(1, 0) == 5.0);
  CHECK(drop_entry((Vector(3) << 1, 2, 3).finished(), 0).isApprox((Vector(2) << 2, 3).finished()));
  Matrix a(3, 1);
  a << 1, 2, 3;
  const Matrix sol = least_squares(a, 2.0 * a);
  CHECK(sol(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("psd_factor handles singular covariances") {
  Matrix cov = Matrix::Zero(2, 2);
  CHECK((psd_factor(cov) * psd_factor(cov).transpose()).isZero(1e-15));
  cov << 2, 1, 1, 2;
  const Matrix l = psd_factor(cov);
  CHECK((l * l.transpose() - cov).norm() < 1e-12);
  cov << 1, 0, 0, -1;
  CHECK_THROWS_AS(psd_factor(cov), Error);
}

TEST_CASE("derive_seed is path dependent and stable") {
  CHECK(derive_seed(1, {2, 3}) == derive_seed(derive_seed(1, 2), 3));
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  CHECK(derive_seed(5, 0) != derive_seed(6, 0));
}

TEST_CASE("stats helpers") {
  const std::vector<double> values = {1, 2, 3, 4};
  const MeanAndError me = mean_and_error(values);
  CHECK(me.mean == doctest::Approx(2.5));
  CHECK(*me.standard_error == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
  CHECK_FALSE(mean_and_error(std::vector<double>{1.0}).standard_error.has_value());

  // Reference values from scipy.stats.ttest_rel(a, b, alternative="greater").
  const std::vector<double> a = {2, 3, 4, 5, 6};
  const std::vector<double> b = {1, 1.5, 3.5, 3, 4};
  const PairedTest t = paired_t_test_greater(a, b);
  CHECK(t.pairs == 5);
  CHECK(t.mean_difference == doctest::Approx(1.4));
  CHECK(t.t_statistic == doctest::Approx(4.801960383990248));
  CHECK(t.p_value == doctest::Approx(0.0043178963037757674).epsilon(1e-9));

  Matrix ref = Matrix::Identity(2, 2);
  CHECK(relative_frobenius_error(1.1 * ref, ref) == doctest::Approx(0.1));
}
