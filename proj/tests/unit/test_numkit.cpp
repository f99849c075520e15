#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "vlab/error.hpp"
#include "vlab/numkit.hpp"

using namespace vlab;

TEST_CASE("logsumexp examples") {
  CHECK(logsumexp(Vector{0.0, 0.0}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  for (double x : {-7.5, 0.0, 3.25, 1e6}) CHECK(logsumexp(Vector{x}) == x);
  const double big = logsumexp(Vector{1000.0, 1000.0});
  CHECK(std::isfinite(big));
  CHECK(big == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(logsumexp(Vector{}), DomainError);
}

TEST_CASE("logsumexp bounds and shift") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    Vector v(1 + trial % 17);
    for (double& x : v) x = g(rng);
    const double m = *std::max_element(v.begin(), v.end());
    const double l = logsumexp(v);
    CHECK(l >= m);
    CHECK(l <= m + std::log(static_cast<double>(v.size())) + 1e-12);
    Vector shifted = v;
    for (double& x : shifted) x += 12.5;
    CHECK(std::abs(logsumexp(shifted) - (l + 12.5)) < 1e-12);
  }
}

TEST_CASE("zscore examples") {
  Matrix m(2, 2);
  m(0, 0) = 1.0;
  m(1, 0) = 3.0;
  m(0, 1) = 4.0;
  m(1, 1) = 4.0;
  const Matrix z = zscore_apply(zscore_fit(m), m);
  CHECK(z(0, 0) == doctest::Approx(-1.0));
  CHECK(z(1, 0) == doctest::Approx(1.0));
  CHECK(z(0, 1) == 0.0);
  CHECK(z(1, 1) == 0.0);
  CHECK(zscore_fit(m).stddev[1] >= ZScoreParams::kStdFloor);
  CHECK_THROWS(zscore_fit(Matrix(1, 3)));
}

TEST_CASE("zscore moments on a random matrix") {
  std::mt19937_64 rng(5);
  const auto rows = oracle::random_rows(20, 8, rng);
  Matrix m = Matrix::from_rows(rows);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = m(r, c) * (c + 1) + 3.0 * c;
  const Matrix z = zscore_apply(zscore_fit(m), m);
  for (std::size_t c = 0; c < z.cols(); ++c) {
    double mu = 0.0;
    for (std::size_t r = 0; r < z.rows(); ++r) mu += z(r, c);
    mu /= z.rows();
    double var = 0.0;
    for (std::size_t r = 0; r < z.rows(); ++r) var += (z(r, c) - mu) * (z(r, c) - mu);
    CHECK(std::abs(mu) < 1e-12);
    CHECK(std::abs(std::sqrt(var / z.rows()) - 1.0) < 1e-12);
  }
}

TEST_CASE("pearson examples") {
  CHECK(pearson(Vector{1, 2, 3}, Vector{2, 4, 6}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson(Vector{1, 2, 3}, Vector{3, 2, 1}) == doctest::Approx(-1.0).epsilon(1e-15));
  const double r = pearson(Vector{1, 2, 3}, Vector{1, 2, 10});
  CHECK(r == doctest::Approx(oracle::pearson_direct({1, 2, 3}, {1, 2, 10})).epsilon(1e-14));
  CHECK(r == doctest::Approx(0.9122).epsilon(1e-4));
  CHECK_THROWS_AS(pearson(Vector{1, 1, 1}, Vector{1, 2, 3}), UndefinedCorrelation);
  CHECK_THROWS_AS(pearson(Vector{1, 2}, Vector{1, 2, 3}), DomainError);
}

TEST_CASE("pearson affine invariance") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  for (int t = 0; t < 50; ++t) {
    Vector x(15), y(15), xa(15), ya(15);
    for (int i = 0; i < 15; ++i) {
      x[i] = g(rng);
      y[i] = x[i] + g(rng);
      xa[i] = 3.5 * x[i] - 2.0;
      ya[i] = 0.25 * y[i] + 7.0;
    }
    CHECK(std::abs(pearson(x, y) - pearson(xa, ya)) < 1e-12);
    CHECK(std::abs(pearson(x, y) - oracle::pearson_direct(x, y)) < 1e-12);
  }
}

TEST_CASE("rankdata examples") {
  CHECK(rankdata(Vector{10, 20, 20, 30}) == Vector{1, 2.5, 2.5, 4});
  CHECK(rankdata(Vector{-1, 0, 5, 9}) == Vector{1, 2, 3, 4});
  CHECK(rankdata(Vector{4, 4, 4, 4, 4}) == Vector(5, 3.0));
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> d(0, 6);
  for (int t = 0; t < 50; ++t) {
    Vector x(1 + t);
    for (double& v : x) v = d(rng);
    const Vector r = rankdata(x);
    double s = 0.0;
    for (double v : r) s += v;
    CHECK(s == x.size() * (x.size() + 1) / 2.0);
    CHECK(r == oracle::ranks_by_counting(x));
  }
}

TEST_CASE("ols_slope examples") {
  const Vector eps{-2, -1, 0, 1, 2};
  Vector half, flat, fixture;
  for (double e : eps) {
    half.push_back(0.5 * e);
    flat.push_back(4.0);
    fixture.push_back(0.413 * e + 1.25);
  }
  CHECK(ols_slope(eps, half) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(ols_slope(eps, flat) == 0.0);
  CHECK(ols_slope(eps, fixture) == doctest::Approx(0.413).epsilon(1e-14));
  CHECK_THROWS(ols_slope(Vector{1, 1, 1}, Vector{1, 2, 3}));
}

TEST_CASE("cholesky solve matches a substituted system") {
  Matrix a(3, 3);
  const double vals[3][3] = {{4, 1, 0.5}, {1, 3, 0.2}, {0.5, 0.2, 2}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) a(i, j) = vals[i][j];
  const Vector x = cholesky_solve(a, Vector{1, 2, 3});
  for (int i = 0; i < 3; ++i) {
    double s = 0.0;
    for (int j = 0; j < 3; ++j) s += vals[i][j] * x[j];
    CHECK(s == doctest::Approx(i + 1.0).epsilon(1e-13));
  }
}

TEST_CASE("vector helpers") {
  CHECK(norm(normalized(Vector{3, 4})) == doctest::Approx(1.0));
  CHECK_THROWS_AS(normalized(Vector{0, 0}), DegenerateDirection);
  CHECK_THROWS_AS(require_finite(Vector{1, std::numeric_limits<double>::quiet_NaN()}, "x"), DomainError);
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), DomainError);
}

TEST_CASE("parallel_for writes every slot") {
  std::vector<int> out(1000, 0);
  parallel_for(out.size(), [&](std::size_t i) { out[i] = static_cast<int>(i) * 2; }, 4);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == static_cast<int>(i) * 2);
}

TEST_CASE("seed mixing and hashing are stable") {
  CHECK(mix_seed(1, 2) == mix_seed(1, 2));
  CHECK(mix_seed(1, 2) != mix_seed(1, 3));
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}
