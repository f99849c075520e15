#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "support.hpp"
#include "vlab/error.hpp"
#include "vlab/probes.hpp"
#include "vlab/readout.hpp"

using namespace vlab;

namespace {

std::vector<int> shuffled_labels(std::size_t n, std::uint64_t seed) {
  std::vector<int> l(n);
  for (std::size_t i = 0; i < n; ++i) l[i] = i < n / 2 ? 1 : 0;
  std::mt19937_64 rng(seed);
  std::shuffle(l.begin(), l.end(), rng);
  return l;
}

ProbeDataset dataset(const Matrix& rows, Vector targets) {
  std::vector<int> ids(rows.rows());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  return ProbeDataset::make(HookSite{}, rows, std::move(targets), ids);
}

}  // namespace

TEST_CASE("auc examples") {
  CHECK(auc(Vector{3, 4, 1, 2}, std::vector<int>{1, 1, 0, 0}) == 1.0);
  CHECK(auc(Vector{0.9, 0.4, 0.5, 0.1}, std::vector<int>{1, 1, 0, 0}) == 0.75);
  CHECK(auc(Vector{2, 2, 2, 2}, std::vector<int>{1, 0, 1, 0}) == 0.5);
  CHECK_THROWS_AS(auc(Vector{1, 2}, std::vector<int>{1, 1}), DomainError);
  CHECK(effective_auc(0.259) == doctest::Approx(0.741).epsilon(1e-12));
  CHECK(effective_auc(0.8) == 0.8);
}

TEST_CASE("auc equals the exhaustive pair count") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> val(0, 5);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 2 + t % 11;
    Vector s(n);
    std::vector<int> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = val(rng) * 0.5;
      l[i] = static_cast<int>(i % 2);
    }
    std::shuffle(l.begin(), l.end(), rng);
    CHECK(auc(s, l) == oracle::auc_pairs(s, l));
    Vector mono(n);
    for (std::size_t i = 0; i < n; ++i) mono[i] = std::exp(s[i]) * 3.0 + 1.0;
    CHECK(auc(mono, l) == auc(s, l));
  }
}

TEST_CASE("ridge closed form matches conjugate gradients") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 10 + 2 * t, d = 2 + t % 15;
    const auto rows = oracle::random_rows(n, d, rng);
    Vector y(n);
    std::normal_distribution<double> g;
    for (std::size_t i = 0; i < n; ++i) y[i] = rows[i][0] * 2.0 - rows[i][d - 1] + 0.3 * g(rng) + 5.0;
    const double lambda = 0.5 + t * 0.1;
    const RidgeFit fit = fit_ridge(Matrix::from_rows(rows), y, lambda);
    const oracle::Ridge ref = oracle::ridge_cg(rows, y, lambda);
    for (std::size_t j = 0; j < d; ++j) CHECK(std::abs(fit.weights[j] - ref.w[j]) <= 1e-6);
    CHECK(std::abs(fit.intercept - ref.intercept) <= 1e-6);
  }
}

TEST_CASE("quantitative probe") {
  std::mt19937_64 rng(3);
  const auto rows = oracle::random_rows(30, 4, rng);
  Vector y(30);
  for (std::size_t i = 0; i < 30; ++i) y[i] = 1.5 * rows[i][1] - 0.5 * rows[i][2];
  ProbeSettings tight;
  tight.ridge_lambda = 1e-9;
  CHECK(fit_quant_probe(dataset(Matrix::from_rows(rows), y), tight) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(fit_quant_probe(dataset(Matrix::from_rows(rows), y)) <= 1.0);
  CHECK_THROWS_AS(fit_quant_probe(dataset(Matrix::from_rows(rows), Vector(30, 2.0))), DomainError);
  tight.ridge_lambda = 0.0;
  CHECK_THROWS(fit_quant_probe(dataset(Matrix::from_rows(rows), y), tight));
}

TEST_CASE("spearman conventions") {
  Vector rank{1, 2, 3, 4, 5, 6}, cube, rev;
  for (double r : rank) {
    cube.push_back(r * r * r);
    rev.push_back(-r);
  }
  CHECK(spearman(cube, rank) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(spearman(rev, rank) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(spearman(Vector{1, 1, 2}, Vector{1, 2, 2}) ==
        doctest::Approx(oracle::spearman_rank_then_pearson({1, 1, 2}, {1, 2, 2})).epsilon(1e-15));
  CHECK(spearman(Vector{1, 1, 2}, Vector{1, 2, 2}) == doctest::Approx(0.5).epsilon(1e-15));

  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> v(0, 4);
  for (int t = 0; t < 100; ++t) {
    Vector x(8), y(8);
    for (int i = 0; i < 8; ++i) {
      x[i] = v(rng);
      y[i] = v(rng);
    }
    if (*std::min_element(x.begin(), x.end()) == *std::max_element(x.begin(), x.end())) continue;
    if (*std::min_element(y.begin(), y.end()) == *std::max_element(y.begin(), y.end())) continue;
    CHECK(std::abs(spearman(x, y) - oracle::spearman_rank_then_pearson(x, y)) < 1e-15);
    CHECK(spearman(x, y) == oracle::spearman_exact(x, y));
  }
}

TEST_CASE("qualitative probe") {
  Matrix rows(8, 2);
  Vector ranks(8);
  for (int i = 0; i < 8; ++i) {
    rows(i, 0) = i + 1.0;
    rows(i, 1) = (i % 3) * 0.01;
    ranks[i] = i + 1.0;
  }
  CHECK(fit_qual_probe(dataset(rows, ranks)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS(fit_qual_probe(dataset(Matrix(2, 2, 1.0), Vector{1, 2})));
  CHECK_THROWS_AS(fit_qual_probe(dataset(Matrix(5, 2, 1.0), Vector{1, 2, 3, 4, 5})), UndefinedCorrelation);
}

TEST_CASE("sign probe") {
  Matrix sep(10, 3);
  Vector lab(10);
  for (int i = 0; i < 10; ++i) {
    sep(i, 0) = i < 5 ? -1.0 - i : 1.0 + i;
    sep(i, 1) = std::sin(i);
    sep(i, 2) = std::cos(3.0 * i);
    lab[i] = i < 5 ? 0.0 : 1.0;
  }
  CHECK(fit_sign_probe(dataset(sep, lab)) == 1.0);
  CHECK(fit_sign_probe(dataset(Matrix(10, 3, 0.25), lab)) == 0.5);
  CHECK_THROWS_AS(fit_sign_probe(dataset(sep, Vector(10, 1.0))), DomainError);

  // A single noise feature under permuted labels. The null AUC for 20 vs 20
  // has sd ~0.092, so about 90% of permutations land within 0.5 +- 0.15.
  std::mt19937_64 rng(5);
  const Matrix noise = Matrix::from_rows(oracle::random_rows(40, 1, rng));
  int inside = 0;
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto l = shuffled_labels(40, seed);
    const double a = fit_sign_probe(dataset(noise, Vector(l.begin(), l.end())));
    inside += std::abs(a - 0.5) <= 0.15;
    total += a;
  }
  CHECK(inside >= 16);
  CHECK(std::abs(total / 20 - 0.5) <= 0.15);
}

TEST_CASE("held-out scoring uses only every k-th row") {
  Matrix sep(12, 1);
  Vector lab(12);
  for (int i = 0; i < 12; ++i) {
    sep(i, 0) = i % 2 ? 1.0 + i : -1.0 - i;
    lab[i] = i % 2;
  }
  ProbeSettings held;
  held.holdout_every = 3;
  CHECK(fit_sign_probe(dataset(sep, lab), held) == 1.0);
}

TEST_CASE("valence axis") {
  Matrix rows(4, 3, 1.0);
  rows(2, 0) = 3.0;
  rows(3, 0) = 3.0;
  const std::vector<int> signs{-1, -1, 1, 1};
  const Direction d = valence_axis(rows, signs);
  CHECK(d.vector() == Vector{1.0, 0.0, 0.0});
  CHECK_THROWS_AS(valence_axis(Matrix(4, 3, 1.0), signs), DegenerateDirection);
  CHECK_THROWS(valence_axis(rows, std::vector<int>{1, 1, 1, 1}));

  std::mt19937_64 rng(6);
  const Matrix r = Matrix::from_rows(oracle::random_rows(10, 5, rng));
  std::vector<int> s(10), flipped(10);
  for (int i = 0; i < 10; ++i) {
    s[i] = i % 2 ? 1 : -1;
    flipped[i] = -s[i];
  }
  const Vector a = valence_axis(r, s).vector(), b = valence_axis(r, flipped).vector();
  for (int j = 0; j < 5; ++j) CHECK(a[j] == -b[j]);
  CHECK(std::abs(norm(a) - 1.0) < 1e-10);
}

TEST_CASE("unembedding axis") {
  const Model m = build_model(testing_support::small_config());
  const DigitPool pools = digit_token_pool(testing_support::tokenizer());
  const TokenId two = pools.canonical_token(2), three = pools.canonical_token(3);
  const Direction u = unembedding_axis(m, two, three);
  CHECK(std::abs(norm(u.vector()) - 1.0) < 1e-12);
  Vector diff = m.unembedding_column(two);
  const Vector c3 = m.unembedding_column(three);
  for (std::size_t j = 0; j < diff.size(); ++j) diff[j] -= c3[j];
  CHECK(dot(u.vector(), diff) == doctest::Approx(norm(diff)).epsilon(1e-12));
  CHECK(u.source() == DirectionSource::unembedding_axis);
}

TEST_CASE("direction construction") {
  CHECK_THROWS(Direction::from_unit(Vector{1.0, 1.0}, DirectionSource::custom));
  CHECK_THROWS_AS(Direction::from_raw(Vector{0.0, 1e-12}, DirectionSource::custom), DegenerateDirection);
  const Direction d = Direction::from_raw(Vector{0.0, 2.0}, DirectionSource::custom);
  CHECK(d.negated().vector() == Vector{0.0, -1.0});
}

TEST_CASE("corr logits") {
  Matrix rows(6, 2);
  Vector l2(6), l3(6);
  for (int i = 0; i < 6; ++i) {
    l2[i] = std::sin(i + 0.3) * 4.0;
    l3[i] = std::cos(2.0 * i);
    rows(i, 0) = l2[i];
    rows(i, 1) = 7.0;
  }
  const Direction e0 = Direction::from_unit(Vector{1.0, 0.0}, DirectionSource::custom);
  const CorrLogits a = corr_logits(rows, e0, l2, l3);
  CHECK(a.r == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(a.digit == 2);
  for (int i = 0; i < 6; ++i) rows(i, 0) = -l3[i];
  const CorrLogits b = corr_logits(rows, e0, l2, l3);
  CHECK(b.r == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(b.digit == 3);
  CHECK_THROWS_AS(corr_logits(Matrix(6, 2, 1.0), e0, l2, l3), UndefinedCorrelation);
  CHECK_THROWS(corr_logits(Matrix(2, 2, 1.0), e0, Vector{1, 2}, Vector{2, 1}));

  std::mt19937_64 rng(7);
  for (int t = 0; t < 50; ++t) {
    const auto raw = oracle::random_rows(7, 3, rng);
    const auto lg = oracle::random_rows(2, 7, rng);
    const Direction axis = Direction::from_raw(Vector{0.3, -1.0, 0.5}, DirectionSource::custom);
    std::vector<double> proj;
    for (const auto& r : raw) proj.push_back(dot(r, axis.vector()));
    const double r2 = oracle::pearson_direct(proj, lg[0]), r3 = oracle::pearson_direct(proj, lg[1]);
    const double want = std::abs(r2) >= std::abs(r3) ? r2 : r3;
    CHECK(std::abs(corr_logits(Matrix::from_rows(raw), axis, lg[0], lg[1]).r - want) < 1e-12);
  }
}

TEST_CASE("bag of words features") {
  const std::vector<std::string> texts{"The pain, the PAIN!", "No pleasure here."};
  const BowFeatures f = bow_features(texts);
  const auto find = [&](const std::string& w) {
    const auto it = std::find(f.vocabulary.begin(), f.vocabulary.end(), w);
    REQUIRE(it != f.vocabulary.end());
    return static_cast<std::size_t>(it - f.vocabulary.begin());
  };
  CHECK(f.counts(0, find("pain")) == 2.0);
  CHECK(f.counts(0, find("the pain")) == 2.0);
  CHECK(f.counts(0, find("pain the")) == 1.0);
  CHECK(f.counts(1, find("pain")) == 0.0);
  CHECK(f.counts(1, find("pleasure here")) == 1.0);
  CHECK(std::is_sorted(f.vocabulary.begin(), f.vocabulary.end()));
  CHECK_THROWS_AS(bow_features(std::vector<std::string>{"...", "!!"}), DomainError);
}

TEST_CASE("bag of words baseline") {
  std::vector<std::string> texts;
  std::vector<int> signs;
  for (const PromptRecord& r : testing_support::probe_corpus()) {
    texts.push_back(r.text);
    signs.push_back(r.condition.sign());
  }
  const BowResult b = bow_baseline(texts, signs);
  CHECK(b.effective_auc == 1.0);
  CHECK(b.effective_auc >= 0.5);
  CHECK(b.effective_auc == effective_auc(b.raw_auc));
  CHECK_THROWS(bow_baseline(texts, std::vector<int>(texts.size(), 1)));
}
