#include "vlab/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "vlab/error.hpp"

namespace vlab {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  if (rows == 0 || cols == 0) throw DomainError("matrix dimensions must be positive");
}

Matrix Matrix::from_rows(const std::vector<Vector>& rows) {
  if (rows.empty()) throw DomainError("from_rows: no rows");
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) throw DomainError("from_rows: ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DomainError("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

Vector normalized(std::span<const double> a, double min_norm) {
  const double n = norm(a);
  if (!(n >= min_norm)) throw DegenerateDirection("direction norm below threshold");
  Vector out(a.begin(), a.end());
  for (double& v : out) v /= n;
  return out;
}

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw DomainError(std::string(what) + ": non-finite value");
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw DomainError("matmul: shape mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      auto br = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

Matrix gram(const Matrix& a) {
  Matrix g(a.cols(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto x = a.row(r);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      for (std::size_t j = 0; j < a.cols(); ++j) g(i, j) += x[i] * x[j];
    }
  }
  return g;
}

Vector cholesky_solve(const Matrix& a, std::span<const double> b) {
  const std::size_t n = a.rows();
  if (a.cols() != n || b.size() != n) throw DomainError("cholesky_solve: shape mismatch");
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) throw DomainError("cholesky_solve: matrix not positive definite");
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  Vector y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
    y[i] = s / l(i, i);
  }
  Vector x(n);
  for (std::size_t ii = n; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
    x[ii] = s / l(ii, ii);
  }
  return x;
}

double logsumexp(std::span<const double> values) {
  if (values.empty()) throw DomainError("logsumexp: empty input");
  const double m = *std::max_element(values.begin(), values.end());
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double mean(std::span<const double> values) {
  if (values.empty()) throw DomainError("mean: empty input");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

ZScoreParams zscore_fit(const Matrix& rows) {
  if (rows.rows() < 2) throw DomainError("zscore_fit: need at least two rows");
  require_finite(rows.data(), "zscore_fit");
  const std::size_t n = rows.rows();
  ZScoreParams p{Vector(rows.cols(), 0.0), Vector(rows.cols(), 0.0)};
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < rows.cols(); ++c) p.mean[c] += rows(r, c);
  }
  for (double& m : p.mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < rows.cols(); ++c) {
      const double d = rows(r, c) - p.mean[c];
      p.stddev[c] += d * d;
    }
  }
  for (double& s : p.stddev) s = std::max(std::sqrt(s / static_cast<double>(n)), ZScoreParams::kStdFloor);
  return p;
}

Matrix zscore_apply(const ZScoreParams& params, const Matrix& rows) {
  if (rows.cols() != params.mean.size()) throw DomainError("zscore_apply: width mismatch");
  Matrix out(rows.rows(), rows.cols());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    for (std::size_t c = 0; c < rows.cols(); ++c) {
      out(r, c) = (rows(r, c) - params.mean[c]) / params.stddev[c];
    }
  }
  return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DomainError("pearson: length mismatch");
  if (x.size() < 2) throw DomainError("pearson: need at least two points");
  // Tested on the values themselves: the mean of equal values can round away
  // from them and leave a spurious nonzero spread.
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double e) { return e == v.front(); });
  };
  if (constant(x) || constant(y)) throw UndefinedCorrelation("pearson: constant series");
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelation("pearson: constant series");
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

Vector rankdata(std::span<const double> x) {
  if (x.empty()) throw DomainError("rankdata: empty input");
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  Vector ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && x[order[j]] == x[order[i]]) ++j;
    // positions i..j-1 hold ranks i+1..j
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = midrank;
    i = j;
  }
  return ranks;
}

namespace {

double rank_correlation(std::int64_t sxy, std::int64_t sxx, std::int64_t syy) {
  if (sxx == 0 || syy == 0) throw UndefinedCorrelation("spearman: constant series");
  const long double den = std::sqrt(static_cast<long double>(sxx) * static_cast<long double>(syy));
  return std::clamp(static_cast<double>(static_cast<long double>(sxy) / den), -1.0, 1.0);
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DomainError("spearman: length mismatch");
  if (x.size() < 2) throw DomainError("spearman: need at least two points");
  if (x.size() > (1u << 20)) return pearson(rankdata(x), rankdata(y));
  const Vector rx = rankdata(x);
  const Vector ry = rankdata(y);
  // Doubled midranks minus (n + 1) are integers with zero sum, so the centred
  // moments are exact and only the final square root and division round.
  const auto centre = static_cast<std::int64_t>(x.size()) + 1;
  std::int64_t sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::int64_t a = static_cast<std::int64_t>(2.0 * rx[i]) - centre;
    const std::int64_t b = static_cast<std::int64_t>(2.0 * ry[i]) - centre;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  return rank_correlation(sxy, sxx, syy);
}

double ols_slope(std::span<const double> eps, std::span<const double> y) {
  if (eps.size() != y.size()) throw DomainError("ols_slope: length mismatch");
  if (eps.size() < 2) throw DomainError("ols_slope: need at least two points");
  const double me = mean(eps);
  const double my = mean(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    sxy += (eps[i] - me) * (y[i] - my);
    sxx += (eps[i] - me) * (eps[i] - me);
  }
  if (sxx == 0.0) throw DomainError("ols_slope: all eps values equal");
  return sxy / sxx;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t counter) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (counter + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view text) {
  return fnv1a64(std::as_bytes(std::span(text.data(), text.size())));
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, unsigned max_threads) {
  unsigned workers = max_threads ? max_threads : std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers) fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace vlab
