#pragma once

// Deterministic numerical and statistical primitives. Everything here works
// in 64-bit floats; activations stored as float32 are widened on the way in.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

namespace vlab {

using Vector = std::vector<double>;

// Dense row-major matrix with explicit, strictly positive dimensions.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return rows_ == 0; }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  static Matrix from_rows(const std::vector<Vector>& rows);

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// --- vector helpers ---------------------------------------------------------

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
// Returns a / |a|. Throws DegenerateDirection when |a| < min_norm.
Vector normalized(std::span<const double> a, double min_norm = 1e-10);
// Throws DomainError unless every value is finite.
void require_finite(std::span<const double> values, const char* what);

// out = a * b (shapes checked).
Matrix matmul(const Matrix& a, const Matrix& b);
// out = a^T * a.
Matrix gram(const Matrix& a);
// Solves (A) x = b for symmetric positive definite A via Cholesky.
Vector cholesky_solve(const Matrix& a, std::span<const double> b);

// --- statistics -------------------------------------------------------------

// log(sum(exp(v))) shifted by max(v). Empty input is a DomainError.
double logsumexp(std::span<const double> values);

double logistic(double x);
double mean(std::span<const double> values);

struct ZScoreParams {
  static constexpr double kStdFloor = 1e-8;
  Vector mean;
  Vector stddev;  // population std, floored at kStdFloor
};

ZScoreParams zscore_fit(const Matrix& rows);
Matrix zscore_apply(const ZScoreParams& params, const Matrix& rows);

// Product-moment correlation. Throws UndefinedCorrelation if either series is
// constant and DomainError on length mismatch or fewer than two points.
double pearson(std::span<const double> x, std::span<const double> y);

// 1-based ranks; ties share the mean of their span.
Vector rankdata(std::span<const double> x);

// Pearson on midranks, from exact integer rank moments. Throws like pearson.
double spearman(std::span<const double> x, std::span<const double> y);

// Least-squares slope of y on eps. All-equal eps is a DomainError.
double ols_slope(std::span<const double> eps, std::span<const double> y);

// --- determinism helpers ----------------------------------------------------

// SplitMix64 finaliser; derives independent stream seeds from (seed, counter).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t counter);

// FNV-1a 64-bit over bytes; used for config hashes and file checksums.
std::uint64_t fnv1a64(std::span<const std::byte> bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text);

// Runs fn(i) for i in [0, n) across worker threads. Each index writes only
// its own output slot, so results do not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  unsigned max_threads = 0);

}  // namespace vlab
