#pragma once

// Independent reference implementations used as test oracles. They share no
// code with the library and favour the most literal formula over speed.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

namespace oracle {

// Counts ordered (positive, negative) pairs; ties count one half.
inline double auc_pairs(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// rank_i = 1 + #{x_j < x_i} + (#{x_j == x_i} - 1) / 2, by direct counting.
inline std::vector<double> ranks_by_counting(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double below = 0.0, equal = 0.0;
    for (double v : x) {
      if (v < x[i]) below += 1.0;
      else if (v == x[i]) equal += 1.0;
    }
    r[i] = 1.0 + below + (equal - 1.0) / 2.0;
  }
  return r;
}

// sum((x - mx)(y - my)) / sqrt(sum((x - mx)^2) sum((y - my)^2))
inline double pearson_direct(const std::vector<double>& x, const std::vector<double>& y) {
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

inline double spearman_rank_then_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson_direct(ranks_by_counting(x), ranks_by_counting(y));
}

// Rank-then-Pearson with exact raw moments of doubled counted ranks:
// n*sum(ab) - sum(a)sum(b) is n times the centred moment, divided out exactly.
// Only the closing square root and division round, as in any exact evaluation.
inline double spearman_exact(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = ranks_by_counting(x), ry = ranks_by_counting(y);
  const auto n = static_cast<__int128>(x.size());
  __int128 sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto a = static_cast<__int128>(2.0 * rx[i]), b = static_cast<__int128>(2.0 * ry[i]);
    sa += a;
    sb += b;
    sab += a * b;
    saa += a * a;
    sbb += b * b;
  }
  const __int128 cxy = (n * sab - sa * sb) / n, cxx = (n * saa - sa * sa) / n, cyy = (n * sbb - sb * sb) / n;
  const long double den = std::sqrt(static_cast<long double>(cxx) * static_cast<long double>(cyy));
  return std::clamp(static_cast<double>(static_cast<long double>(cxy) / den), -1.0, 1.0);
}

struct Ridge {
  std::vector<double> w;
  double intercept = 0.0;
};

// Ridge on centred columns solved by conjugate gradients on
// (Xc^T Xc + lambda I) w = Xc^T yc, iterated to a tight residual.
inline Ridge ridge_cg(const std::vector<std::vector<double>>& x, const std::vector<double>& y, double lambda) {
  const std::size_t n = x.size(), d = x[0].size();
  std::vector<double> mx(d, 0.0);
  double my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mx[j] += x[i][j] / n;
    my += y[i] / n;
  }
  auto apply = [&](const std::vector<double>& v) {
    std::vector<double> xv(n, 0.0), out(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) xv[i] += (x[i][j] - mx[j]) * v[j];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) out[j] += (x[i][j] - mx[j]) * xv[i];
    for (std::size_t j = 0; j < d; ++j) out[j] += lambda * v[j];
    return out;
  };
  std::vector<double> b(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) b[j] += (x[i][j] - mx[j]) * (y[i] - my);

  std::vector<double> w(d, 0.0), r = b, p = b;
  auto dotv = [](const std::vector<double>& a, const std::vector<double>& c) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * c[k];
    return s;
  };
  double rr = dotv(r, r);
  for (std::size_t it = 0; it < 20 * d && rr > 1e-30; ++it) {
    const std::vector<double> ap = apply(p);
    const double alpha = rr / dotv(p, ap);
    for (std::size_t j = 0; j < d; ++j) {
      w[j] += alpha * p[j];
      r[j] -= alpha * ap[j];
    }
    const double next = dotv(r, r);
    for (std::size_t j = 0; j < d; ++j) p[j] = r[j] + (next / rr) * p[j];
    rr = next;
  }
  Ridge out{w, my};
  for (std::size_t j = 0; j < d; ++j) out.intercept -= mx[j] * w[j];
  return out;
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline std::vector<std::vector<double>> random_rows(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<std::vector<double>> rows(n, std::vector<double>(d));
  for (auto& row : rows)
    for (double& v : row) v = g(rng);
  return rows;
}

}  // namespace oracle
