#include "vlab/probes.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <map>

#include <fmt/format.h>

#include "vlab/error.hpp"

namespace vlab {

namespace {

struct Split {
  std::vector<std::size_t> fit, score;
};

Split split_rows(std::size_t n, int every) {
  Split s;
  for (std::size_t i = 0; i < n; ++i) {
    if (every >= 2 && i % static_cast<std::size_t>(every) == 0) {
      s.score.push_back(i);
    } else {
      s.fit.push_back(i);
    }
  }
  if (every < 2) s.score = s.fit;
  return s;
}

Matrix take_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy(m.row(idx[i]).begin(), m.row(idx[i]).end(), out.row(i).begin());
  return out;
}

template <class T>
std::vector<T> take(std::span<const T> v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

Vector scores_of(const LogisticFit& fit, const Matrix& x) {
  Vector s(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) s[r] = dot(x.row(r), fit.weights) + fit.bias;
  return s;
}

void require_two_per_class(std::span<const int> labels, const char* what) {
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  const auto neg = std::count(labels.begin(), labels.end(), 0);
  if (pos + neg != static_cast<std::ptrdiff_t>(labels.size())) {
    throw DomainError(fmt::format("{}: labels must be 0/1", what));
  }
  if (pos < 2 || neg < 2) throw DomainError(fmt::format("{}: need at least two rows of each class", what));
}

std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      cur += static_cast<char>(std::tolower(u));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

}  // namespace

std::string_view to_string(DirectionSource s) {
  switch (s) {
    case DirectionSource::valence_axis: return "valence-axis";
    case DirectionSource::unembedding_axis: return "unembedding-axis";
    case DirectionSource::planted: return "planted";
    case DirectionSource::custom: return "custom";
  }
  return "?";
}

Direction Direction::from_raw(std::span<const double> raw, DirectionSource source, std::optional<HookSite> origin) {
  require_finite(raw, "direction");
  Direction d;
  d.unit_ = normalized(raw, 1e-10);
  d.source_ = source;
  d.origin_ = origin;
  return d;
}

Direction Direction::from_unit(Vector unit, DirectionSource source, std::optional<HookSite> origin) {
  if (std::abs(norm(unit) - 1.0) > 1e-10) throw DomainError("direction is not unit norm");
  Direction d;
  d.unit_ = std::move(unit);
  d.source_ = source;
  d.origin_ = origin;
  return d;
}

Direction Direction::negated() const {
  Direction d = *this;
  for (double& v : d.unit_) v = -v;
  return d;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DomainError("auc: length mismatch");
  std::size_t n_pos = 0, n_neg = 0;
  for (int l : labels) {
    if (l == 1) {
      ++n_pos;
    } else if (l == 0) {
      ++n_neg;
    } else {
      throw DomainError("auc: labels must be 0/1");
    }
  }
  if (n_pos == 0 || n_neg == 0) throw DomainError("auc: both classes required");
  const Vector ranks = rankdata(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (labels[i] == 1) rank_sum += ranks[i];
  }
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double effective_auc(double raw_auc) { return std::max(raw_auc, 1.0 - raw_auc); }

LogisticFit fit_logistic(const Matrix& x, std::span<const int> labels, const ProbeSettings& settings) {
  if (x.rows() != labels.size()) throw DomainError("fit_logistic: rows/labels mismatch");
  require_finite(x.data(), "fit_logistic");
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  LogisticFit fit{Vector(d, 0.0), 0.0};
  Vector grad(d);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int it = 0; it < settings.logistic_iters; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double grad_b = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      auto row = x.row(r);
      const double err = logistic(dot(row, fit.weights) + fit.bias) - labels[r];
      for (std::size_t c = 0; c < d; ++c) grad[c] += err * row[c];
      grad_b += err;
    }
    for (std::size_t c = 0; c < d; ++c) {
      fit.weights[c] -= settings.logistic_step * (grad[c] * inv_n + settings.logistic_l2 * fit.weights[c]);
    }
    fit.bias -= settings.logistic_step * grad_b * inv_n;
  }
  return fit;
}

RidgeFit fit_ridge(const Matrix& x, std::span<const double> y, double lambda) {
  if (x.rows() != y.size()) throw DomainError("fit_ridge: rows/targets mismatch");
  if (!(lambda > 0.0)) throw DomainError("fit_ridge: lambda must be positive");
  require_finite(x.data(), "fit_ridge");
  require_finite(y, "fit_ridge");
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  Vector col_mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) col_mean[c] += x(r, c);
  }
  for (double& m : col_mean) m /= static_cast<double>(n);
  const double y_mean = mean(y);

  Matrix xc(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) xc(r, c) = x(r, c) - col_mean[c];
  }
  Matrix g = gram(xc);
  for (std::size_t i = 0; i < d; ++i) g(i, i) += lambda;
  Vector rhs(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double yc = y[r] - y_mean;
    for (std::size_t c = 0; c < d; ++c) rhs[c] += xc(r, c) * yc;
  }
  RidgeFit fit;
  fit.weights = cholesky_solve(g, rhs);
  fit.intercept = y_mean - dot(col_mean, fit.weights);
  return fit;
}

Vector predict(const RidgeFit& fit, const Matrix& x) {
  Vector out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) out[r] = dot(x.row(r), fit.weights) + fit.intercept;
  return out;
}

ProbeDataset ProbeDataset::make(HookSite site, const Matrix& raw_rows, Vector targets, std::vector<int> prompt_ids) {
  if (raw_rows.rows() != targets.size()) throw DomainError("probe dataset: rows/targets mismatch");
  if (!prompt_ids.empty() && prompt_ids.size() != targets.size()) {
    throw DomainError("probe dataset: rows/prompt ids mismatch");
  }
  ProbeDataset ds;
  ds.site = site;
  ds.rows = zscore_apply(zscore_fit(raw_rows), raw_rows);
  ds.targets = std::move(targets);
  ds.prompt_ids = std::move(prompt_ids);
  return ds;
}

double fit_sign_probe(const ProbeDataset& data, const ProbeSettings& settings) {
  std::vector<int> labels;
  for (double t : data.targets) labels.push_back(t > 0.5 ? 1 : 0);
  require_two_per_class(labels, "fit_sign_probe");
  const Split s = split_rows(labels.size(), settings.holdout_every);
  const Matrix fit_x = take_rows(data.rows, s.fit);
  const auto fit_y = take<int>(labels, s.fit);
  const LogisticFit fit = fit_logistic(fit_x, fit_y, settings);
  return auc(scores_of(fit, take_rows(data.rows, s.score)), take<int>(labels, s.score));
}

double fit_quant_probe(const ProbeDataset& data, const ProbeSettings& settings) {
  if (std::adjacent_find(data.targets.begin(), data.targets.end(), std::not_equal_to<>()) == data.targets.end()) {
    throw DomainError("fit_quant_probe: targets have no variance");
  }
  const Split s = split_rows(data.targets.size(), settings.holdout_every);
  const RidgeFit fit = fit_ridge(take_rows(data.rows, s.fit), take<double>(data.targets, s.fit), settings.ridge_lambda);
  const Vector y = take<double>(data.targets, s.score);
  const Vector pred = predict(fit, take_rows(data.rows, s.score));
  const double ym = mean(y);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - pred[i]) * (y[i] - pred[i]);
    ss_tot += (y[i] - ym) * (y[i] - ym);
  }
  if (ss_tot == 0.0) throw DomainError("fit_quant_probe: scored targets have no variance");
  return 1.0 - ss_res / ss_tot;
}

double fit_qual_probe(const ProbeDataset& data, const ProbeSettings& settings) {
  if (data.targets.size() < 3) throw DomainError("fit_qual_probe: need at least three rows");
  const Split s = split_rows(data.targets.size(), settings.holdout_every);
  const RidgeFit fit = fit_ridge(take_rows(data.rows, s.fit), take<double>(data.targets, s.fit), settings.ridge_lambda);
  const Vector pred = predict(fit, take_rows(data.rows, s.score));
  return spearman(pred, take<double>(data.targets, s.score));
}

Direction valence_axis(const Matrix& raw_rows, std::span<const int> signs, std::optional<HookSite> origin) {
  if (raw_rows.rows() != signs.size()) throw DomainError("valence_axis: rows/labels mismatch");
  Vector mu_pos(raw_rows.cols(), 0.0), mu_neg(raw_rows.cols(), 0.0);
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t r = 0; r < raw_rows.rows(); ++r) {
    if (signs[r] == 0) continue;
    Vector& acc = signs[r] > 0 ? mu_pos : mu_neg;
    (signs[r] > 0 ? n_pos : n_neg)++;
    auto row = raw_rows.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) acc[c] += row[c];
  }
  if (n_pos == 0 || n_neg == 0) throw DomainError("valence_axis: both classes required");
  Vector diff(raw_rows.cols());
  for (std::size_t c = 0; c < diff.size(); ++c) {
    diff[c] = mu_pos[c] / static_cast<double>(n_pos) - mu_neg[c] / static_cast<double>(n_neg);
  }
  return Direction::from_raw(diff, DirectionSource::valence_axis, origin);
}

Direction unembedding_axis(const Model& model, TokenId two, TokenId three) {
  const Vector a = model.unembedding_column(two);
  const Vector b = model.unembedding_column(three);
  Vector diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
  HookSite origin{model.config().n_layers - 1, Stream::ln_final, 1, std::nullopt};
  return Direction::from_raw(diff, DirectionSource::unembedding_axis, origin);
}

CorrLogits corr_logits(const Matrix& raw_rows, const Direction& axis, std::span<const double> logit2,
                       std::span<const double> logit3) {
  if (raw_rows.rows() < 3) throw DomainError("corr_logits: need at least three prompts");
  if (raw_rows.cols() != axis.size()) throw DomainError("corr_logits: axis width mismatch");
  Vector proj(raw_rows.rows());
  for (std::size_t r = 0; r < raw_rows.rows(); ++r) proj[r] = dot(raw_rows.row(r), axis.vector());
  const double r2 = pearson(proj, logit2);
  const double r3 = pearson(proj, logit3);
  if (std::abs(r3) > std::abs(r2)) return {r3, 3};
  return {r2, 2};
}

BowFeatures bow_features(std::span<const std::string> texts) {
  std::vector<std::vector<std::string>> grams(texts.size());
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto words = words_of(texts[i]);
    for (std::size_t w = 0; w < words.size(); ++w) {
      grams[i].push_back(words[w]);
      if (w + 1 < words.size()) grams[i].push_back(words[w] + " " + words[w + 1]);
    }
    for (const std::string& g : grams[i]) index.emplace(g, 0);
  }
  if (index.empty()) throw DomainError("bow_features: empty vocabulary");
  BowFeatures out;
  std::size_t col = 0;
  for (auto& [g, c] : index) {
    c = col++;
    out.vocabulary.push_back(g);
  }
  out.counts = Matrix(texts.size(), out.vocabulary.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    for (const std::string& g : grams[i]) out.counts(i, index.at(g)) += 1.0;
  }
  return out;
}

BowResult bow_baseline(std::span<const std::string> texts, std::span<const int> signs, const ProbeSettings& settings) {
  if (texts.size() != signs.size()) throw DomainError("bow_baseline: texts/labels mismatch");
  std::vector<int> labels;
  for (int s : signs) labels.push_back(s > 0 ? 1 : 0);
  require_two_per_class(labels, "bow_baseline");
  const BowFeatures f = bow_features(texts);
  const Split s = split_rows(labels.size(), settings.holdout_every);
  const LogisticFit fit = fit_logistic(take_rows(f.counts, s.fit), take<int>(labels, s.fit), settings);
  BowResult r;
  r.raw_auc = auc(scores_of(fit, take_rows(f.counts, s.score)), take<int>(labels, s.score));
  r.effective_auc = effective_auc(r.raw_auc);
  return r;
}

}  // namespace vlab
