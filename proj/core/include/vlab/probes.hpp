#pragma once

// Linear decodability: sign AUC, quantitative R^2, qualitative Spearman rho,
// valence axis, Corr(logits) and a bag-of-words lexical baseline.
//
// Probes are fit and scored on the same rows unless ProbeSettings asks for a
// held-out split.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vlab/numkit.hpp"
#include "vlab/toymodel.hpp"

namespace vlab {

enum class DirectionSource { valence_axis, unembedding_axis, planted, custom };

std::string_view to_string(DirectionSource s);

// Unit vector in a site's activation space.
class Direction {
 public:
  // Normalises raw; throws DegenerateDirection if |raw| < 1e-10.
  static Direction from_raw(std::span<const double> raw, DirectionSource source, std::optional<HookSite> origin = {});
  // Accepts an already-unit vector (|v| within 1e-10 of 1).
  static Direction from_unit(Vector unit, DirectionSource source, std::optional<HookSite> origin = {});

  const Vector& vector() const noexcept { return unit_; }
  std::size_t size() const noexcept { return unit_.size(); }
  DirectionSource source() const noexcept { return source_; }
  const std::optional<HookSite>& origin() const noexcept { return origin_; }
  Direction negated() const;

 private:
  Vector unit_;
  DirectionSource source_ = DirectionSource::custom;
  std::optional<HookSite> origin_;
};

struct ProbeSettings {
  double ridge_lambda = 1.0;
  int logistic_iters = 500;
  double logistic_step = 0.1;
  double logistic_l2 = 1e-3;
  // 0 keeps in-pool evaluation. k >= 2 scores only every k-th row and fits
  // on the rest.
  int holdout_every = 0;
};

// P(score+ > score-) + 0.5 P(tie), via midranks. labels are 1 / 0.
double auc(std::span<const double> scores, std::span<const int> labels);

// max(auc, 1 - auc)
double effective_auc(double raw_auc);

struct LogisticFit {
  Vector weights;
  double bias = 0.0;
};

// Full-batch gradient descent from zero, fixed iteration count.
LogisticFit fit_logistic(const Matrix& x, std::span<const int> labels, const ProbeSettings& settings);

struct RidgeFit {
  Vector weights;
  double intercept = 0.0;
};

// Closed form (X_c^T X_c + lambda I) w = X_c^T (y - mean y) on centred columns.
RidgeFit fit_ridge(const Matrix& x, std::span<const double> y, double lambda);
Vector predict(const RidgeFit& fit, const Matrix& x);

// Activations at one site plus aligned labels. rows are z-scored on construction.
struct ProbeDataset {
  HookSite site;
  Matrix rows;
  Vector targets;
  std::vector<int> prompt_ids;

  static ProbeDataset make(HookSite site, const Matrix& raw_rows, Vector targets, std::vector<int> prompt_ids);
};

// targets in {0, 1}. Throws DomainError without at least two rows per class.
double fit_sign_probe(const ProbeDataset& data, const ProbeSettings& settings = {});
// targets are signed magnitudes. Throws DomainError on constant targets.
double fit_quant_probe(const ProbeDataset& data, const ProbeSettings& settings = {});
// targets are ordinal ranks. Throws UndefinedCorrelation on constant predictions.
double fit_qual_probe(const ProbeDataset& data, const ProbeSettings& settings = {});

// unit(mean(rows | sign > 0) - mean(rows | sign < 0)) on raw activations.
Direction valence_axis(const Matrix& raw_rows, std::span<const int> signs, std::optional<HookSite> origin = {});

// unit(W_U[:, two] - W_U[:, three])
Direction unembedding_axis(const Model& model, TokenId two, TokenId three);

struct CorrLogits {
  double r = 0.0;
  int digit = 2;  // which logit series gave the larger |r|
};

// Pearson between projection onto the axis and each of the logit-2 and
// logit-3 series; the one with larger magnitude, sign kept.
CorrLogits corr_logits(const Matrix& raw_rows, const Direction& axis, std::span<const double> logit2,
                       std::span<const double> logit3);

// --- lexical baseline --------------------------------------------------------

// Lowercased word 1-grams and 2-grams, split on whitespace and punctuation.
struct BowFeatures {
  std::vector<std::string> vocabulary;
  Matrix counts;
};

BowFeatures bow_features(std::span<const std::string> texts);

struct BowResult {
  double raw_auc = 0.0;
  double effective_auc = 0.0;
};

// Logistic probe on raw count features; signs are +1 / -1.
BowResult bow_baseline(std::span<const std::string> texts, std::span<const int> signs,
                       const ProbeSettings& settings = {});

// --- per-site report -----------------------------------------------------------

struct SiteScores {
  HookSite site;
  std::optional<double> sign_auc;
  std::optional<double> r2_pain;
  std::optional<double> r2_pleasure;
  std::optional<double> rho_pain;
  std::optional<double> rho_pleasure;
  std::optional<double> corr_logits;
};

struct ProbeReport {
  std::vector<SiteScores> sites;
};

}  // namespace vlab
