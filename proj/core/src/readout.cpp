#include "vlab/readout.hpp"

#include <cmath>

#include <fmt/format.h>

#include "vlab/error.hpp"

namespace vlab {

namespace {

double pool_logsumexp(std::span<const double> logits, std::span<const TokenId> ids) {
  if (ids.empty()) throw DomainError("empty digit pool");
  Vector v;
  v.reserve(ids.size());
  for (TokenId t : ids) {
    if (t < 0 || static_cast<std::size_t>(t) >= logits.size()) throw DomainError("pool token outside logits");
    v.push_back(logits[static_cast<std::size_t>(t)]);
  }
  return logsumexp(v);
}

}  // namespace

std::string_view to_string(ReadMode m) { return m == ReadMode::final_ ? "final" : "last"; }

ReadMode parse_read_mode(std::string_view s) {
  if (s == "final") return ReadMode::final_;
  if (s == "last") return ReadMode::last;
  throw ConfigError(fmt::format("unknown read mode '{}'", s));
}

double pooled_digit_logit(std::span<const double> logits, const DigitPool& pools, int digit) {
  return pool_logsumexp(logits, pools.pool(digit));
}

double margin_2_3(std::span<const double> logits, const DigitPool& pools) {
  return pooled_digit_logit(logits, pools, 2) - pooled_digit_logit(logits, pools, 3);
}

ChoiceProbs choice_probs(std::span<const double> logits, const DigitPool& pools,
                         const ReadoutOptions& options) {
  const double lse_all = logsumexp(logits);
  const double z2 = options.pool_p2_full
                        ? pooled_digit_logit(logits, pools, 2)
                        : logits[static_cast<std::size_t>(pools.canonical_token(2))];
  return {std::exp(z2 - lse_all), logistic(margin_2_3(logits, pools))};
}

DecisionReadout make_readout(std::span<const double> logits, const DigitPool& pools, ReadMode mode,
                             const ReadoutOptions& options) {
  DecisionReadout r;
  for (int d = 1; d <= 3; ++d) r.pooled[static_cast<std::size_t>(d - 1)] = pooled_digit_logit(logits, pools, d);
  r.margin = r.pooled[1] - r.pooled[2];
  const double lse_all = logsumexp(logits);
  const double z2 = options.pool_p2_full ? r.pooled[1] : logits[static_cast<std::size_t>(pools.canonical_token(2))];
  const double z3 = options.pool_p2_full ? r.pooled[2] : logits[static_cast<std::size_t>(pools.canonical_token(3))];
  r.p2_full = std::exp(z2 - lse_all);
  r.p3_full = std::exp(z3 - lse_all);
  r.p2_pair = logistic(r.margin);
  r.mode = mode;
  return r;
}

std::string format_readout_record(int prompt_id, const DecisionReadout& r) {
  return fmt::format("prompt_id={}\tread={}\tlogit_1={:.17g}\tlogit_2={:.17g}\tlogit_3={:.17g}\tmargin={:.17g}\tp2_full={:.17g}\tp2_pair={:.17g}",
                     prompt_id, to_string(r.mode), r.pooled[0], r.pooled[1], r.pooled[2], r.margin,
                     r.p2_full, r.p2_pair);
}

}  // namespace vlab
