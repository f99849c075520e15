#pragma once

// Decision metrics from final-position logits. All arithmetic is double.

#include <array>
#include <span>
#include <string>
#include <string_view>

#include "vlab/taskgen.hpp"

namespace vlab {

// final: post-final-LayerNorm logits of the whole model.
// last:  logit-lens readout of resid_post at the intervened layer.
enum class ReadMode { final_, last };

std::string_view to_string(ReadMode m);
ReadMode parse_read_mode(std::string_view s);

struct ReadoutOptions {
  // Sum softmax mass over the whole digit-2 pool (true) or use only the bare
  // "2" token (false) for p2_full.
  bool pool_p2_full = true;
};

struct DecisionReadout {
  std::array<double, 3> pooled{};  // pooled logit of digits 1, 2, 3
  double margin = 0.0;             // pooled(2) - pooled(3)
  double p2_full = 0.0;            // full-vocabulary probability of "2"
  double p3_full = 0.0;
  double p2_pair = 0.0;            // logistic(margin)
  ReadMode mode = ReadMode::final_;
};

// log-sum-exp over the digit's variant logits.
double pooled_digit_logit(std::span<const double> logits, const DigitPool& pools, int digit);

double margin_2_3(std::span<const double> logits, const DigitPool& pools);

struct ChoiceProbs {
  double p2_full = 0.0;
  double p2_pair = 0.0;
};

ChoiceProbs choice_probs(std::span<const double> logits, const DigitPool& pools,
                         const ReadoutOptions& options = {});

DecisionReadout make_readout(std::span<const double> logits, const DigitPool& pools, ReadMode mode,
                             const ReadoutOptions& options = {});

// One line with named fields, in this order:
// prompt_id read logit_1 logit_2 logit_3 margin p2_full p2_pair
std::string format_readout_record(int prompt_id, const DecisionReadout& r);

}  // namespace vlab
