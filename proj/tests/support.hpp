#pragma once

// Shared fixtures: small models for fast tests and the probe corpus.

#include <filesystem>
#include <string>
#include <vector>

#include "vlab/config.hpp"
#include "vlab/taskgen.hpp"
#include "vlab/toymodel.hpp"

namespace testing_support {

// Three layers, two heads: enough for early/late and per-head contrasts.
inline vlab::ModelConfig small_config(std::uint64_t seed = 11) {
  vlab::ModelConfig c;
  c.n_layers = 3;
  c.n_heads = 2;
  c.d_head = 8;
  c.d_model = 16;
  c.d_mlp = 32;
  c.vocab_size = 512;
  c.max_seq = 256;
  c.rng_seed = seed;
  return c;
}

inline const vlab::Tokenizer& tokenizer() {
  static const vlab::Tokenizer t = vlab::Tokenizer::build();
  return t;
}

inline const std::vector<vlab::PromptRecord>& probe_corpus() {
  static const std::vector<vlab::PromptRecord> c = vlab::build_corpus(vlab::probe_corpus_spec(), tokenizer());
  return c;
}

// A fast end-to-end configuration: tiny model, short screening, small grid.
inline vlab::ExperimentConfig small_experiment(const std::filesystem::path& output, int n_layers = 3,
                                               std::vector<std::string> overrides = {}) {
  const std::string text = R"({
    "seed": 21,
    "model": {"n_layers": )" + std::to_string(n_layers) + R"(, "n_heads": 2, "d_head": 8, "d_model": 16, "d_mlp": 32,
              "vocab_size": 512, "max_seq": 256},
    "screen": {"samples": 2, "max_new_tokens": 4},
    "steer": {"grid": [-2, -1, 0, 1, 2]}
  })";
  overrides.push_back("output=\"" + output.generic_string() + "\"");
  return vlab::parse_config(text, overrides);
}

}  // namespace testing_support
