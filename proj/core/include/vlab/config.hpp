#pragma once

// Experiment definition. Stored as a JSON document (comments allowed); every
// key has a default except "seed". Overrides use "dotted.key=value" where the
// value is parsed as JSON when possible and taken as a string otherwise.
//
//   {
//     "seed": 7,
//     "output": "runs/demo",
//     "stages": ["probe", "bow", "steer", "report"],
//     "model": {"n_layers": 6, "n_heads": 4, "d_model": 64, "d_head": 16, "d_mlp": 256,
//               "vocab_size": 512, "max_seq": 256},
//     "plant": {"layer": 2, "pos": 1, "gain_std": 5.0},
//     "corpus": {"reps": 1, "markers": false},
//     "tokenizer": {"space_digits": true, "newline_digits": true},
//     "probe": {"layers": "all", "streams": ["resid_pre", "resid_post", "attn_out", "mlp_out"],
//               "positions": [1], "ridge_lambda": 1.0, "logistic_iters": 500,
//               "logistic_step": 0.1, "logistic_l2": 0.001, "holdout_every": 0,
//               "from_dump": null},
//     "screen": {"samples": 50, "temperature": 1.0, "max_new_tokens": 64},
//     "steer": {"site": "resid_post@L5:pos-1", "grid": "standard", "epsilon_unit": "raw",
//               "read": ["final", "last"]},
//     "sweep": {"layers": "all", "sites": ["attn_out@L4:pos-1", "resid_post@L5:pos-1"],
//               "dose_heads": [[0], [1], [2], [3], [0, 1, 2, 3]]},
//     "heads": {"layer": 4, "pos": 1,
//               "sets": ["vector", [0], [1], [2], [3], [1, 2, 3], [0, 1, 2, 3]]},
//     "readout": {"pool_p2_full": true, "pool_corr_logits": true}
//   }
//
// Layer-valued defaults follow the model depth: the steering site is
// resid_post of the last layer and the head stage uses the layer before it.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vlab/intervene.hpp"
#include "vlab/probes.hpp"
#include "vlab/readout.hpp"
#include "vlab/taskgen.hpp"
#include "vlab/toymodel.hpp"

namespace vlab {

inline constexpr std::string_view kStageNames[] = {"screen", "probe", "bow",  "steer", "patch",
                                                   "ablate", "heads", "sweep", "dump", "report"};

struct PlantSpec {
  int layer = 2;
  int pos = 1;
  // Plant gain in units of the pooled resid_post standard deviation at the
  // plant site, measured on the unplanted model.
  double gain_std = 5.0;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output;
  std::vector<std::string> stages;

  ModelConfig model;
  std::optional<PlantSpec> plant;
  int corpus_reps = 1;
  bool corpus_markers = false;
  Tokenizer::Options tokenizer;

  std::vector<int> probe_layers;
  std::vector<Stream> probe_streams;
  std::vector<int> probe_positions;
  ProbeSettings probe_settings;

  ScreeningSettings screening;

  HookSite steer_site;
  EpsilonGrid grid;
  bool epsilon_site_std = false;
  std::vector<ReadMode> read_modes;

  std::vector<int> sweep_layers;
  std::vector<HookSite> compare_sites;
  std::vector<HeadSet> dose_heads;

  int heads_layer = 0;
  int heads_pos = 1;
  std::vector<HeadSet> head_sets;

  ReadoutOptions readout;
  // Corr(logits) against pooled digit logits (true) or the bare digit tokens.
  bool pool_corr_logits = true;
  // Probe directly from an activation dump instead of live forwards.
  std::optional<std::filesystem::path> probe_dump;

  bool has_stage(std::string_view name) const;
  // Every probe site (layer-major, then stream, then position).
  std::vector<HookSite> probe_sites() const;
  // Normalised JSON text of the parsed configuration.
  std::string canonical() const;
};

// Throws ConfigError on malformed text, unknown keys, invalid values, a
// missing seed, or sites that do not exist for the configured model.
ExperimentConfig parse_config(std::string_view text, std::span<const std::string> overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides = {});

// "vector (all heads)", "head 2", "heads 1-3", "heads 0,2"
std::string head_set_label(std::span<const int> heads);

}  // namespace vlab
