#pragma once

// Experiment orchestration: model and corpus assembly, stage execution,
// raw per-prompt records (JSON lines), report emission and the run manifest.
//
// Files in an output directory:
//   corpus.tsv            prompt manifest
//   screen.jsonl          one line per sampled trial
//   probe.jsonl           one line per probed site
//   bow.json              lexical baseline
//   steer.jsonl           one line per (run, epsilon, prompt)
//   patch.jsonl           one line per prompt (swap at the steering site)
//   ablate.jsonl          one line per prompt (ablation at the steering site)
//   heads.jsonl           one line per head-set row (swap and ablation)
//   sweep.jsonl           one line per (group, point, epsilon, prompt)
//   activations.bin       activation dump of the probe sites
//   reports/*.csv         report tables built only from the files above
//   manifest.json         config hash, timestamps, stage status, checksums

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vlab/config.hpp"
#include "vlab/error.hpp"
#include "vlab/intervene.hpp"
#include "vlab/probes.hpp"
#include "vlab/taskgen.hpp"
#include "vlab/toymodel.hpp"

namespace vlab {

inline constexpr std::string_view kArtifactVersion = "0.3.0";
inline constexpr const char* kOutputRootEnv = "VLAB_OUTPUT_ROOT";

// A stage that could not complete (CLI exit code 3).
class StageFailure : public Error {
 public:
  using Error::Error;
};

// Deterministic unit vector drawn from N(0, I).
Vector random_unit_vector(std::size_t dim, std::uint64_t seed);

// Population standard deviation of every entry of rows.
double pooled_std(const Matrix& rows);

struct Experiment {
  ExperimentConfig config;
  Tokenizer tokenizer;
  ReadoutContext readout;
  std::vector<PromptRecord> corpus;
  Model model;
};

// Tokenizer, probe corpus (marker copies when configured) and model. A
// planted model's gain is plant.gain_std times the pooled std of the plant
// site measured on the unplanted model over the same corpus.
Experiment prepare_experiment(const ExperimentConfig& config);

// Per-site probe scores from raw site activations. logit2/logit3 are the
// per-prompt decision logits for Corr(logits). Undefined scores stay empty.
std::vector<SiteScores> score_sites(std::span<const HookSite> sites, std::span<const Matrix> rows,
                                    std::span<const PromptRecord> corpus, std::span<const double> logit2,
                                    std::span<const double> logit3, const ProbeSettings& settings);

struct FileEntry {
  std::string path;  // relative to the output directory
  std::uintmax_t bytes = 0;
  std::string checksum;  // FNV-1a 64, hex
};

struct RunManifest {
  std::string config_hash;
  std::string model_hash;
  std::string artifact_version{kArtifactVersion};
  std::string started;
  std::string finished;
  std::vector<std::string> completed_stages;
  std::optional<std::string> failed_stage;
  std::string error;
  std::vector<FileEntry> files;

  bool ok() const { return !failed_stage.has_value(); }
  std::string to_json() const;
};

// Applies VLAB_OUTPUT_ROOT to relative paths.
std::filesystem::path resolve_output(const std::filesystem::path& output);

// Runs the configured stages in canonical order. A failing stage stops the
// run; the manifest written so far names the completed stages and the error.
RunManifest run(const ExperimentConfig& config);

struct ReportOutcome {
  std::vector<std::string> written;  // relative paths
  std::vector<std::string> notices;  // skipped reports
};

// Builds reports/ from the raw record files of a results directory.
ReportOutcome emit_reports(const std::filesystem::path& results_dir);

}  // namespace vlab
