// vlab: run valence-probing experiments on the toy transformer.
//
//   vlab run    --config exp.json [--set key=value]...
//   vlab probe  --config exp.json --output runs/probe
//   vlab report runs/probe
//
// Exit codes: 0 success, 2 configuration error, 3 stage failure.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "vlab/config.hpp"
#include "vlab/error.hpp"
#include "vlab/harness.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::string output;
  long long seed = -1;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("-c,--config", f.config, "Experiment configuration (JSON, comments allowed)");
  cmd->add_option("--set", f.sets, "Override a configuration key, e.g. --set probe.positions=[1,2,3]");
  cmd->add_option("-o,--output", f.output, "Output directory (relative paths honour VLAB_OUTPUT_ROOT)");
  cmd->add_option("--seed", f.seed, "Experiment seed");
}

vlab::ExperimentConfig load(const CommonFlags& f, const std::string& only_stage) {
  std::vector<std::string> overrides = f.sets;
  if (f.seed >= 0) overrides.push_back(fmt::format("seed={}", f.seed));
  if (!f.output.empty()) overrides.push_back(fmt::format("output=\"{}\"", f.output));
  if (!only_stage.empty()) overrides.push_back(fmt::format("stages=[\"{}\"]", only_stage));
  if (f.config.empty()) return vlab::parse_config("{}", overrides);
  return vlab::load_config(f.config, overrides);
}

int execute(const vlab::ExperimentConfig& config) {
  const vlab::RunManifest m = vlab::run(config);
  for (const std::string& s : m.completed_stages) std::cout << "stage " << s << ": ok\n";
  std::cout << "output: " << vlab::resolve_output(config.output).string() << "\n";
  if (!m.ok()) {
    std::cerr << "stage " << *m.failed_stage << " failed: " << m.error << "\n";
    return kExitStage;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Valence probing and intervention experiments on a toy transformer"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  CLI::App* run_cmd = app.add_subcommand("run", "Run every stage listed in the configuration");
  add_common(run_cmd, run_flags);

  const std::vector<std::pair<std::string, std::string>> stages{
      {"screen", "Sample completions and code choices"},
      {"probe", "Fit linear probes at every configured site"},
      {"bow", "Bag-of-words lexical baseline"},
      {"steer", "Epsilon sweep along the valence and unembedding axes"},
      {"patch", "Class-mean swap at the steering site"},
      {"ablate", "Directional ablation at the steering site"},
      {"heads", "Vector- and head-level swap and ablation"},
      {"sweep", "Layer sweep, site comparison and dose response"},
      {"dump", "Write probe-site activations to a binary dump"}};
  std::vector<CommonFlags> stage_flags(stages.size());
  std::vector<CLI::App*> stage_cmds;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    stage_cmds.push_back(app.add_subcommand(stages[i].first, stages[i].second));
    add_common(stage_cmds.back(), stage_flags[i]);
  }

  std::string results_dir;
  CLI::App* report_cmd = app.add_subcommand("report", "Build report CSVs from a results directory");
  report_cmd->add_option("results", results_dir, "Results directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*report_cmd) {
      const vlab::ReportOutcome r = vlab::emit_reports(vlab::resolve_output(results_dir));
      for (const std::string& n : r.notices) std::cerr << "notice: " << n << "\n";
      for (const std::string& w : r.written) std::cout << w << "\n";
      return 0;
    }
    if (*run_cmd) return execute(load(run_flags, ""));
    for (std::size_t i = 0; i < stages.size(); ++i) {
      if (*stage_cmds[i]) return execute(load(stage_flags[i], stages[i].first));
    }
  } catch (const vlab::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return kExitStage;
}
