#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "golden_check.hpp"
#include "support.hpp"
#include "vlab/harness.hpp"
#include "vlab/reports.hpp"

using namespace vlab;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "vlab_test_harness" / name;
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<json> jsonl(const fs::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) out.push_back(json::parse(line));
  return out;
}

CsvTable csv(const fs::path& p) { return parse_csv(slurp(p)); }

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::map<std::string, std::string> checksums(const RunManifest& m) {
  std::map<std::string, std::string> out;
  for (const FileEntry& f : m.files) out[f.path] = f.checksum;
  return out;
}

struct FullRun {
  fs::path dir;
  RunManifest manifest;
};

const FullRun& full_run() {
  static const FullRun r = [] {
    FullRun f;
    f.dir = scratch("full");
    f.manifest = run(testing_support::small_experiment(f.dir));
    return f;
  }();
  return r;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(VLAB_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("a full run completes every stage and report") {
  const FullRun& r = full_run();
  INFO(r.manifest.error);
  REQUIRE(r.manifest.ok());
  CHECK(r.manifest.completed_stages.size() == std::size(kStageNames));
  for (const auto& name : golden::report_names()) CHECK(fs::exists(r.dir / "reports" / (name + ".csv")));
  CHECK(fs::exists(r.dir / "reports" / "summary.txt"));

  const json m = json::parse(slurp(r.dir / "manifest.json"));
  CHECK(m["failed_stage"].is_null());
  CHECK(m["artifact_version"] == std::string(kArtifactVersion));
  CHECK(m["config_hash"].get<std::string>().size() == 16);
  const auto sums = checksums(r.manifest);
  CHECK(sums.count("steer.jsonl") == 1);
  CHECK(sums.count("activations.bin") == 1);
  CHECK(sums.count("manifest.json") == 0);
  for (const FileEntry& f : r.manifest.files) CHECK(fs::file_size(r.dir / f.path) == f.bytes);
}

TEST_CASE("identical configurations reproduce every result byte") {
  const FullRun& first = full_run();
  const fs::path dir = scratch("again");
  const RunManifest again = run(testing_support::small_experiment(dir));
  REQUIRE(again.ok());
  auto a = checksums(first.manifest), b = checksums(again);
  // config.json records the output directory, the one input that differs here.
  CHECK(a.at("config.json") != b.at("config.json"));
  a.erase("config.json");
  b.erase("config.json");
  CHECK(a == b);

  const RunManifest rerun = run(testing_support::small_experiment(dir));
  CHECK(checksums(rerun) == checksums(again));
  CHECK(rerun.config_hash == again.config_hash);
}

TEST_CASE("report numbers trace to the raw records") {
  const FullRun& r = full_run();
  REQUIRE(r.manifest.ok());

  SUBCASE("steering baselines and extreme epsilons") {
    std::map<std::string, std::map<double, std::vector<double>>> margins;
    for (const json& j : jsonl(r.dir / "steer.jsonl"))
      margins[j["run"].get<std::string>()][j["eps"].get<double>()].push_back(j["margin"].get<double>());
    const CsvTable t = csv(r.dir / "reports" / "steering.csv");
    REQUIRE(t.rows.size() == margins.size());
    for (const auto& row : t.rows) {
      const auto& by_eps = margins.at(row[0]);
      auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
      };
      const double base = mean(by_eps.at(0.0)), top = mean(by_eps.at(2.0));
      CHECK(row[1] == fixed(base, 3));
      CHECK(row[2] == fixed(top, 3) + " (" + (top - base >= 0 ? "+" : "") + fixed(top - base, 3) + ")");
    }
  }

  SUBCASE("screening counts") {
    std::map<std::string, int> total, compliant;
    for (const json& j : jsonl(r.dir / "screen.jsonl")) {
      const std::string group = j["group"];
      ++total[group];
      if (j["code"] == "compliant") ++compliant[group];
    }
    const CsvTable t = csv(r.dir / "reports" / "screening.csv");
    REQUIRE(t.rows.size() == total.size());
    for (const auto& row : t.rows) {
      CHECK(row[1] == std::to_string(total.at(row[0])));
      CHECK(row[2] == std::to_string(compliant[row[0]]));
    }
  }

  SUBCASE("probe bests") {
    double best_auc = -1.0;
    for (const json& j : jsonl(r.dir / "probe.jsonl")) {
      const HookSite s = HookSite::parse(j["site"].get<std::string>());
      if (s.stream == Stream::mlp_out && s.pos == 1 && !j["sign_auc"].is_null())
        best_auc = std::max(best_auc, j["sign_auc"].get<double>());
    }
    const CsvTable t = csv(r.dir / "reports" / "probes_pos1.csv");
    const auto row = std::find_if(t.rows.begin(), t.rows.end(), [](const auto& x) { return x[0] == "mlp"; });
    REQUIRE(row != t.rows.end());
    CHECK((*row)[1].rfind(fixed(best_auc, 2) + " (L", 0) == 0);
    const json bow = json::parse(slurp(r.dir / "bow.json"));
    CHECK(t.rows.back()[1] ==
          fixed(bow["raw_auc"].get<double>(), 3) + " (" + fixed(bow["effective_auc"].get<double>(), 3) + ")");
  }

  SUBCASE("head rows and site interventions") {
    const CsvTable ab = csv(r.dir / "reports" / "heads_ablate.csv");
    std::size_t i = 0;
    for (const json& j : jsonl(r.dir / "heads.jsonl")) {
      if (j["kind"] != "ablate") continue;
      REQUIRE(i < ab.rows.size());
      CHECK(ab.rows[i][0] == j["component"].get<std::string>());
      CHECK(ab.rows[i][2] == fixed(j["ablated"].get<double>(), 3));
      ++i;
    }
    CHECK(i == ab.rows.size());

    double sum = 0.0;
    int n = 0;
    for (const json& j : jsonl(r.dir / "patch.jsonl")) {
      sum += j["margin"].get<double>();
      ++n;
    }
    const CsvTable si = csv(r.dir / "reports" / "site_interventions.csv");
    CHECK(si.rows[0][1] == fixed(sum / n, 3));
  }
}

TEST_CASE("a failing stage leaves a partial manifest") {
  const fs::path dir = scratch("partial");
  const RunManifest m = run(testing_support::small_experiment(
      dir, 3, {"stages=[\"screen\",\"probe\",\"bow\"]", "probe.from_dump=\"/nonexistent/activations.bin\""}));
  CHECK_FALSE(m.ok());
  CHECK(m.failed_stage == std::optional<std::string>("probe"));
  CHECK(m.completed_stages == std::vector<std::string>{"screen"});
  CHECK_FALSE(m.error.empty());
  const json j = json::parse(slurp(dir / "manifest.json"));
  CHECK(j["failed_stage"] == "probe");
  CHECK(j["completed_stages"] == json::array({"screen"}));
  CHECK(fs::exists(dir / "screen.jsonl"));
  CHECK_FALSE(fs::exists(dir / "bow.json"));
}

TEST_CASE("an empty results directory yields no reports") {
  const fs::path dir = scratch("empty");
  fs::create_directories(dir);
  CHECK_THROWS_AS(emit_reports(dir), StageFailure);
  CHECK_FALSE(fs::exists(dir / "reports"));
}

TEST_CASE("missing stages skip their reports with a notice") {
  const fs::path dir = scratch("steer_only");
  REQUIRE(run(testing_support::small_experiment(dir, 3, {"stages=[\"steer\"]"})).ok());
  const ReportOutcome out = emit_reports(dir);
  CHECK(out.written == std::vector<std::string>{"reports/steering.csv"});
  CHECK(std::any_of(out.notices.begin(), out.notices.end(),
                    [](const std::string& n) { return n.find("probe.jsonl") != std::string::npos; }));
}

TEST_CASE("probing from a dump equals probing from live forwards") {
  const fs::path live = scratch("live");
  REQUIRE(run(testing_support::small_experiment(live, 3, {"stages=[\"probe\",\"dump\"]", "probe.positions=[1,2]"}))
              .ok());
  const fs::path replay = scratch("replay");
  const std::string dump = "probe.from_dump=\"" + (live / "activations.bin").generic_string() + "\"";
  REQUIRE(run(testing_support::small_experiment(replay, 3, {"stages=[\"probe\"]", "probe.positions=[1,2]", dump}))
              .ok());
  CHECK(slurp(live / "probe.jsonl") == slurp(replay / "probe.jsonl"));

  const fs::path other = scratch("other_model");
  const RunManifest m = run(testing_support::small_experiment(other, 3, {"stages=[\"probe\"]", "model.rng_seed=99", dump}));
  CHECK(m.failed_stage == std::optional<std::string>("probe"));
}

TEST_CASE("output root environment variable") {
  ::setenv(kOutputRootEnv, "/tmp/vlab_root", 1);
  CHECK(resolve_output("runs/a") == fs::path("/tmp/vlab_root/runs/a"));
  CHECK(resolve_output("/abs/b") == fs::path("/abs/b"));
  ::unsetenv(kOutputRootEnv);
  CHECK(resolve_output("runs/a") == fs::path("runs/a"));
}

TEST_CASE("command line exit codes") {
  const fs::path root = scratch("cli");
  fs::create_directories(root);
  const fs::path config = root / "exp.json";
  {
    std::ofstream f(config);
    f << R"({
  // small model for a quick run
  "seed": 5,
  "model": {"n_layers": 3, "n_heads": 2, "d_head": 8, "d_model": 16, "d_mlp": 32, "vocab_size": 512, "max_seq": 256}
})";
  }
  const std::string env = "VLAB_OUTPUT_ROOT=" + root.string() + " ";
  const fs::path out = root / "out";
  CHECK(cli("probe --config " + config.string() + " --output " + out.string()) == 0);
  CHECK(fs::exists(out / "probe.jsonl"));
  CHECK(cli("report " + out.string()) == 0);
  CHECK(fs::exists(out / "reports" / "probes_pos1.csv"));
  CHECK_FALSE(fs::exists(out / "reports" / "steering.csv"));

  const std::string relative = "cd / && VLAB_OUTPUT_ROOT=" + root.string() + " " + VLAB_CLI + " bow --config " +
                               config.string() + " --output rel --seed 6 > /dev/null 2>&1";
  const int status = std::system(relative.c_str());
  CHECK(WEXITSTATUS(status) == 0);
  CHECK(fs::exists(root / "rel" / "bow.json"));
  CHECK(json::parse(slurp(root / "rel" / "config.json"))["seed"] == 6);

  CHECK(cli("probe --config " + config.string() + " --output " + (root / "bad").string() +
            " --set probe.positions=[0]") == 2);
  CHECK(cli("probe --config " + (root / "missing.json").string()) == 2);
  CHECK(cli("probe --config " + config.string() + " --set model.width=3") == 2);
  CHECK(cli("probe --config " + config.string() + " --output " + (root / "fail").string() +
            " --set probe.from_dump=\\\"/nonexistent.bin\\\"") == 3);
  fs::create_directories(root / "empty");
  CHECK(cli("report " + (root / "empty").string()) == 3);
}
