#include "vlab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "vlab/activations.hpp"
#include "vlab/numkit.hpp"
#include "vlab/reports.hpp"

namespace vlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex64(std::uint64_t h) { return fmt::format("{:016x}", h); }

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw StageFailure(fmt::format("cannot read {}", p.string()));
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, std::string_view text) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw StageFailure(fmt::format("cannot write {}", p.string()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!os) throw StageFailure(fmt::format("write failed for {}", p.string()));
}

class JsonLines {
 public:
  explicit JsonLines(const fs::path& p) : path_(p) {}
  void add(const json& j) {
    text_ += j.dump();
    text_ += '\n';
  }
  void flush() { write_file(path_, text_); }

 private:
  fs::path path_;
  std::string text_;
};

std::vector<json> read_json_lines(const fs::path& p) {
  const std::string text = read_file(p);
  std::vector<json> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    if (nl > start) {
      json j = json::parse(text.substr(start, nl - start), nullptr, false);
      if (j.is_discarded()) throw ParseError(fmt::format("{}: malformed record", p.filename().string()), start);
      out.push_back(std::move(j));
    }
    start = nl + 1;
  }
  return out;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_of(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

json readout_json(const DecisionReadout& r) {
  return {{"logit_1", r.pooled[0]}, {"logit_2", r.pooled[1]}, {"logit_3", r.pooled[2]}, {"margin", r.margin},
          {"p2_full", r.p2_full},   {"p3_full", r.p3_full},   {"p2_pair", r.p2_pair}};
}

DecisionReadout readout_of(const json& j) {
  DecisionReadout r;
  r.pooled = {j.at("logit_1").get<double>(), j.at("logit_2").get<double>(), j.at("logit_3").get<double>()};
  r.margin = j.at("margin").get<double>();
  r.p2_full = j.at("p2_full").get<double>();
  r.p3_full = j.at("p3_full").get<double>();
  r.p2_pair = j.at("p2_pair").get<double>();
  r.mode = parse_read_mode(j.at("read").get<std::string>());
  return r;
}

void add_sweep(JsonLines& out, const SweepResult& s, const std::string& group) {
  for (std::size_t k = 0; k < s.epsilons.size(); ++k) {
    for (std::size_t p = 0; p < s.prompt_ids.size(); ++p) {
      json j = readout_json(s.readouts[k][p]);
      if (!group.empty()) j["group"] = group;
      j["run"] = s.label;
      j["site"] = s.site.label();
      j["read"] = std::string(to_string(s.mode));
      j["eps"] = s.epsilons[k];
      j["prompt_id"] = s.prompt_ids[p];
      out.add(j);
    }
  }
}

// Rebuilds sweeps from records, keeping first-appearance order of runs,
// epsilons and prompts.
std::vector<SweepResult> read_sweeps(const std::vector<json>& records, const std::string& group) {
  std::vector<SweepResult> out;
  std::map<std::string, std::size_t> index;
  std::vector<std::map<double, std::size_t>> eps_index;
  std::vector<std::map<int, std::size_t>> prompt_index;
  for (const json& j : records) {
    if (!group.empty() && j.value("group", "") != group) continue;
    const std::string run = j.at("run").get<std::string>();
    auto [it, fresh] = index.emplace(run, out.size());
    if (fresh) {
      SweepResult s;
      s.label = run;
      s.site = HookSite::parse(j.at("site").get<std::string>());
      s.mode = parse_read_mode(j.at("read").get<std::string>());
      out.push_back(std::move(s));
      eps_index.emplace_back();
      prompt_index.emplace_back();
    }
    SweepResult& s = out[it->second];
    const double eps = j.at("eps").get<double>();
    const int pid = j.at("prompt_id").get<int>();
    auto [ei, new_eps] = eps_index[it->second].emplace(eps, s.epsilons.size());
    if (new_eps) {
      s.epsilons.push_back(eps);
      s.readouts.emplace_back();
    }
    auto [pi, new_prompt] = prompt_index[it->second].emplace(pid, s.prompt_ids.size());
    if (new_prompt) s.prompt_ids.push_back(pid);
    auto& row = s.readouts[ei->second];
    if (row.size() <= pi->second) row.resize(pi->second + 1);
    row[pi->second] = readout_of(j);
  }
  for (const SweepResult& s : out) {
    for (const auto& row : s.readouts) {
      if (row.size() != s.prompt_ids.size()) throw ParseError(fmt::format("sweep '{}' is incomplete", s.label), 0);
    }
  }
  return out;
}

std::vector<int> signs_of(std::span<const PromptRecord> corpus) {
  std::vector<int> s;
  for (const PromptRecord& r : corpus) s.push_back(r.sign_label());
  return s;
}

Direction site_axis(const Model& model, std::span<const PromptRecord> corpus, const HookSite& site) {
  const std::vector<Matrix> rows = collect_activations(model, corpus, std::span(&site, 1));
  return valence_axis(rows[0], signs_of(corpus), site);
}

std::string site_name(const HookSite& s) { return fmt::format("{} L{}", to_string(s.stream), s.layer); }

// --- stages ------------------------------------------------------------------

void stage_screen(const Experiment& ex, const fs::path& out) {
  const std::vector<PromptRecord> prompts = build_corpus(screening_corpus_spec(), ex.tokenizer);
  const ScreeningTable table = screen_and_code(ex.model, ex.tokenizer, prompts, ex.config.screening);
  JsonLines lines(out / "screen.jsonl");
  for (const ScreeningTrial& t : table.trials) {
    const char* code = t.coded.code == ResponseCode::compliant   ? "compliant"
                       : t.coded.code == ResponseCode::ambiguous ? "ambiguous"
                                                                 : "noncompliant";
    lines.add({{"record_id", t.record_id},
               {"group", screening_group(t.condition)},
               {"valence", std::string(to_string(t.condition.valence))},
               {"scale", std::string(to_string(t.condition.scale))},
               {"intensity", t.condition.intensity},
               {"sample", t.sample},
               {"completion", ex.tokenizer.decode(t.completion)},
               {"code", code},
               {"choice", t.coded.choice}});
  }
  lines.flush();
}

void stage_probe(const Experiment& ex, const fs::path& out) {
  const std::vector<HookSite> sites = ex.config.probe_sites();
  std::vector<Matrix> rows;
  if (ex.config.probe_dump) {
    const ActivationDump dump = load_dump(*ex.config.probe_dump, ex.model.config_hash());
    std::vector<int> ids;
    for (const PromptRecord& r : ex.corpus) ids.push_back(r.id);
    if (dump.prompt_ids != ids) throw StageFailure("activation dump covers a different prompt set");
    for (const HookSite& s : sites) rows.push_back(dump.rows(dump.find(s)));
  } else {
    // Probes see float32 features on both paths so a dump rerun reproduces the live scores exactly.
    for (Matrix& m : collect_activations(ex.model, ex.corpus, sites)) rows.push_back(round_to_float(m));
  }

  const DigitPool pools = ex.config.pool_corr_logits ? ex.readout.pools : ex.readout.pools.single_variant();
  Vector l2(ex.corpus.size()), l3(ex.corpus.size());
  parallel_for(ex.corpus.size(), [&](std::size_t i) {
    const HookedResult hr = ex.model.forward_hooked(ex.corpus[i].tokens, {}, false);
    l2[i] = pooled_digit_logit(hr.logits, pools, 2);
    l3[i] = pooled_digit_logit(hr.logits, pools, 3);
  });

  const std::vector<SiteScores> scores = score_sites(sites, rows, ex.corpus, l2, l3, ex.config.probe_settings);
  JsonLines lines(out / "probe.jsonl");
  for (const SiteScores& s : scores) {
    lines.add({{"site", s.site.label()},
               {"sign_auc", opt(s.sign_auc)},
               {"r2_pain", opt(s.r2_pain)},
               {"r2_pleasure", opt(s.r2_pleasure)},
               {"rho_pain", opt(s.rho_pain)},
               {"rho_pleasure", opt(s.rho_pleasure)},
               {"corr_logits", opt(s.corr_logits)},
               {"n", ex.corpus.size()}});
  }
  lines.flush();
}

void stage_bow(const Experiment& ex, const fs::path& out) {
  std::vector<std::string> texts;
  std::vector<int> signs;
  for (const PromptRecord& r : ex.corpus) {
    texts.push_back(r.text);
    signs.push_back(r.sign_label());
  }
  const BowResult b = bow_baseline(texts, signs, ex.config.probe_settings);
  const json j{{"raw_auc", b.raw_auc},
               {"effective_auc", b.effective_auc},
               {"n", texts.size()},
               {"vocabulary", bow_features(texts).vocabulary.size()}};
  write_file(out / "bow.json", j.dump() + "\n");
}

EpsilonGrid grid_for(const Experiment& ex, const HookSite& site) {
  if (!ex.config.epsilon_site_std) return ex.config.grid;
  const std::vector<Matrix> rows = collect_activations(ex.model, ex.corpus, std::span(&site, 1));
  return ex.config.grid.scaled(pooled_std(rows[0]));
}

void stage_steer(const Experiment& ex, const fs::path& out) {
  const HookSite& site = ex.config.steer_site;
  const Direction axis = site_axis(ex.model, ex.corpus, site);
  const EpsilonGrid grid = grid_for(ex, site);
  JsonLines lines(out / "steer.jsonl");
  for (ReadMode mode : ex.config.read_modes) {
    SweepResult s = epsilon_sweep(ex.model, ex.corpus, site, axis, grid, mode, ex.readout);
    s.label = mode == ReadMode::final_ ? "Valence axis (read=final)" : "Valence axis (local read=last)";
    add_sweep(lines, s, "");
  }
  if (site_width(ex.model.config(), site) == static_cast<std::size_t>(ex.model.config().d_model)) {
    const Direction u =
        unembedding_axis(ex.model, ex.readout.pools.canonical_token(2), ex.readout.pools.canonical_token(3));
    SweepResult s = epsilon_sweep(ex.model, ex.corpus, site, u, grid, ReadMode::final_, ex.readout);
    s.label = "Unembedding (sanity)";
    add_sweep(lines, s, "");
  }
  lines.flush();
}

void stage_site_intervention(const Experiment& ex, const fs::path& out, bool swap) {
  const HookSite& site = ex.config.steer_site;
  const std::vector<SiteInterventionRow> rows =
      site_interventions(ex.model, ex.corpus, site, ReadMode::final_, ex.readout);
  const SiteInterventionRow& row = rows[swap ? 0 : 1];
  JsonLines lines(out / (swap ? "patch.jsonl" : "ablate.jsonl"));
  for (std::size_t i = 0; i < ex.corpus.size(); ++i) {
    lines.add({{"intervention", row.label},
               {"site", site.label()},
               {"prompt_id", ex.corpus[i].id},
               {"baseline_margin", row.baseline_margins[i]},
               {"margin", row.margins[i]}});
  }
  lines.flush();
}

void stage_heads(const Experiment& ex, const fs::path& out) {
  const HeadTable t = head_table(ex.model, ex.corpus, ex.config.heads_layer, ex.config.heads_pos,
                                 ex.config.head_sets, ReadMode::final_, ex.readout);
  JsonLines lines(out / "heads.jsonl");
  const std::string site = HookSite{ex.config.heads_layer, Stream::attn_out, ex.config.heads_pos, {}}.label();
  for (const SwapRow& r : t.swap) {
    lines.add({{"kind", "swap"},
               {"site", site},
               {"component", r.label},
               {"pleasure_mean", r.pleasure_mean},
               {"pain_mean", r.pain_mean},
               {"delta", r.delta}});
  }
  for (const AblateRow& r : t.ablate) {
    lines.add({{"kind", "ablate"},
               {"site", site},
               {"component", r.label},
               {"baseline", r.baseline},
               {"ablated", r.ablated},
               {"delta", r.delta},
               {"percent_change", opt(r.percent_change)}});
  }
  lines.flush();
}

void stage_sweep(const Experiment& ex, const fs::path& out) {
  const ExperimentConfig& c = ex.config;
  JsonLines lines(out / "sweep.jsonl");

  const auto axis_for = [&](const HookSite& s) { return site_axis(ex.model, ex.corpus, s); };
  const EpsilonGrid grid = grid_for(ex, c.steer_site);
  for (const SweepResult& s :
       layer_sweep(ex.model, ex.corpus, c.steer_site, c.sweep_layers, axis_for, grid, ReadMode::final_, ex.readout)) {
    add_sweep(lines, s, "layer");
  }

  std::vector<SweepPoint> points;
  for (const HookSite& s : c.compare_sites) points.push_back({site_name(s), s, axis_for(s)});
  for (const SweepResult& s : site_compare(ex.model, ex.corpus, points, grid, ReadMode::final_, ex.readout)) {
    add_sweep(lines, s, "site");
  }

  SweepResult main = epsilon_sweep(ex.model, ex.corpus, c.steer_site, axis_for(c.steer_site), grid,
                                   ReadMode::final_, ex.readout);
  main.label = fmt::format("{} (valence steering)", site_name(c.steer_site));
  add_sweep(lines, main, "dose");

  std::vector<HookSite> head_sites;
  for (int h = 0; h < ex.model.config().n_heads; ++h) {
    head_sites.push_back(HookSite{c.heads_layer, Stream::head_z, c.heads_pos, h});
  }
  const std::vector<Matrix> head_rows = collect_activations(ex.model, ex.corpus, head_sites);
  const std::vector<int> signs = signs_of(ex.corpus);
  std::vector<Vector> head_axes;
  for (std::size_t h = 0; h < head_sites.size(); ++h) {
    head_axes.push_back(valence_axis(head_rows[h], signs, head_sites[h]).vector());
  }
  const HookSite attn{c.heads_layer, Stream::attn_out, c.heads_pos, std::nullopt};
  for (const HeadSet& set : c.dose_heads) {
    std::vector<Vector> dirs;
    for (int h : set.heads) dirs.push_back(head_axes[static_cast<std::size_t>(h)]);
    const std::string label = set.heads.size() == 1 ? fmt::format("{} ({} only)", site_name(attn), set.label)
                                                    : fmt::format("{} ({})", site_name(attn), set.label);
    const SweepResult s = sweep_edits(
        ex.model, ex.corpus, label, attn,
        [&](double eps) { return head_edits(c.heads_layer, c.heads_pos, set.heads, HeadEditKind::steer, dirs, eps); },
        grid, ReadMode::final_, ex.readout);
    add_sweep(lines, s, "dose");
  }
  lines.flush();
}

void stage_dump(const Experiment& ex, const fs::path& out) {
  save_dump(out / "activations.bin", make_dump(ex.model, ex.corpus, ex.config.probe_sites()));
}

std::vector<FileEntry> inventory(const fs::path& dir) {
  std::vector<FileEntry> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).generic_string();
    if (rel == "manifest.json") continue;
    const std::string bytes = read_file(e.path());
    files.push_back({rel, bytes.size(), hex64(fnv1a64(std::as_bytes(std::span(bytes.data(), bytes.size()))))});
  }
  std::sort(files.begin(), files.end(), [](const FileEntry& a, const FileEntry& b) { return a.path < b.path; });
  return files;
}

}  // namespace

Vector random_unit_vector(std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Vector v(dim);
  for (double& x : v) x = n(rng);
  return normalized(v);
}

double pooled_std(const Matrix& rows) {
  const auto d = rows.data();
  if (d.empty()) throw DomainError("pooled_std: empty matrix");
  const double m = mean(d);
  double ss = 0.0;
  for (double v : d) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(d.size()));
}

Experiment prepare_experiment(const ExperimentConfig& config) {
  Experiment ex{config, Tokenizer::build(config.tokenizer), {}, {}, {}};
  if (ex.tokenizer.size() > static_cast<std::size_t>(config.model.vocab_size)) {
    throw ConfigError(fmt::format("model.vocab_size {} is smaller than the tokenizer vocabulary ({})",
                                  config.model.vocab_size, ex.tokenizer.size()));
  }
  ex.readout = ReadoutContext{digit_token_pool(ex.tokenizer), config.readout};
  CorpusSpec spec = probe_corpus_spec();
  for (CorpusEntry& e : spec) e.reps *= config.corpus_reps;
  ex.corpus = config.corpus_markers ? build_marker_corpus(spec, ex.tokenizer) : build_corpus(spec, ex.tokenizer);
  for (const PromptRecord& r : ex.corpus) {
    if (r.tokens.size() > static_cast<std::size_t>(config.model.max_seq)) {
      throw ConfigError(fmt::format("prompt {} has {} tokens, above model.max_seq", r.id, r.tokens.size()));
    }
  }
  ex.model = build_model(config.model);
  if (config.plant) {
    const HookSite site{config.plant->layer, Stream::resid_post, config.plant->pos, std::nullopt};
    const std::vector<Matrix> rows = collect_activations(ex.model, ex.corpus, std::span(&site, 1));
    const double gain = config.plant->gain_std * pooled_std(rows[0]);
    const Vector dir = random_unit_vector(static_cast<std::size_t>(config.model.d_model), mix_seed(config.seed, 0x91a7));
    ex.model = build_planted_model(config.model, dir, site, gain);
  }
  return ex;
}

std::vector<SiteScores> score_sites(std::span<const HookSite> sites, std::span<const Matrix> rows,
                                    std::span<const PromptRecord> corpus, std::span<const double> logit2,
                                    std::span<const double> logit3, const ProbeSettings& settings) {
  if (sites.size() != rows.size()) throw DomainError("score_sites: one matrix per site required");
  const std::vector<int> signs = signs_of(corpus);

  const auto subset = [&](Valence v, Scale s) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      if (corpus[i].condition.valence == v && corpus[i].condition.scale == s) idx.push_back(i);
    }
    return idx;
  };
  const std::vector<std::size_t> pain_q = subset(Valence::pain, Scale::quantitative);
  const std::vector<std::size_t> ple_q = subset(Valence::pleasure, Scale::quantitative);
  const std::vector<std::size_t> pain_l = subset(Valence::pain, Scale::qualitative);
  const std::vector<std::size_t> ple_l = subset(Valence::pleasure, Scale::qualitative);

  std::vector<SiteScores> out(sites.size());
  parallel_for(sites.size(), [&](std::size_t k) {
    const Matrix& m = rows[k];
    SiteScores& sc = out[k];
    sc.site = sites[k];
    const auto attempt = [](auto&& fn) -> std::optional<double> {
      try {
        return fn();
      } catch (const DomainError&) {
        return std::nullopt;
      }
    };
    const auto dataset = [&](std::span<const std::size_t> idx, bool sign_targets) {
      Matrix sub(idx.size(), m.cols());
      Vector targets;
      std::vector<int> ids;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy(m.row(idx[i]).begin(), m.row(idx[i]).end(), sub.row(i).begin());
        const PromptRecord& r = corpus[idx[i]];
        targets.push_back(sign_targets ? (r.sign_label() > 0 ? 1.0 : 0.0) : r.condition.intensity);
        ids.push_back(r.id);
      }
      return ProbeDataset::make(sites[k], sub, std::move(targets), std::move(ids));
    };
    std::vector<std::size_t> signed_rows;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      if (signs[i] != 0) signed_rows.push_back(i);
    }
    sc.sign_auc = attempt([&] { return fit_sign_probe(dataset(signed_rows, true), settings); });
    sc.r2_pain = attempt([&] { return fit_quant_probe(dataset(pain_q, false), settings); });
    sc.r2_pleasure = attempt([&] { return fit_quant_probe(dataset(ple_q, false), settings); });
    sc.rho_pain = attempt([&] { return fit_qual_probe(dataset(pain_l, false), settings); });
    sc.rho_pleasure = attempt([&] { return fit_qual_probe(dataset(ple_l, false), settings); });
    sc.corr_logits = attempt([&] {
      const Direction axis = valence_axis(m, signs, sites[k]);
      return corr_logits(m, axis, logit2, logit3).r;
    });
  });
  return out;
}

std::string RunManifest::to_json() const {
  json files_j = json::array();
  for (const FileEntry& f : files) files_j.push_back({{"path", f.path}, {"bytes", f.bytes}, {"fnv1a64", f.checksum}});
  json j{{"config_hash", config_hash},
         {"model_hash", model_hash},
         {"artifact_version", artifact_version},
         {"started", started},
         {"finished", finished},
         {"completed_stages", completed_stages},
         {"failed_stage", failed_stage ? json(*failed_stage) : json(nullptr)},
         {"error", error},
         {"files", files_j}};
  return j.dump(2) + "\n";
}

fs::path resolve_output(const fs::path& output) {
  if (output.is_absolute()) return output;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / output;
  return output;
}

RunManifest run(const ExperimentConfig& config) {
  RunManifest m;
  m.started = utc_now();
  m.config_hash = hex64(fnv1a64(config.canonical()));
  const fs::path out = resolve_output(config.output);

  const auto finish = [&]() {
    m.finished = utc_now();
    try {
      if (fs::exists(out)) m.files = inventory(out);
      write_file(out / "manifest.json", m.to_json());
    } catch (const std::exception& e) {
      if (m.ok()) {
        m.failed_stage = "manifest";
        m.error = e.what();
      }
    }
    return m;
  };

  std::optional<Experiment> ex;
  try {
    fs::create_directories(out);
    ex = prepare_experiment(config);
    m.model_hash = ex->model.config_hash();
    write_file(out / "config.json", config.canonical() + "\n");
    std::ostringstream corpus;
    write_corpus_manifest(corpus, ex->corpus);
    write_file(out / "corpus.tsv", corpus.str());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    m.failed_stage = "prepare";
    m.error = e.what();
    return finish();
  }

  for (std::string_view stage : kStageNames) {
    if (!config.has_stage(stage)) continue;
    try {
      if (stage == "screen") stage_screen(*ex, out);
      if (stage == "probe") stage_probe(*ex, out);
      if (stage == "bow") stage_bow(*ex, out);
      if (stage == "steer") stage_steer(*ex, out);
      if (stage == "patch") stage_site_intervention(*ex, out, true);
      if (stage == "ablate") stage_site_intervention(*ex, out, false);
      if (stage == "heads") stage_heads(*ex, out);
      if (stage == "sweep") stage_sweep(*ex, out);
      if (stage == "dump") stage_dump(*ex, out);
      if (stage == "report") emit_reports(out);
      m.completed_stages.emplace_back(stage);
    } catch (const std::exception& e) {
      m.failed_stage = std::string(stage);
      m.error = e.what();
      break;
    }
  }
  return finish();
}

ReportOutcome emit_reports(const fs::path& dir) {
  ReportOutcome r;
  const fs::path reports = dir / "reports";
  const auto emit = [&](const std::string& name, const CsvTable& t) {
    write_file(reports / name, t.to_csv());
    r.written.push_back("reports/" + name);
  };
  const auto have = [&](const char* file) {
    if (fs::exists(dir / file)) return true;
    r.notices.push_back(fmt::format("{} not found; dependent reports skipped", file));
    return false;
  };
  std::string summary;

  if (have("screen.jsonl")) {
    std::vector<ScreeningTrial> trials;
    for (const json& j : read_json_lines(dir / "screen.jsonl")) {
      ScreeningTrial t;
      t.record_id = j.at("record_id").get<int>();
      t.condition.valence = parse_valence(j.at("valence").get<std::string>());
      t.condition.scale = parse_scale(j.at("scale").get<std::string>());
      t.condition.intensity = j.at("intensity").get<int>();
      t.sample = j.at("sample").get<int>();
      const std::string code = j.at("code").get<std::string>();
      t.coded.code = code == "compliant"   ? ResponseCode::compliant
                     : code == "ambiguous" ? ResponseCode::ambiguous
                                           : ResponseCode::noncompliant;
      t.coded.choice = j.at("choice").get<int>();
      trials.push_back(std::move(t));
    }
    emit("screening.csv", screening_csv(tabulate_screening(trials)));
  }

  std::optional<BowResult> bow;
  if (have("bow.json")) {
    const json j = json::parse(read_file(dir / "bow.json"));
    bow = BowResult{j.at("raw_auc").get<double>(), j.at("effective_auc").get<double>()};
  }
  if (have("probe.jsonl")) {
    std::vector<SiteScores> scores;
    for (const json& j : read_json_lines(dir / "probe.jsonl")) {
      SiteScores s;
      s.site = HookSite::parse(j.at("site").get<std::string>());
      s.sign_auc = opt_of(j, "sign_auc");
      s.r2_pain = opt_of(j, "r2_pain");
      s.r2_pleasure = opt_of(j, "r2_pleasure");
      s.rho_pain = opt_of(j, "rho_pain");
      s.rho_pleasure = opt_of(j, "rho_pleasure");
      s.corr_logits = opt_of(j, "corr_logits");
      scores.push_back(s);
    }
    std::vector<SiteScores> pos1;
    std::copy_if(scores.begin(), scores.end(), std::back_inserter(pos1), [](const SiteScores& s) { return s.site.pos == 1; });
    if (!pos1.empty()) emit("probes_pos1.csv", probe_table(pos1, bow, false));
    const CsvTable best = probe_table(scores, std::nullopt, true);
    emit("probes_best.csv", best);
    summary += "Best probe sites (score (layer, position)):\n";
    for (const auto& row : best.rows) {
      summary += fmt::format("  {:<11} sign AUC {}, Corr(logits) {}\n", row[0], row[1], row[6]);
    }
  }

  const auto doses = [](const std::vector<SweepResult>& sweeps) {
    std::vector<LabelledDose> out;
    for (const SweepResult& s : sweeps) out.push_back({s.label, dose_summary(s)});
    return out;
  };
  if (have("steer.jsonl")) {
    const auto runs = doses(read_sweeps(read_json_lines(dir / "steer.jsonl"), ""));
    if (!runs.empty()) emit("steering.csv", steering_table(runs));
  }

  std::vector<SiteInterventionRow> site_rows;
  std::optional<HookSite> intervention_site;
  for (const char* file : {"patch.jsonl", "ablate.jsonl"}) {
    if (!have(file)) continue;
    const std::vector<json> lines = read_json_lines(dir / file);
    if (lines.empty()) continue;
    SiteInterventionRow row;
    row.label = lines.front().at("intervention").get<std::string>();
    intervention_site = HookSite::parse(lines.front().at("site").get<std::string>());
    for (const json& j : lines) {
      row.margins.push_back(j.at("margin").get<double>());
      row.baseline_margins.push_back(j.at("baseline_margin").get<double>());
    }
    row.mean_margin = mean(row.margins);
    row.delta = row.mean_margin - mean(row.baseline_margins);
    row.min_margin = *std::min_element(row.margins.begin(), row.margins.end());
    row.max_margin = *std::max_element(row.margins.begin(), row.margins.end());
    site_rows.push_back(std::move(row));
  }
  if (!site_rows.empty()) emit("site_interventions.csv", site_intervention_table(site_rows, *intervention_site));

  if (have("heads.jsonl")) {
    std::vector<SwapRow> swaps;
    std::vector<AblateRow> ablations;
    for (const json& j : read_json_lines(dir / "heads.jsonl")) {
      const std::string label = j.at("component").get<std::string>();
      if (j.at("kind") == "swap") {
        SwapRow s;
        s.label = label;
        s.pleasure_mean = j.at("pleasure_mean").get<double>();
        s.pain_mean = j.at("pain_mean").get<double>();
        s.delta = j.at("delta").get<double>();
        swaps.push_back(s);
      } else {
        AblateRow a;
        a.label = label;
        a.baseline = j.at("baseline").get<double>();
        a.ablated = j.at("ablated").get<double>();
        a.delta = j.at("delta").get<double>();
        a.percent_change = opt_of(j, "percent_change");
        ablations.push_back(a);
      }
    }
    emit("heads_swap.csv", head_swap_table(swaps));
    emit("heads_ablate.csv", head_ablate_table(ablations));
  }

  if (have("sweep.jsonl")) {
    const std::vector<json> lines = read_json_lines(dir / "sweep.jsonl");
    const auto layer = doses(read_sweeps(lines, "layer"));
    const auto site = doses(read_sweeps(lines, "site"));
    const auto dose = doses(read_sweeps(lines, "dose"));
    if (!layer.empty()) emit("layer_sweep.csv", layer_sweep_table(layer));
    if (!site.empty()) emit("site_compare.csv", site_compare_table(site));
    if (!dose.empty()) emit("dose_response.csv", dose_table(dose));
    if (!site.empty()) {
      const auto best = std::max_element(site.begin(), site.end(), [](const LabelledDose& a, const LabelledDose& b) {
        return a.dose.max_delta() - a.dose.min_delta() < b.dose.max_delta() - b.dose.min_delta();
      });
      summary += fmt::format("Strongest steering site: {} (max +Δ {:+.3f}, max -Δ {:+.3f})\n", best->label,
                             best->dose.max_delta(), best->dose.min_delta());
    }
  }

  if (r.written.empty()) throw StageFailure(fmt::format("no stage outputs found in {}", dir.string()));
  if (!summary.empty()) {
    write_file(reports / "summary.txt", summary);
    r.written.push_back("reports/summary.txt");
  }
  return r;
}

}  // namespace vlab
