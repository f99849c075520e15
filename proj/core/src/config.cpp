#include "vlab/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include "vlab/error.hpp"

namespace vlab {

namespace {

using nlohmann::json;

void check_keys(const json& obj, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(fmt::format("'{}' must be an object", where));
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(fmt::format("unknown key '{}{}{}'", where, where.empty() ? "" : ".", key));
    }
  }
}

template <class T>
T get(const json& obj, std::string_view key, T fallback, std::string_view where) {
  const auto it = obj.find(std::string(key));
  if (it == obj.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(fmt::format("'{}.{}' has the wrong type", where, key));
  }
}

std::vector<int> int_list(const json& v, std::string_view what, int all_count) {
  if (v.is_string() && v.get<std::string>() == "all") {
    std::vector<int> out(static_cast<std::size_t>(all_count));
    for (int i = 0; i < all_count; ++i) out[static_cast<std::size_t>(i)] = i;
    return out;
  }
  if (!v.is_array()) throw ConfigError(fmt::format("'{}' must be \"all\" or a list of integers", what));
  std::vector<int> out;
  for (const json& e : v) {
    if (!e.is_number_integer()) throw ConfigError(fmt::format("'{}' must hold integers", what));
    out.push_back(e.get<int>());
  }
  if (out.empty()) throw ConfigError(fmt::format("'{}' is empty", what));
  return out;
}

HookSite site_of(const json& v, std::string_view what) {
  if (!v.is_string()) throw ConfigError(fmt::format("'{}' must be a site string", what));
  try {
    return HookSite::parse(v.get<std::string>());
  } catch (const Error& e) {
    throw ConfigError(fmt::format("'{}': {}", what, e.what()));
  }
}

HeadSet head_set_of(const json& v, std::string_view what) {
  if (v.is_string() && v.get<std::string>() == "vector") return HeadSet{head_set_label({}), {}};
  std::vector<int> heads = int_list(v, what, 0);
  return HeadSet{head_set_label(heads), heads};
}

json head_set_json(const HeadSet& s) {
  if (s.vector_level()) return "vector";
  return s.heads;
}

void set_dotted(json& root, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError(fmt::format("override '{}' is not key=value", assignment));
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &root;
  std::string_view rest = key;
  while (true) {
    const auto dot = rest.find('.');
    const std::string part(rest.substr(0, dot));
    if (part.empty()) throw ConfigError(fmt::format("override key '{}' is malformed", key));
    if (!node->is_object()) throw ConfigError(fmt::format("override '{}' descends into a non-object", key));
    if (dot == std::string_view::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    rest.remove_prefix(dot + 1);
  }
}

}  // namespace

std::string head_set_label(std::span<const int> heads) {
  if (heads.empty()) return "vector (all heads)";
  if (heads.size() == 1) return fmt::format("head {}", heads[0]);
  bool consecutive = true;
  for (std::size_t i = 1; i < heads.size(); ++i) consecutive = consecutive && heads[i] == heads[i - 1] + 1;
  if (consecutive) return fmt::format("heads {}-{}", heads.front(), heads.back());
  return fmt::format("heads {}", fmt::join(heads, ","));
}

bool ExperimentConfig::has_stage(std::string_view name) const {
  return std::find(stages.begin(), stages.end(), name) != stages.end();
}

std::vector<HookSite> ExperimentConfig::probe_sites() const {
  std::vector<HookSite> out;
  for (int l : probe_layers) {
    for (Stream s : probe_streams) {
      for (int p : probe_positions) out.push_back(HookSite{l, s, p, std::nullopt});
    }
  }
  return out;
}

std::string ExperimentConfig::canonical() const {
  json j;
  j["seed"] = seed;
  j["output"] = output.string();
  j["stages"] = stages;
  j["model"] = {{"n_layers", model.n_layers}, {"n_heads", model.n_heads}, {"d_model", model.d_model},
                {"d_head", model.d_head},     {"d_mlp", model.d_mlp},     {"vocab_size", model.vocab_size},
                {"max_seq", model.max_seq},   {"rng_seed", model.rng_seed}};
  if (plant) j["plant"] = {{"layer", plant->layer}, {"pos", plant->pos}, {"gain_std", plant->gain_std}};
  j["corpus"] = {{"reps", corpus_reps}, {"markers", corpus_markers}};
  j["tokenizer"] = {{"space_digits", tokenizer.space_digits}, {"newline_digits", tokenizer.newline_digits}};
  std::vector<std::string> streams;
  for (Stream s : probe_streams) streams.emplace_back(to_string(s));
  j["probe"] = {{"layers", probe_layers},
                {"streams", streams},
                {"positions", probe_positions},
                {"ridge_lambda", probe_settings.ridge_lambda},
                {"logistic_iters", probe_settings.logistic_iters},
                {"logistic_step", probe_settings.logistic_step},
                {"logistic_l2", probe_settings.logistic_l2},
                {"holdout_every", probe_settings.holdout_every}};
  j["screen"] = {{"samples", screening.samples_per_level},
                 {"temperature", screening.temperature},
                 {"max_new_tokens", screening.max_new_tokens}};
  std::vector<std::string> reads;
  for (ReadMode m : read_modes) reads.emplace_back(to_string(m));
  j["steer"] = {{"site", steer_site.label()},
                {"grid", grid.values},
                {"epsilon_unit", epsilon_site_std ? "site_std" : "raw"},
                {"read", reads}};
  std::vector<std::string> sites;
  for (const HookSite& s : compare_sites) sites.push_back(s.label());
  json dose = json::array();
  for (const HeadSet& h : dose_heads) dose.push_back(head_set_json(h));
  j["sweep"] = {{"layers", sweep_layers}, {"sites", sites}, {"dose_heads", dose}};
  json sets = json::array();
  for (const HeadSet& h : head_sets) sets.push_back(head_set_json(h));
  j["heads"] = {{"layer", heads_layer}, {"pos", heads_pos}, {"sets", sets}};
  j["readout"] = {{"pool_p2_full", readout.pool_p2_full}, {"pool_corr_logits", pool_corr_logits}};
  if (probe_dump) j["probe"]["from_dump"] = probe_dump->string();
  return j.dump();
}

ExperimentConfig parse_config(std::string_view text, std::span<const std::string> overrides) {
  json root = json::parse(text, nullptr, false, true);
  if (root.is_discarded()) throw ConfigError("configuration is not valid JSON");
  if (!root.is_object()) throw ConfigError("configuration must be a JSON object");
  for (const std::string& o : overrides) set_dotted(root, o);

  check_keys(root, "", {"seed", "output", "stages", "model", "plant", "corpus", "tokenizer", "probe", "screen",
                        "steer", "sweep", "heads", "readout"});
  ExperimentConfig c;
  if (!root.contains("seed")) throw ConfigError("'seed' is required");
  if (!root["seed"].is_number_unsigned() && !(root["seed"].is_number_integer() && root["seed"].get<long long>() >= 0)) {
    throw ConfigError("'seed' must be a non-negative integer");
  }
  c.seed = root["seed"].get<std::uint64_t>();
  c.output = get<std::string>(root, "output", "results", "");

  if (root.contains("stages")) {
    if (!root["stages"].is_array()) throw ConfigError("'stages' must be a list");
    for (const json& s : root["stages"]) {
      if (!s.is_string()) throw ConfigError("'stages' must hold strings");
      const std::string name = s.get<std::string>();
      if (std::find(std::begin(kStageNames), std::end(kStageNames), name) == std::end(kStageNames)) {
        throw ConfigError(fmt::format("unknown stage '{}'", name));
      }
      c.stages.push_back(name);
    }
  } else {
    c.stages.assign(std::begin(kStageNames), std::end(kStageNames));
  }

  const json model = root.value("model", json::object());
  check_keys(model, "model", {"n_layers", "n_heads", "d_model", "d_head", "d_mlp", "vocab_size", "max_seq", "rng_seed"});
  c.model.n_layers = get(model, "n_layers", c.model.n_layers, "model");
  c.model.n_heads = get(model, "n_heads", c.model.n_heads, "model");
  c.model.d_model = get(model, "d_model", c.model.d_model, "model");
  c.model.d_head = get(model, "d_head", c.model.d_head, "model");
  c.model.d_mlp = get(model, "d_mlp", c.model.d_mlp, "model");
  c.model.vocab_size = get(model, "vocab_size", c.model.vocab_size, "model");
  c.model.max_seq = get(model, "max_seq", c.model.max_seq, "model");
  c.model.rng_seed = get<std::uint64_t>(model, "rng_seed", c.seed, "model");
  c.model.validate();
  const int last = c.model.n_layers - 1;

  if (root.contains("plant") && !root["plant"].is_null()) {
    const json& p = root["plant"];
    check_keys(p, "plant", {"layer", "pos", "gain_std"});
    PlantSpec ps;
    ps.layer = get(p, "layer", ps.layer, "plant");
    ps.pos = get(p, "pos", ps.pos, "plant");
    ps.gain_std = get(p, "gain_std", ps.gain_std, "plant");
    if (!(ps.gain_std >= 0.0)) throw ConfigError("'plant.gain_std' must be non-negative");
    c.plant = ps;
  }

  const json corpus = root.value("corpus", json::object());
  check_keys(corpus, "corpus", {"reps", "markers"});
  c.corpus_reps = get(corpus, "reps", 1, "corpus");
  c.corpus_markers = get(corpus, "markers", c.plant.has_value(), "corpus");
  if (c.corpus_reps < 1) throw ConfigError("'corpus.reps' must be at least 1");
  if (c.plant && !c.corpus_markers) throw ConfigError("a planted model needs the marker corpus");

  const json tok = root.value("tokenizer", json::object());
  check_keys(tok, "tokenizer", {"space_digits", "newline_digits"});
  c.tokenizer.space_digits = get(tok, "space_digits", true, "tokenizer");
  c.tokenizer.newline_digits = get(tok, "newline_digits", true, "tokenizer");

  const json probe = root.value("probe", json::object());
  check_keys(probe, "probe",
             {"layers", "streams", "positions", "ridge_lambda", "logistic_iters", "logistic_step", "logistic_l2",
              "holdout_every", "from_dump"});
  c.probe_layers = int_list(probe.value("layers", json("all")), "probe.layers", c.model.n_layers);
  const json streams = probe.value("streams", json{"resid_pre", "resid_post", "attn_out", "mlp_out"});
  if (!streams.is_array() || streams.empty()) throw ConfigError("'probe.streams' must be a non-empty list");
  for (const json& s : streams) {
    if (!s.is_string()) throw ConfigError("'probe.streams' must hold strings");
    const Stream st = parse_stream(s.get<std::string>());
    if (st == Stream::head_z || st == Stream::ln_final) {
      throw ConfigError("'probe.streams' accepts resid_pre, resid_post, attn_out and mlp_out");
    }
    c.probe_streams.push_back(st);
  }
  c.probe_positions = int_list(probe.value("positions", json{1}), "probe.positions", 0);
  c.probe_settings.ridge_lambda = get(probe, "ridge_lambda", 1.0, "probe");
  c.probe_settings.logistic_iters = get(probe, "logistic_iters", 500, "probe");
  c.probe_settings.logistic_step = get(probe, "logistic_step", 0.1, "probe");
  c.probe_settings.logistic_l2 = get(probe, "logistic_l2", 1e-3, "probe");
  c.probe_settings.holdout_every = get(probe, "holdout_every", 0, "probe");
  if (probe.contains("from_dump") && !probe["from_dump"].is_null()) {
    c.probe_dump = get<std::string>(probe, "from_dump", "", "probe");
  }
  if (!(c.probe_settings.ridge_lambda > 0.0)) throw ConfigError("'probe.ridge_lambda' must be positive");
  if (c.probe_settings.logistic_iters < 1) throw ConfigError("'probe.logistic_iters' must be positive");
  if (c.probe_settings.holdout_every == 1 || c.probe_settings.holdout_every < 0) {
    throw ConfigError("'probe.holdout_every' must be 0 or at least 2");
  }

  const json screen = root.value("screen", json::object());
  check_keys(screen, "screen", {"samples", "temperature", "max_new_tokens"});
  c.screening.samples_per_level = get(screen, "samples", 50, "screen");
  c.screening.temperature = get(screen, "temperature", 1.0, "screen");
  c.screening.max_new_tokens = get(screen, "max_new_tokens", 64, "screen");
  c.screening.seed = mix_seed(c.seed, 0x5c7eeULL);
  if (c.screening.samples_per_level < 1 || c.screening.max_new_tokens < 1 || !(c.screening.temperature >= 0.0)) {
    throw ConfigError("screen settings out of range");
  }

  const json steer = root.value("steer", json::object());
  check_keys(steer, "steer", {"site", "grid", "epsilon_unit", "read"});
  c.steer_site = steer.contains("site") ? site_of(steer["site"], "steer.site")
                                        : HookSite{last, Stream::resid_post, 1, std::nullopt};
  const json grid = steer.value("grid", json("standard"));
  if (grid.is_string() && grid.get<std::string>() == "standard") {
    c.grid = EpsilonGrid::standard();
  } else if (grid.is_array()) {
    for (const json& e : grid) {
      if (!e.is_number()) throw ConfigError("'steer.grid' must hold numbers");
      c.grid.values.push_back(e.get<double>());
    }
  } else {
    throw ConfigError("'steer.grid' must be \"standard\" or a list of numbers");
  }
  c.grid.validate();
  const std::string unit = get<std::string>(steer, "epsilon_unit", "raw", "steer");
  if (unit != "raw" && unit != "site_std") throw ConfigError("'steer.epsilon_unit' must be raw or site_std");
  c.epsilon_site_std = unit == "site_std";
  const json reads = steer.value("read", json{"final", "last"});
  if (!reads.is_array() || reads.empty()) throw ConfigError("'steer.read' must be a non-empty list");
  for (const json& r : reads) {
    if (!r.is_string()) throw ConfigError("'steer.read' must hold strings");
    c.read_modes.push_back(parse_read_mode(r.get<std::string>()));
  }

  const json sweep = root.value("sweep", json::object());
  check_keys(sweep, "sweep", {"layers", "sites", "dose_heads"});
  c.sweep_layers = int_list(sweep.value("layers", json("all")), "sweep.layers", c.model.n_layers);
  if (sweep.contains("sites")) {
    if (!sweep["sites"].is_array()) throw ConfigError("'sweep.sites' must be a list");
    for (const json& s : sweep["sites"]) c.compare_sites.push_back(site_of(s, "sweep.sites"));
  } else {
    c.compare_sites = {HookSite{last - 1, Stream::attn_out, 1, std::nullopt},
                       HookSite{last, Stream::resid_post, 1, std::nullopt}};
  }
  if (sweep.contains("dose_heads")) {
    if (!sweep["dose_heads"].is_array()) throw ConfigError("'sweep.dose_heads' must be a list");
    for (const json& h : sweep["dose_heads"]) {
      HeadSet hs = head_set_of(h, "sweep.dose_heads");
      if (hs.vector_level()) throw ConfigError("'sweep.dose_heads' entries must list heads");
      c.dose_heads.push_back(std::move(hs));
    }
  } else {
    std::vector<int> all;
    for (int h = 0; h < c.model.n_heads; ++h) {
      c.dose_heads.push_back(HeadSet{head_set_label(std::vector<int>{h}), {h}});
      all.push_back(h);
    }
    if (all.size() > 1) c.dose_heads.push_back(HeadSet{head_set_label(all), all});
  }

  const json heads = root.value("heads", json::object());
  check_keys(heads, "heads", {"layer", "pos", "sets"});
  c.heads_layer = get(heads, "layer", last - 1, "heads");
  c.heads_pos = get(heads, "pos", 1, "heads");
  if (heads.contains("sets")) {
    if (!heads["sets"].is_array()) throw ConfigError("'heads.sets' must be a list");
    for (const json& h : heads["sets"]) c.head_sets.push_back(head_set_of(h, "heads.sets"));
  } else {
    c.head_sets.push_back(HeadSet{head_set_label({}), {}});
    std::vector<int> all;
    for (int h = 0; h < c.model.n_heads; ++h) {
      c.head_sets.push_back(HeadSet{head_set_label(std::vector<int>{h}), {h}});
      all.push_back(h);
    }
    if (all.size() > 2) {
      const std::vector<int> tail(all.begin() + 1, all.end());
      c.head_sets.push_back(HeadSet{head_set_label(tail), tail});
    }
    if (all.size() > 1) c.head_sets.push_back(HeadSet{head_set_label(all), all});
  }

  const json readout = root.value("readout", json::object());
  check_keys(readout, "readout", {"pool_p2_full", "pool_corr_logits"});
  c.readout.pool_p2_full = get(readout, "pool_p2_full", true, "readout");
  c.pool_corr_logits = get(readout, "pool_corr_logits", true, "readout");

  // Position bounds are checked against each prompt at run time.
  auto check_site = [&](const HookSite& s, std::string_view what) {
    try {
      validate_site(c.model, s, 0);
    } catch (const DomainError& e) {
      throw ConfigError(fmt::format("{}: {}", what, e.what()));
    }
  };
  for (const HookSite& s : c.probe_sites()) check_site(s, "probe site");
  check_site(c.steer_site, "steer.site");
  for (int l : c.sweep_layers) check_site(HookSite{l, c.steer_site.stream, c.steer_site.pos, c.steer_site.head}, "sweep layer");
  for (const HookSite& s : c.compare_sites) check_site(s, "sweep.sites");
  for (const HeadSet& hs : c.dose_heads) {
    for (int h : hs.heads) check_site(HookSite{c.heads_layer, Stream::head_z, c.heads_pos, h}, "sweep.dose_heads");
  }
  for (const HeadSet& hs : c.head_sets) {
    for (int h : hs.heads) check_site(HookSite{c.heads_layer, Stream::head_z, c.heads_pos, h}, "heads.sets");
  }
  check_site(HookSite{c.heads_layer, Stream::attn_out, c.heads_pos, std::nullopt}, "heads.layer");
  if (c.plant) check_site(HookSite{c.plant->layer, Stream::resid_post, c.plant->pos, std::nullopt}, "plant");
  if (c.steer_site.head) throw ConfigError("steer.site: head sites are steered through sweep.dose_heads");
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides) {
  std::ifstream is(path);
  if (!is) throw ConfigError(fmt::format("cannot read configuration {}", path.string()));
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), overrides);
}

}  // namespace vlab
