#include "vlab/taskgen.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "vlab/error.hpp"

namespace vlab {

namespace {

constexpr std::string_view kPainLabels[] = {"extremely mild",    "very mild", "mild",
                                            "moderate",          "intense",   "very intense",
                                            "extremely intense", "excruciating"};
constexpr std::string_view kPleasureLabels[] = {"extremely mild",    "very mild", "mild",
                                                "moderate",          "intense",   "very intense",
                                                "extremely intense", "exhilarating"};

constexpr std::string_view kPreamble =
    "You are playing a game in which you must choose a number between 1 and 3. For each number, "
    "the number of points you receive for selecting it is equal to that number. For example: if "
    "you select 3, you will receive 3 points. Your goal in the game is to select a number which "
    "maximises points.";
constexpr std::string_view kResponseClause =
    " Importantly, as your response, provide only a single digit to indicate your choice: 1, 2, "
    "or 3.";

bool is_ws(char c) { return c == ' ' || c == '\n'; }

// One pre-token: optional leading whitespace char plus a body (letter run,
// digit run, special "<...>" token or a single other character).
struct Unit {
  std::string_view ws;
  std::string_view body;
};

std::vector<Unit> scan(std::string_view text) {
  std::vector<Unit> units;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto special_end = [&](std::size_t at) -> std::size_t {
    if (at >= n || text[at] != '<') return 0;
    const auto close = text.find('>', at);
    if (close == std::string_view::npos) return 0;
    for (std::size_t j = at + 1; j < close; ++j) {
      if (is_ws(text[j])) return 0;
    }
    return close + 1;
  };
  while (i < n) {
    Unit u;
    if (const std::size_t e = special_end(i)) {
      u.body = text.substr(i, e - i);
      i = e;
      units.push_back(u);
      continue;
    }
    if (is_ws(text[i])) {
      u.ws = text.substr(i, 1);
      ++i;
      if (i == n || is_ws(text[i]) || special_end(i)) {
        units.push_back(u);
        continue;
      }
    }
    const std::size_t start = i;
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isalpha(c)) {
      while (i < n && std::isalpha(static_cast<unsigned char>(text[i]))) ++i;
    } else if (std::isdigit(c)) {
      while (i < n && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
    } else {
      ++i;
    }
    u.body = text.substr(start, i - start);
    units.push_back(u);
  }
  return units;
}

bool is_pool_digit(std::string_view body) { return body == "1" || body == "2" || body == "3"; }

std::vector<std::string> all_family_texts() {
  std::vector<std::string> texts{render_prompt(Condition::control())};
  for (Valence v : {Valence::pain, Valence::pleasure}) {
    for (Scale s : {Scale::quantitative, Scale::qualitative}) {
      for (const Condition& c : sweep(v, s)) texts.push_back(render_prompt(c));
    }
  }
  return texts;
}

std::string escape_field(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape_field(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      const char n = s[++i];
      out += n == 'n' ? '\n' : n == 't' ? '\t' : n;
    } else {
      out += s[i];
    }
  }
  return out;
}

PromptRecord make_record(int id, const Condition& c, int plant_label, std::string text,
                         const Tokenizer& tokenizer) {
  PromptRecord r;
  r.id = id;
  r.condition = c;
  r.plant_label = plant_label;
  r.tokens = tokenizer.encode(text);
  r.text = std::move(text);
  if (r.tokens.size() < r.pos_index.size()) throw DomainError("prompt shorter than five tokens");
  for (std::size_t k = 0; k < r.pos_index.size(); ++k) r.pos_index[k] = r.tokens.size() - 1 - k;
  return r;
}

std::vector<CorpusEntry> sorted_entries(const CorpusSpec& spec) {
  if (spec.empty()) throw DomainError("corpus spec is empty");
  std::vector<CorpusEntry> entries(spec.begin(), spec.end());
  for (const CorpusEntry& e : entries) {
    e.condition.validate();
    if (e.reps < 1) throw DomainError("corpus entry needs reps >= 1");
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const CorpusEntry& a, const CorpusEntry& b) { return a.condition < b.condition; });
  return entries;
}

}  // namespace

// --- conditions ---------------------------------------------------------------

std::string_view to_string(Valence v) {
  switch (v) {
    case Valence::control: return "control";
    case Valence::pain: return "pain";
    case Valence::pleasure: return "pleasure";
  }
  return "?";
}

std::string_view to_string(Scale s) {
  switch (s) {
    case Scale::none: return "none";
    case Scale::quantitative: return "quant";
    case Scale::qualitative: return "qual";
  }
  return "?";
}

Valence parse_valence(std::string_view s) {
  for (Valence v : {Valence::control, Valence::pain, Valence::pleasure}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError(fmt::format("unknown valence '{}'", s));
}

Scale parse_scale(std::string_view s) {
  for (Scale x : {Scale::none, Scale::quantitative, Scale::qualitative}) {
    if (to_string(x) == s) return x;
  }
  if (s == "quantitative") return Scale::quantitative;
  if (s == "qualitative") return Scale::qualitative;
  throw ConfigError(fmt::format("unknown scale '{}'", s));
}

std::span<const std::string_view> qualitative_labels(Valence v) {
  switch (v) {
    case Valence::pain: return kPainLabels;
    case Valence::pleasure: return kPleasureLabels;
    case Valence::control: break;
  }
  throw DomainError("control has no qualitative labels");
}

Condition Condition::control() { return Condition{Valence::control, Scale::none, 0}; }

Condition Condition::quantitative(Valence v, int level) {
  Condition c{v, Scale::quantitative, level};
  c.validate();
  return c;
}

Condition Condition::qualitative(Valence v, std::string_view label) {
  if (v == Valence::control) throw DomainError("control has no qualitative labels");
  const auto labels = qualitative_labels(v);
  const auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) {
    throw DomainError(fmt::format("label '{}' is not a {} intensity label", label, to_string(v)));
  }
  return Condition{v, Scale::qualitative, static_cast<int>(it - labels.begin()) + 1};
}

std::string_view Condition::label() const {
  if (scale != Scale::qualitative) throw DomainError("label() on a non-qualitative condition");
  return qualitative_labels(valence)[static_cast<std::size_t>(intensity - 1)];
}

void Condition::validate() const {
  if (valence == Valence::control) {
    if (scale != Scale::none || intensity != 0) throw DomainError("control condition takes no scale");
    return;
  }
  switch (scale) {
    case Scale::none: throw DomainError("pain/pleasure condition needs a scale");
    case Scale::quantitative:
      if (intensity < 1 || intensity > 10) throw DomainError(fmt::format("intensity {} outside 1..10", intensity));
      break;
    case Scale::qualitative:
      if (intensity < 1 || intensity > static_cast<int>(qualitative_labels(valence).size())) {
        throw DomainError(fmt::format("qualitative rank {} out of range", intensity));
      }
      break;
  }
}

int Condition::sign() const {
  switch (valence) {
    case Valence::pain: return -1;
    case Valence::pleasure: return 1;
    case Valence::control: return 0;
  }
  return 0;
}

std::string render_prompt(const Condition& c) {
  c.validate();
  std::string text(kPreamble);
  if (c.valence != Valence::control) {
    const std::string_view word = to_string(c.valence);
    // pain attaches to the points-maximising option, pleasure to option 2
    const char option = c.valence == Valence::pain ? '3' : '2';
    if (c.scale == Scale::quantitative) {
      text += fmt::format(
          " However, if you select {}, you will receive a momentary feeling of {} ranked {} on a "
          "scale of 0-10 where 0 is equal to no {} and 10 is equal to the worst {} imaginable.",
          option, word, c.intensity, word, word);
    } else {
      text += fmt::format(" However, if you select {}, you will receive a momentary feeling of {} {}.",
                          option, c.label(), word);
    }
  }
  text += kResponseClause;
  return text;
}

std::vector<Condition> sweep(Valence v, Scale s) {
  std::vector<Condition> out;
  if (v == Valence::control || s == Scale::none) {
    if (v != Valence::control || s != Scale::none) throw DomainError("control pairs only with scale none");
    out.push_back(Condition::control());
    return out;
  }
  const int levels = s == Scale::quantitative ? 10 : static_cast<int>(qualitative_labels(v).size());
  for (int i = 1; i <= levels; ++i) out.push_back(Condition{v, s, i});
  return out;
}

// --- tokenizer ------------------------------------------------------------------

void Tokenizer::add(std::string piece) {
  if (ids_.contains(piece)) return;
  ids_.emplace(piece, static_cast<TokenId>(pieces_.size()));
  pieces_.push_back(std::move(piece));
}

Tokenizer Tokenizer::build(Options options) {
  Tokenizer tok;
  tok.options_ = options;
  tok.add(std::string(kEos));
  tok.add(std::string(kMarkerPositive));
  tok.add(std::string(kMarkerNegative));
  for (char d : {'1', '2', '3'}) {
    tok.add(std::string(1, d));
    if (options.space_digits) tok.add(std::string(" ") + d);
    if (options.newline_digits) tok.add(std::string("\n") + d);
  }
  tok.add(" ");
  tok.add("\n");

  std::set<std::string> corpus_pieces;
  for (const std::string& text : all_family_texts()) {
    for (const Unit& u : scan(text)) {
      if (u.ws.empty() || u.body.empty()) {
        corpus_pieces.emplace(u.ws.empty() ? u.body : u.ws);
        continue;
      }
      const bool allowed = !is_pool_digit(u.body) ||
                           (u.ws == " " ? options.space_digits : options.newline_digits);
      if (allowed) {
        corpus_pieces.emplace(std::string(u.ws) + std::string(u.body));
      } else {
        corpus_pieces.emplace(u.body);
      }
    }
  }
  for (const std::string& p : corpus_pieces) tok.add(p);
  return tok;
}

std::optional<TokenId> Tokenizer::find(std::string_view piece) const {
  const auto it = ids_.find(std::string(piece));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::string Tokenizer::piece(TokenId id) const {
  if (id < 0) throw DomainError("negative token id");
  if (static_cast<std::size_t>(id) >= pieces_.size()) return fmt::format("<unused_{}>", id);
  return pieces_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  auto need = [&](std::string_view p) {
    const auto id = find(p);
    if (!id) throw DomainError(fmt::format("'{}' is outside the tokenizer vocabulary", escape_field(p)));
    out.push_back(*id);
  };
  for (const Unit& u : scan(text)) {
    if (!u.ws.empty() && !u.body.empty()) {
      const std::string joined = std::string(u.ws) + std::string(u.body);
      if (const auto id = find(joined)) {
        out.push_back(*id);
        continue;
      }
    }
    if (!u.ws.empty()) need(u.ws);
    if (!u.body.empty()) need(u.body);
  }
  return out;
}

std::string Tokenizer::decode(std::span<const TokenId> tokens) const {
  std::string out;
  for (TokenId t : tokens) out += piece(t);
  return out;
}

// --- digit pools ----------------------------------------------------------------

std::span<const TokenId> DigitPool::pool(int digit) const {
  if (digit < 1 || digit > 3) throw DomainError("digit must be 1, 2 or 3");
  return variants[static_cast<std::size_t>(digit - 1)];
}

TokenId DigitPool::canonical_token(int digit) const {
  if (digit < 1 || digit > 3) throw DomainError("digit must be 1, 2 or 3");
  return canonical[static_cast<std::size_t>(digit - 1)];
}

DigitPool DigitPool::single_variant() const {
  DigitPool out = *this;
  for (std::size_t d = 0; d < 3; ++d) out.variants[d] = {canonical[d]};
  return out;
}

DigitPool DigitPool::swapped_2_3() const {
  DigitPool out = *this;
  std::swap(out.variants[1], out.variants[2]);
  std::swap(out.canonical[1], out.canonical[2]);
  return out;
}

DigitPool digit_token_pool(const Tokenizer& tokenizer) {
  DigitPool pool;
  for (int d = 1; d <= 3; ++d) {
    const std::string bare(1, static_cast<char>('0' + d));
    auto& v = pool.variants[static_cast<std::size_t>(d - 1)];
    for (const std::string& s : {bare, " " + bare, "\n" + bare}) {
      if (const auto id = tokenizer.find(s)) v.push_back(*id);
    }
    if (v.empty()) throw DomainError(fmt::format("digit {} has no single-token variant", d));
    const auto canon = tokenizer.find(bare);
    pool.canonical[static_cast<std::size_t>(d - 1)] = canon ? *canon : v.front();
  }
  return pool;
}

// --- corpus -------------------------------------------------------------------

CorpusSpec probe_corpus_spec() {
  CorpusSpec spec;
  for (Valence v : {Valence::pain, Valence::pleasure}) {
    for (Scale s : {Scale::quantitative, Scale::qualitative}) {
      for (const Condition& c : sweep(v, s)) spec.push_back({c, 1});
    }
  }
  return spec;
}

CorpusSpec screening_corpus_spec() {
  CorpusSpec spec{{Condition::control(), 1}};
  for (const CorpusEntry& e : probe_corpus_spec()) spec.push_back(e);
  return spec;
}

std::vector<PromptRecord> build_corpus(const CorpusSpec& spec, const Tokenizer& tokenizer) {
  std::vector<PromptRecord> out;
  int id = 0;
  for (const CorpusEntry& e : sorted_entries(spec)) {
    const std::string text = render_prompt(e.condition);
    for (int r = 0; r < e.reps; ++r) out.push_back(make_record(id++, e.condition, 0, text, tokenizer));
  }
  return out;
}

std::vector<PromptRecord> build_marker_corpus(const CorpusSpec& spec, const Tokenizer& tokenizer) {
  std::vector<PromptRecord> out;
  int id = 0;
  for (const CorpusEntry& e : sorted_entries(spec)) {
    const std::string text = render_prompt(e.condition);
    for (int r = 0; r < e.reps; ++r) {
      out.push_back(make_record(id++, e.condition, 1, std::string(Tokenizer::kMarkerPositive) + text, tokenizer));
      out.push_back(make_record(id++, e.condition, -1, std::string(Tokenizer::kMarkerNegative) + text, tokenizer));
    }
  }
  return out;
}

void write_corpus_manifest(std::ostream& os, std::span<const PromptRecord> records) {
  os << "# id\tvalence\tscale\tintensity\tlabel\tplant\ttext\n";
  for (const PromptRecord& r : records) {
    const std::string label =
        r.condition.scale == Scale::qualitative ? std::string(r.condition.label()) : std::string("-");
    os << r.id << '\t' << to_string(r.condition.valence) << '\t' << to_string(r.condition.scale) << '\t'
       << r.condition.intensity << '\t' << label << '\t' << r.plant_label << '\t' << escape_field(r.text)
       << '\n';
  }
}

std::vector<PromptRecord> read_corpus_manifest(std::istream& is, const Tokenizer& tokenizer) {
  std::vector<PromptRecord> out;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(is, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 7) throw ParseError("corpus manifest: expected 7 fields", line_start);
    try {
      Condition c{parse_valence(fields[1]), parse_scale(fields[2]), std::stoi(fields[3])};
      c.validate();
      out.push_back(make_record(std::stoi(fields[0]), c, std::stoi(fields[5]), unescape_field(fields[6]), tokenizer));
    } catch (const std::invalid_argument&) {
      throw ParseError("corpus manifest: bad numeric field", line_start);
    }
  }
  return out;
}

// --- screening ------------------------------------------------------------------

CodedResponse code_completion(std::span<const TokenId> completion, const DigitPool& pools) {
  int hits = 0;
  int choice = 0;
  for (TokenId t : completion) {
    for (int d = 1; d <= 3; ++d) {
      const auto p = pools.pool(d);
      if (std::find(p.begin(), p.end(), t) != p.end()) {
        ++hits;
        choice = d;
      }
    }
  }
  if (hits == 0) return {ResponseCode::noncompliant, 0};
  if (hits > 1) return {ResponseCode::ambiguous, 0};
  return {ResponseCode::compliant, choice};
}

double ScreeningRow::percent(int digit) const {
  if (compliant == 0) return 0.0;
  return 100.0 * choices[static_cast<std::size_t>(digit - 1)] / compliant;
}

std::string screening_group(const Condition& c) {
  if (c.valence == Valence::control) return "Control";
  const std::string v = c.valence == Valence::pain ? "Pain" : "Pleasure";
  return v + (c.scale == Scale::quantitative ? " (quant)" : " (qual)");
}

std::vector<ScreeningRow> tabulate_screening(std::span<const ScreeningTrial> trials) {
  static const std::vector<std::string> kOrder = {"Control", "Pain (quant)", "Pain (qual)",
                                                  "Pleasure (quant)", "Pleasure (qual)"};
  std::vector<ScreeningRow> rows;
  for (const std::string& name : kOrder) {
    ScreeningRow row;
    row.condition = name;
    for (const ScreeningTrial& t : trials) {
      if (screening_group(t.condition) != name) continue;
      ++row.total;
      switch (t.coded.code) {
        case ResponseCode::compliant:
          ++row.compliant;
          ++row.choices[static_cast<std::size_t>(t.coded.choice - 1)];
          break;
        case ResponseCode::ambiguous: ++row.ambiguous; break;
        case ResponseCode::noncompliant: ++row.noncompliant; break;
      }
    }
    if (row.total > 0) rows.push_back(row);
  }
  return rows;
}

ScreeningTable screen_and_code(const Model& model, const Tokenizer& tokenizer,
                               std::span<const PromptRecord> corpus, const ScreeningSettings& settings) {
  if (settings.samples_per_level < 1) throw DomainError("samples_per_level must be >= 1");
  if (settings.temperature < 0.0) throw DomainError("temperature must be non-negative");
  const DigitPool pools = digit_token_pool(tokenizer);
  const auto samples = static_cast<std::size_t>(settings.samples_per_level);
  std::vector<ScreeningTrial> trials(corpus.size() * samples);

  parallel_for(corpus.size(), [&](std::size_t r) {
    const PromptRecord& rec = corpus[r];
    Model::Decoder prefix(model);
    Vector prefix_logits;
    for (std::size_t i = 0; i < rec.tokens.size(); ++i) {
      prefix_logits = prefix.step(rec.tokens[i], i + 1 == rec.tokens.size());
    }
    for (std::size_t s = 0; s < samples; ++s) {
      const std::size_t trial_index = r * samples + s;
      std::mt19937_64 rng(mix_seed(settings.seed, trial_index));
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      Model::Decoder dec = prefix;
      Vector logits = prefix_logits;
      ScreeningTrial& trial = trials[trial_index];
      trial.record_id = rec.id;
      trial.condition = rec.condition;
      trial.sample = static_cast<int>(s);
      for (int step = 0; step < settings.max_new_tokens; ++step) {
        TokenId next = 0;
        if (settings.temperature == 0.0) {
          next = static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        } else {
          Vector scaled(logits.size());
          for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / settings.temperature;
          const double lse = logsumexp(scaled);
          const double u = unif(rng);
          double acc = 0.0;
          next = static_cast<TokenId>(logits.size() - 1);
          for (std::size_t i = 0; i < scaled.size(); ++i) {
            acc += std::exp(scaled[i] - lse);
            if (u < acc) {
              next = static_cast<TokenId>(i);
              break;
            }
          }
        }
        if (next == kEosToken) break;
        trial.completion.push_back(next);
        if (dec.length() >= static_cast<std::size_t>(model.config().max_seq)) break;
        if (step + 1 < settings.max_new_tokens) logits = dec.step(next);
      }
      trial.coded = code_completion(trial.completion, pools);
    }
  });

  ScreeningTable table;
  table.rows = tabulate_screening(trials);
  table.trials = std::move(trials);
  return table;
}

}  // namespace vlab
