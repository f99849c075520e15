#pragma once

// Points-vs-pain/pleasure prompt family, a closed-vocabulary tokenizer with
// whitespace/newline digit variants, corpus assembly and behavioural screening.

#include <array>
#include <compare>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vlab/toymodel.hpp"

namespace vlab {

enum class Valence { control, pain, pleasure };
enum class Scale { none, quantitative, qualitative };

std::string_view to_string(Valence v);
std::string_view to_string(Scale s);
Valence parse_valence(std::string_view s);
Scale parse_scale(std::string_view s);

// Ordered intensity labels, mildest first. The lists differ only in the top
// label ("excruciating" for pain, "exhilarating" for pleasure).
std::span<const std::string_view> qualitative_labels(Valence v);

// intensity is 1..10 on the quantitative scale, the 1-based rank of the label
// on the qualitative scale and 0 for control.
struct Condition {
  Valence valence = Valence::control;
  Scale scale = Scale::none;
  int intensity = 0;

  static Condition control();
  static Condition quantitative(Valence v, int level);
  // Throws DomainError if the label is not in the list for this valence.
  static Condition qualitative(Valence v, std::string_view label);

  std::string_view label() const;  // qualitative only
  void validate() const;
  // Sign target: -1 pain, +1 pleasure, 0 control.
  int sign() const;

  auto operator<=>(const Condition&) const = default;
};

// Full template text for one condition.
std::string render_prompt(const Condition& c);

// All conditions of one valence/scale family, in intensity order.
std::vector<Condition> sweep(Valence v, Scale s);

class Tokenizer {
 public:
  struct Options {
    bool space_digits = true;    // " 1", " 2", " 3" as single tokens
    bool newline_digits = true;  // "\n1", "\n2", "\n3" as single tokens
  };

  static constexpr std::string_view kEos = "<eos>";
  static constexpr std::string_view kMarkerPositive = "<cls+>";
  static constexpr std::string_view kMarkerNegative = "<cls->";

  // Vocabulary covering every rendered prompt of the family.
  static Tokenizer build(Options options);
  static Tokenizer build() { return build(Options{}); }

  // Throws DomainError on text outside the closed vocabulary.
  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> tokens) const;

  std::optional<TokenId> find(std::string_view piece) const;
  // Ids past the vocabulary decode as "<unused_N>".
  std::string piece(TokenId id) const;
  std::size_t size() const noexcept { return pieces_.size(); }
  const Options& options() const noexcept { return options_; }

 private:
  void add(std::string piece);

  Options options_;
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, TokenId> ids_;
};

// digit (1|2|3) -> every single-token variant of that digit.
struct DigitPool {
  std::array<std::vector<TokenId>, 3> variants;
  std::array<TokenId, 3> canonical{};  // the bare "d" token

  std::span<const TokenId> pool(int digit) const;
  TokenId canonical_token(int digit) const;
  // Restricts every pool to its bare token.
  DigitPool single_variant() const;
  // Pools with digits 2 and 3 exchanged.
  DigitPool swapped_2_3() const;
};

// Throws DomainError if any digit has no variant in the vocabulary.
DigitPool digit_token_pool(const Tokenizer& tokenizer);

struct PromptRecord {
  int id = 0;
  Condition condition;
  int plant_label = 0;  // +1/-1 when the text carries a planted class marker
  std::string text;
  std::vector<TokenId> tokens;
  std::array<std::size_t, 5> pos_index{};  // token index of pos-1 .. pos-5

  // Sign used by probes: the planted label when present, else the valence sign.
  int sign_label() const { return plant_label != 0 ? plant_label : condition.sign(); }
};

struct CorpusEntry {
  Condition condition;
  int reps = 1;
};
using CorpusSpec = std::vector<CorpusEntry>;

// Pain and pleasure on both scales, one repetition each.
CorpusSpec probe_corpus_spec();
// One entry per level of every family including control (the screening set).
CorpusSpec screening_corpus_spec();

// Condition-major, intensity-minor ordering with sequential ids.
std::vector<PromptRecord> build_corpus(const CorpusSpec& spec, const Tokenizer& tokenizer);

// Each rendered prompt twice, prefixed by the positive and the negative class
// marker; plant_label carries the marker sign. The two copies differ only in
// the marker token.
std::vector<PromptRecord> build_marker_corpus(const CorpusSpec& spec, const Tokenizer& tokenizer);

// Tab-separated manifest: id, valence, scale, intensity, label, plant, text.
void write_corpus_manifest(std::ostream& os, std::span<const PromptRecord> records);
std::vector<PromptRecord> read_corpus_manifest(std::istream& is, const Tokenizer& tokenizer);

// --- screening -------------------------------------------------------------

enum class ResponseCode { compliant, ambiguous, noncompliant };

struct CodedResponse {
  ResponseCode code = ResponseCode::noncompliant;
  int choice = 0;  // 1..3 when compliant
};

// Choice-bearing tokens are the members of the three digit pools. Exactly one
// such token -> compliant; none -> noncompliant; more than one -> ambiguous.
CodedResponse code_completion(std::span<const TokenId> completion, const DigitPool& pools);

struct ScreeningSettings {
  int samples_per_level = 50;
  double temperature = 1.0;
  int max_new_tokens = 64;
  std::uint64_t seed = 0;
};

struct ScreeningTrial {
  int record_id = 0;
  Condition condition;
  int sample = 0;
  std::vector<TokenId> completion;
  CodedResponse coded;
};

struct ScreeningRow {
  std::string condition;  // "Control", "Pain (quant)", ...
  int total = 0;
  int compliant = 0;
  int ambiguous = 0;
  int noncompliant = 0;
  std::array<int, 3> choices{};  // #1, #2, #3 among compliant

  // Percent of compliant responses choosing the digit; 0 when none compliant.
  double percent(int digit) const;
};

struct ScreeningTable {
  std::vector<ScreeningTrial> trials;
  // Control, Pain (quant), Pain (qual), Pleasure (quant), Pleasure (qual);
  // only the groups present.
  std::vector<ScreeningRow> rows;
};

std::string screening_group(const Condition& c);

// Temperature sampling with a per-trial counter-derived seed; identical
// results for identical inputs regardless of thread count.
ScreeningTable screen_and_code(const Model& model, const Tokenizer& tokenizer,
                               std::span<const PromptRecord> corpus, const ScreeningSettings& settings);

// Regroups coded trials into screening rows.
std::vector<ScreeningRow> tabulate_screening(std::span<const ScreeningTrial> trials);

}  // namespace vlab
