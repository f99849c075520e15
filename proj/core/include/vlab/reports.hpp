#pragma once

// CSV report tables. Each builder fixes the column layout and cell format of
// one report; values arrive already aggregated.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vlab/intervene.hpp"
#include "vlab/probes.hpp"
#include "vlab/taskgen.hpp"

namespace vlab {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // RFC 4180 quoting, "\n" line ends, UTF-8.
  std::string to_csv() const;
};

std::string csv_escape(std::string_view cell);
// Inverse of to_csv; throws ParseError on unbalanced quotes.
CsvTable parse_csv(std::string_view text);

// Best score per stream family over the given sites. with_position selects
// the "(best)" layout whose cells name the position too. A BoW row follows
// the stream rows when bow is given.
CsvTable probe_table(std::span<const SiteScores> scores, const std::optional<BowResult>& bow, bool with_position);

struct LabelledDose {
  std::string label;
  DoseResponse dose;
};

// Baseline, margin at the largest and smallest epsilon with deltas, slope.
CsvTable steering_table(std::span<const LabelledDose> runs);
CsvTable site_intervention_table(std::span<const SiteInterventionRow> rows, const HookSite& site);
CsvTable layer_sweep_table(std::span<const LabelledDose> runs);
CsvTable site_compare_table(std::span<const LabelledDose> runs);
CsvTable head_swap_table(std::span<const SwapRow> rows);
CsvTable head_ablate_table(std::span<const AblateRow> rows);
CsvTable dose_table(std::span<const LabelledDose> runs);
CsvTable screening_csv(std::span<const ScreeningRow> rows);

}  // namespace vlab
