#include "vlab/reports.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include <fmt/format.h>

#include "vlab/error.hpp"

namespace vlab {

namespace {

std::string na_or(const std::optional<double>& v, const char* spec) {
  return v ? fmt::format(fmt::runtime(spec), *v) : "n/a";
}

// Signed value, but a plain "0.000" for an exact zero.
std::string signed_or_zero(double v, int decimals) {
  if (v == 0.0) return fmt::format("{:.{}f}", 0.0, decimals);
  return fmt::format("{:+.{}f}", v, decimals);
}

std::string eps_label(double e) { return fmt::format("{:+g}", e); }

std::string margin_with_delta(const DoseResponse& d, double eps) {
  const double m = d.margin_at(eps);
  return fmt::format("{:.3f} ({:+.3f})", m, m - d.baseline);
}

double largest(const DoseResponse& d) { return *std::max_element(d.epsilons.begin(), d.epsilons.end()); }
double smallest(const DoseResponse& d) { return *std::min_element(d.epsilons.begin(), d.epsilons.end()); }

std::string family_name(Stream s) {
  switch (s) {
    case Stream::attn_out: return "attn";
    case Stream::mlp_out: return "mlp";
    default: return std::string(to_string(s));
  }
}

}  // namespace

std::string csv_escape(std::string_view cell) {
  if (cell.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(cell);
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string CsvTable::to_csv() const {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += csv_escape(cells[i]);
    }
    out += '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

CsvTable parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> lines;
  std::vector<std::string> row;
  std::string cell;
  bool quoted = false;
  std::size_t quote_start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
      quote_start = i;
    } else if (c == ',') {
      row.push_back(std::move(cell));
      cell.clear();
    } else if (c == '\n') {
      row.push_back(std::move(cell));
      cell.clear();
      lines.push_back(std::move(row));
      row.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  if (quoted) throw ParseError("csv: unterminated quoted cell", quote_start);
  if (!cell.empty() || !row.empty()) {
    row.push_back(std::move(cell));
    lines.push_back(std::move(row));
  }
  CsvTable t;
  if (lines.empty()) return t;
  t.header = std::move(lines.front());
  t.rows.assign(std::make_move_iterator(lines.begin() + 1), std::make_move_iterator(lines.end()));
  return t;
}

CsvTable probe_table(std::span<const SiteScores> scores, const std::optional<BowResult>& bow, bool with_position) {
  CsvTable t;
  if (with_position) {
    t.header = {"Stream",           "Sign AUC (best)", "R^2 pain (best)",
                "R^2 pleasure (best)", "ρ pain qual (best)", "ρ pleasure qual (best)",
                "Corr(logits) (best)"};
  } else {
    t.header = {"Stream",
                "Sign AUC (layer)",
                "R² pain (layer)",
                "R² pleasure (layer)",
                "ρ pain qual (layer)",
                "ρ pleasure qual (layer)",
                "Corr(logits) (layer)"};
  }
  using Field = std::optional<double> SiteScores::*;
  const Field fields[] = {&SiteScores::sign_auc, &SiteScores::r2_pain,      &SiteScores::r2_pleasure,
                          &SiteScores::rho_pain, &SiteScores::rho_pleasure, &SiteScores::corr_logits};
  for (Stream family : {Stream::resid_pre, Stream::resid_post, Stream::attn_out, Stream::mlp_out}) {
    const bool present =
        std::any_of(scores.begin(), scores.end(), [&](const SiteScores& s) { return s.site.stream == family; });
    if (!present) continue;
    std::vector<std::string> row{family_name(family)};
    for (std::size_t f = 0; f < std::size(fields); ++f) {
      const SiteScores* best = nullptr;
      for (const SiteScores& s : scores) {
        if (s.site.stream != family || !(s.*fields[f])) continue;
        const double v = *(s.*fields[f]);
        const bool by_magnitude = fields[f] == &SiteScores::corr_logits;
        const double key = by_magnitude ? std::abs(v) : v;
        if (!best) {
          best = &s;
          continue;
        }
        const double bv = *((*best).*fields[f]);
        if (key > (by_magnitude ? std::abs(bv) : bv)) best = &s;
      }
      if (!best) {
        row.push_back("n/a");
        continue;
      }
      const double v = *((*best).*fields[f]);
      const std::string num = f == 0 ? fmt::format("{:.2f}", v) : fmt::format("{:.3f}", v);
      row.push_back(with_position ? fmt::format("{} (L{}, pos-{})", num, best->site.layer, best->site.pos)
                                  : fmt::format("{} (L{})", num, best->site.layer));
    }
    t.rows.push_back(std::move(row));
  }
  if (bow) {
    std::vector<std::string> row{"BoW lexical baseline (raw (effective))",
                                 fmt::format("{:.3f} ({:.3f})", bow->raw_auc, bow->effective_auc)};
    row.resize(t.header.size());
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable steering_table(std::span<const LabelledDose> runs) {
  if (runs.empty()) throw DomainError("steering_table: no runs");
  const double hi = largest(runs[0].dose), lo = smallest(runs[0].dose);
  CsvTable t;
  t.header = {"Steering axis / run", "Baseline mean margin (ε = 0)",
              fmt::format("Mean margin at ε = {} (Δ)", eps_label(hi)),
              fmt::format("Mean margin at ε = {} (Δ)", eps_label(lo)), "Approx slope near 0 (Δ/ε)"};
  for (const LabelledDose& r : runs) {
    t.rows.push_back({r.label, fmt::format("{:.3f}", r.dose.baseline), margin_with_delta(r.dose, hi),
                      margin_with_delta(r.dose, lo), na_or(r.dose.slope, "{:.3f}")});
  }
  return t;
}

CsvTable site_intervention_table(std::span<const SiteInterventionRow> rows, const HookSite& site) {
  CsvTable t;
  t.header = {fmt::format("Intervention ({} L{}, pos-{}; read = final)", to_string(site.stream), site.layer, site.pos),
              "Mean margin ₂₋₃", "Δ margin vs. baseline", "Min", "Max"};
  for (const SiteInterventionRow& r : rows) {
    t.rows.push_back({r.label, fmt::format("{:.3f}", r.mean_margin), fmt::format("{:+.3f}", r.delta),
                      fmt::format("{:.3f}", r.min_margin), fmt::format("{:.3f}", r.max_margin)});
  }
  return t;
}

CsvTable layer_sweep_table(std::span<const LabelledDose> runs) {
  if (runs.empty()) throw DomainError("layer_sweep_table: no runs");
  const double hi = largest(runs[0].dose), lo = smallest(runs[0].dose);
  CsvTable t;
  t.header = {"Intervention layer (resid_post)", "Baseline margin ₂₋₃ (ε = 0)",
              fmt::format("Margin at ε = {} (Δ)", eps_label(hi)), fmt::format("Margin at ε = {} (Δ)", eps_label(lo)),
              "Approx. slope near 0 (Δmargin/ε)"};
  for (const LabelledDose& r : runs) {
    t.rows.push_back({r.label, fmt::format("{:.3f}", r.dose.baseline), margin_with_delta(r.dose, hi),
                      margin_with_delta(r.dose, lo), na_or(r.dose.slope, "{:.5f}")});
  }
  return t;
}

CsvTable site_compare_table(std::span<const LabelledDose> runs) {
  CsvTable t;
  t.header = {"Site (stream × layer; pos-1; read = final)", "Baseline margin ₂₋₃ (ε=0)", "Max +Δmargin",
              "Max -Δmargin"};
  for (const LabelledDose& r : runs) {
    t.rows.push_back({r.label, fmt::format("{:.3f}", r.dose.baseline), fmt::format("{:+.3f}", r.dose.max_delta()),
                      fmt::format("{:+.3f}", r.dose.min_delta())});
  }
  return t;
}

CsvTable head_swap_table(std::span<const SwapRow> rows) {
  CsvTable t;
  t.header = {"Patched component", "Pleasure mean margin_{2-3}", "Pain mean margin_{2-3}", "Δ(ple - pain)"};
  for (const SwapRow& r : rows) {
    t.rows.push_back({r.label, fmt::format("{:.3f}", r.pleasure_mean), fmt::format("{:.3f}", r.pain_mean),
                      fmt::format("{:.3f}", r.delta)});
  }
  return t;
}

CsvTable head_ablate_table(std::span<const AblateRow> rows) {
  CsvTable t;
  t.header = {"Ablated component", "Baseline margin_{2-3} (ε = 0)", "Ablated margin_{2-3}", "Δ vs baseline",
              "% change"};
  for (const AblateRow& r : rows) {
    t.rows.push_back({r.label, fmt::format("{:.3f}", r.baseline), fmt::format("{:.3f}", r.ablated),
                      signed_or_zero(r.delta, 3), r.percent_change ? signed_or_zero(*r.percent_change, 2) : "n/a"});
  }
  return t;
}

CsvTable dose_table(std::span<const LabelledDose> runs) {
  CsvTable t;
  t.header = {"Site / intervention", "Baseline margin ₂₋₃ (ε = 0)", "Slope_{margin vs ε}", "Corr(ε, p_2^{full})",
              "Corr(ε, p_2^{2-3})", "(n)"};
  for (const LabelledDose& r : runs) {
    t.rows.push_back({r.label, fmt::format("{:.2f}", r.dose.baseline), na_or(r.dose.slope, "{:.3f}"),
                      na_or(r.dose.corr_p2_full, "{:.3f}"), na_or(r.dose.corr_p2_pair, "{:.3f}"),
                      fmt::format("{}", r.dose.n)});
  }
  return t;
}

CsvTable screening_csv(std::span<const ScreeningRow> rows) {
  CsvTable t;
  t.header = {"Condition", "Total trials", "Compliant", "#1", "#2", "#3", "Ambiguous", "P(3)", "P(2)"};
  for (const ScreeningRow& r : rows) {
    t.rows.push_back({r.condition, fmt::format("{}", r.total), fmt::format("{}", r.compliant),
                      fmt::format("{}", r.choices[0]), fmt::format("{}", r.choices[1]), fmt::format("{}", r.choices[2]),
                      fmt::format("{}", r.ambiguous), fmt::format("{:.2f}%", r.percent(3)),
                      fmt::format("{:.2f}%", r.percent(2))});
  }
  return t;
}

}  // namespace vlab
