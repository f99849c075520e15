#pragma once

// Causal interventions on a single prompt (steer, swap, ablate, head edits)
// and their aggregation over prompt pools (epsilon sweeps, layer/site
// comparisons, head tables, dose-response summaries).
//
// Every intervention runs a fresh hooked forward. read = last takes a
// logit-lens readout of resid_post at the intervened layer; at the last layer
// it is the same as read = final.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vlab/probes.hpp"
#include "vlab/readout.hpp"
#include "vlab/taskgen.hpp"
#include "vlab/toymodel.hpp"

namespace vlab {

struct EpsilonGrid {
  std::vector<double> values;

  // {-200, -150, -100, -50, -20, -10, -5, -2, -1, 0, 1, 2, 5, 10, 20, 50, 100, 150, 200}
  static EpsilonGrid standard();
  // Throws ConfigError if empty, non-finite, or missing 0.
  void validate() const;
  // Every value times unit (variance-calibrated steering).
  EpsilonGrid scaled(double unit) const;
};

struct ReadoutContext {
  DigitPool pools;
  ReadoutOptions options;
};

// Hooked forward plus a readout in the requested mode. read_layer is the
// layer whose resid_post feeds the read = last lens.
DecisionReadout read_edited(const Model& model, std::span<const TokenId> tokens, std::span<const HookEdit> edits,
                            int read_layer, ReadMode mode, const ReadoutContext& ctx);

DecisionReadout steer(const Model& model, std::span<const TokenId> tokens, const HookSite& site,
                      const Direction& direction, double epsilon, ReadMode mode, const ReadoutContext& ctx);

DecisionReadout swap_patch(const Model& model, std::span<const TokenId> tokens, const HookSite& site,
                           std::span<const double> donor, ReadMode mode, const ReadoutContext& ctx);

DecisionReadout ablate_direction(const Model& model, std::span<const TokenId> tokens, const HookSite& site,
                                 const Direction& direction, ReadMode mode, const ReadoutContext& ctx);

enum class HeadEditKind { swap, ablate, steer };

// One edit per listed head at head_z of (layer, pos). payloads[i] belongs to
// heads[i]: a donor z for swap, a unit direction for ablate and steer.
std::vector<HookEdit> head_edits(int layer, int pos, std::span<const int> heads, HeadEditKind kind,
                                 std::span<const Vector> payloads, double epsilon = 0.0);

DecisionReadout head_intervene(const Model& model, std::span<const TokenId> tokens, int layer, int pos,
                               std::span<const int> heads, HeadEditKind kind, std::span<const Vector> payloads,
                               ReadMode mode, const ReadoutContext& ctx, double epsilon = 0.0);

// --- sweeps ------------------------------------------------------------------

// Edits to apply for one epsilon value.
using EditBuilder = std::function<std::vector<HookEdit>(double epsilon)>;

struct SweepResult {
  std::string label;
  HookSite site;
  ReadMode mode = ReadMode::final_;
  std::vector<double> epsilons;
  std::vector<int> prompt_ids;
  std::vector<std::vector<DecisionReadout>> readouts;  // [epsilon][prompt]

  // Prompt-order means at one grid index.
  double mean_margin(std::size_t eps_index) const;
  double mean_p2_full(std::size_t eps_index) const;
  double mean_p2_pair(std::size_t eps_index) const;
  // First grid index holding epsilon == 0.
  std::size_t baseline_index() const;
};

SweepResult sweep_edits(const Model& model, std::span<const PromptRecord> prompts, const std::string& label,
                        const HookSite& site, const EditBuilder& build, const EpsilonGrid& grid, ReadMode mode,
                        const ReadoutContext& ctx);

SweepResult epsilon_sweep(const Model& model, std::span<const PromptRecord> prompts, const HookSite& site,
                          const Direction& direction, const EpsilonGrid& grid, ReadMode mode,
                          const ReadoutContext& ctx);

struct DoseResponse {
  std::vector<double> epsilons;
  std::vector<double> mean_margin;
  std::vector<double> delta_margin;  // mean_margin - baseline
  std::vector<double> mean_p2_full;
  std::vector<double> mean_p2_pair;
  double baseline = 0.0;
  std::optional<double> slope;       // OLS of mean margin on slope_subset
  std::vector<double> slope_subset;  // empty when slope is n/a
  std::optional<double> corr_p2_full;
  std::optional<double> corr_p2_pair;
  int n = 0;

  // Mean margin at the first occurrence of epsilon; throws if absent.
  double margin_at(double epsilon) const;
  double max_delta() const;
  double min_delta() const;
};

// Slope over {-2,-1,0,1,2} when all are present, otherwise over 0 and the two
// smallest magnitudes present with both signs. Correlations use the per-epsilon
// prompt means over the full grid; a constant series leaves them empty.
DoseResponse dose_summary(const SweepResult& sweep);

struct SweepPoint {
  std::string label;
  HookSite site;
  Direction direction;
};

// One epsilon sweep per point, in order.
std::vector<SweepResult> site_compare(const Model& model, std::span<const PromptRecord> prompts,
                                      std::span<const SweepPoint> points, const EpsilonGrid& grid, ReadMode mode,
                                      const ReadoutContext& ctx);

// The same stream and position at each layer; direction_for supplies the axis
// for each site.
std::vector<SweepResult> layer_sweep(const Model& model, std::span<const PromptRecord> prompts,
                                     const HookSite& base, std::span<const int> layers,
                                     const std::function<Direction(const HookSite&)>& direction_for,
                                     const EpsilonGrid& grid, ReadMode mode, const ReadoutContext& ctx);

// --- class means and head tables -----------------------------------------------

// Means of the rows with sign > 0 and sign < 0.
struct ClassMeans {
  Vector pleasure;
  Vector pain;
};
ClassMeans class_means(const Matrix& rows, std::span<const int> signs);

// A component of attn_out: every head as one vector (heads empty), or a head subset.
struct HeadSet {
  std::string label;
  std::vector<int> heads;  // empty = the whole attn_out vector
  bool vector_level() const { return heads.empty(); }
};

struct SwapRow {
  std::string label;
  double pleasure_mean = 0.0;
  double pain_mean = 0.0;
  double delta = 0.0;  // pleasure_mean - pain_mean
};

struct AblateRow {
  std::string label;
  double baseline = 0.0;
  double ablated = 0.0;
  double delta = 0.0;
  std::optional<double> percent_change;  // 100 * delta / |baseline|; empty at baseline 0
};

struct HeadTable {
  std::vector<SwapRow> swap;
  std::vector<AblateRow> ablate;
};

// Swap replaces each listed component with the opposite class's mean (so
// pleasure prompts receive the pain mean). Ablation removes the valence axis
// of each component: the attn_out axis at vector level, per-head axes at
// head_z otherwise.
HeadTable head_table(const Model& model, std::span<const PromptRecord> prompts, int layer, int pos,
                     std::span<const HeadSet> sets, ReadMode mode, const ReadoutContext& ctx);

// Swap and ablation of a whole site, one readout per prompt.
struct SiteInterventionRow {
  std::string label;
  double mean_margin = 0.0;
  double delta = 0.0;
  double min_margin = 0.0;
  double max_margin = 0.0;
  std::vector<double> margins;           // per prompt, edited
  std::vector<double> baseline_margins;  // per prompt, edit-free
};

// Rows: opposite-class-mean swap, then valence-axis ablation. delta is
// relative to the edit-free mean margin.
std::vector<SiteInterventionRow> site_interventions(const Model& model, std::span<const PromptRecord> prompts,
                                                    const HookSite& site, ReadMode mode, const ReadoutContext& ctx);

}  // namespace vlab
