#include "vlab/intervene.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "vlab/activations.hpp"
#include "vlab/error.hpp"

namespace vlab {

namespace {

void check_width(const Model& model, const HookSite& site, std::size_t width, const char* what) {
  validate_site(model.config(), site, 0);
  if (site_width(model.config(), site) != width) {
    throw DomainError(fmt::format("{}: vector width {} does not match site {} (width {})", what, width,
                                  site.label(), site_width(model.config(), site)));
  }
}

std::vector<int> signs_of(std::span<const PromptRecord> prompts) {
  std::vector<int> signs;
  signs.reserve(prompts.size());
  for (const PromptRecord& p : prompts) {
    const int s = p.sign_label();
    if (s == 0) throw DomainError(fmt::format("prompt {} has no valence sign", p.id));
    signs.push_back(s);
  }
  return signs;
}

std::vector<DecisionReadout> run_all(const Model& model, std::span<const PromptRecord> prompts,
                                     const std::function<std::vector<HookEdit>(std::size_t)>& edits_for,
                                     int read_layer, ReadMode mode, const ReadoutContext& ctx) {
  std::vector<DecisionReadout> out(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t i) {
    const std::vector<HookEdit> edits = edits_for(i);
    out[i] = read_edited(model, prompts[i].tokens, edits, read_layer, mode, ctx);
  });
  return out;
}

double mean_margin_of(std::span<const DecisionReadout> rs) {
  double s = 0.0;
  for (const DecisionReadout& r : rs) s += r.margin;
  return s / static_cast<double>(rs.size());
}

}  // namespace

EpsilonGrid EpsilonGrid::standard() {
  return {{-200, -150, -100, -50, -20, -10, -5, -2, -1, 0, 1, 2, 5, 10, 20, 50, 100, 150, 200}};
}

void EpsilonGrid::validate() const {
  if (values.empty()) throw ConfigError("epsilon grid is empty");
  for (double v : values) {
    if (!std::isfinite(v)) throw ConfigError("epsilon grid holds a non-finite value");
  }
  if (std::find(values.begin(), values.end(), 0.0) == values.end()) throw ConfigError("epsilon grid must contain 0");
}

EpsilonGrid EpsilonGrid::scaled(double unit) const {
  if (!(unit > 0.0) || !std::isfinite(unit)) throw ConfigError("epsilon unit must be positive");
  EpsilonGrid g = *this;
  for (double& v : g.values) v *= unit;
  return g;
}

DecisionReadout read_edited(const Model& model, std::span<const TokenId> tokens, std::span<const HookEdit> edits,
                            int read_layer, ReadMode mode, const ReadoutContext& ctx) {
  const bool lens = mode == ReadMode::last && read_layer < model.config().n_layers - 1;
  const HookedResult hr = model.forward_hooked(tokens, edits, lens);
  if (lens) {
    const Vector logits = model.logit_lens_read(*hr.cache, read_layer, 1);
    return make_readout(logits, ctx.pools, mode, ctx.options);
  }
  return make_readout(hr.logits, ctx.pools, mode, ctx.options);
}

DecisionReadout steer(const Model& model, std::span<const TokenId> tokens, const HookSite& site,
                      const Direction& direction, double epsilon, ReadMode mode, const ReadoutContext& ctx) {
  check_width(model, site, direction.size(), "steer");
  const HookEdit e = HookEdit::add(site, direction.vector(), epsilon);
  return read_edited(model, tokens, std::span(&e, 1), site.layer, mode, ctx);
}

DecisionReadout swap_patch(const Model& model, std::span<const TokenId> tokens, const HookSite& site,
                           std::span<const double> donor, ReadMode mode, const ReadoutContext& ctx) {
  check_width(model, site, donor.size(), "swap_patch");
  const HookEdit e = HookEdit::replace(site, Vector(donor.begin(), donor.end()));
  return read_edited(model, tokens, std::span(&e, 1), site.layer, mode, ctx);
}

DecisionReadout ablate_direction(const Model& model, std::span<const TokenId> tokens, const HookSite& site,
                                 const Direction& direction, ReadMode mode, const ReadoutContext& ctx) {
  check_width(model, site, direction.size(), "ablate_direction");
  const HookEdit e = HookEdit::remove_projection(site, direction.vector());
  return read_edited(model, tokens, std::span(&e, 1), site.layer, mode, ctx);
}

std::vector<HookEdit> head_edits(int layer, int pos, std::span<const int> heads, HeadEditKind kind,
                                 std::span<const Vector> payloads, double epsilon) {
  if (payloads.size() != heads.size()) throw DomainError("head_edits: one payload per head required");
  std::vector<HookEdit> edits;
  edits.reserve(heads.size());
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const HookSite site{layer, Stream::head_z, pos, heads[i]};
    switch (kind) {
      case HeadEditKind::swap: edits.push_back(HookEdit::replace(site, payloads[i])); break;
      case HeadEditKind::ablate: edits.push_back(HookEdit::remove_projection(site, payloads[i])); break;
      case HeadEditKind::steer: edits.push_back(HookEdit::add(site, payloads[i], epsilon)); break;
    }
  }
  return edits;
}

DecisionReadout head_intervene(const Model& model, std::span<const TokenId> tokens, int layer, int pos,
                               std::span<const int> heads, HeadEditKind kind, std::span<const Vector> payloads,
                               ReadMode mode, const ReadoutContext& ctx, double epsilon) {
  for (int h : heads) validate_site(model.config(), HookSite{layer, Stream::head_z, pos, h}, tokens.size());
  const std::vector<HookEdit> edits = head_edits(layer, pos, heads, kind, payloads, epsilon);
  return read_edited(model, tokens, edits, layer, mode, ctx);
}

double SweepResult::mean_margin(std::size_t k) const {
  double s = 0.0;
  for (const DecisionReadout& r : readouts.at(k)) s += r.margin;
  return s / static_cast<double>(readouts[k].size());
}

double SweepResult::mean_p2_full(std::size_t k) const {
  double s = 0.0;
  for (const DecisionReadout& r : readouts.at(k)) s += r.p2_full;
  return s / static_cast<double>(readouts[k].size());
}

double SweepResult::mean_p2_pair(std::size_t k) const {
  double s = 0.0;
  for (const DecisionReadout& r : readouts.at(k)) s += r.p2_pair;
  return s / static_cast<double>(readouts[k].size());
}

std::size_t SweepResult::baseline_index() const {
  const auto it = std::find(epsilons.begin(), epsilons.end(), 0.0);
  if (it == epsilons.end()) throw DomainError("sweep has no epsilon = 0 point");
  return static_cast<std::size_t>(it - epsilons.begin());
}

SweepResult sweep_edits(const Model& model, std::span<const PromptRecord> prompts, const std::string& label,
                        const HookSite& site, const EditBuilder& build, const EpsilonGrid& grid, ReadMode mode,
                        const ReadoutContext& ctx) {
  grid.validate();
  if (prompts.empty()) throw DomainError("sweep: no prompts");
  validate_site(model.config(), site, 0);
  SweepResult res;
  res.label = label;
  res.site = site;
  res.mode = mode;
  res.epsilons = grid.values;
  for (const PromptRecord& p : prompts) res.prompt_ids.push_back(p.id);

  std::vector<std::vector<HookEdit>> edits;
  edits.reserve(grid.values.size());
  for (double eps : grid.values) edits.push_back(build(eps));

  const std::size_t np = prompts.size();
  res.readouts.assign(grid.values.size(), std::vector<DecisionReadout>(np));
  parallel_for(grid.values.size() * np, [&](std::size_t idx) {
    const std::size_t k = idx / np;
    const std::size_t p = idx % np;
    res.readouts[k][p] = read_edited(model, prompts[p].tokens, edits[k], site.layer, mode, ctx);
  });
  return res;
}

SweepResult epsilon_sweep(const Model& model, std::span<const PromptRecord> prompts, const HookSite& site,
                          const Direction& direction, const EpsilonGrid& grid, ReadMode mode,
                          const ReadoutContext& ctx) {
  check_width(model, site, direction.size(), "epsilon_sweep");
  const Vector v = direction.vector();
  return sweep_edits(
      model, prompts, site.label(), site,
      [&](double eps) { return std::vector<HookEdit>{HookEdit::add(site, v, eps)}; }, grid, mode, ctx);
}

double DoseResponse::margin_at(double epsilon) const {
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    if (epsilons[i] == epsilon) return mean_margin[i];
  }
  throw DomainError(fmt::format("dose response has no epsilon = {}", epsilon));
}

double DoseResponse::max_delta() const { return *std::max_element(delta_margin.begin(), delta_margin.end()); }
double DoseResponse::min_delta() const { return *std::min_element(delta_margin.begin(), delta_margin.end()); }

DoseResponse dose_summary(const SweepResult& sweep) {
  DoseResponse d;
  if (sweep.readouts.empty() || sweep.readouts.front().empty()) throw DomainError("dose_summary: empty sweep");
  d.epsilons = sweep.epsilons;
  d.n = static_cast<int>(sweep.prompt_ids.size());
  for (std::size_t k = 0; k < sweep.epsilons.size(); ++k) {
    d.mean_margin.push_back(sweep.mean_margin(k));
    d.mean_p2_full.push_back(sweep.mean_p2_full(k));
    d.mean_p2_pair.push_back(sweep.mean_p2_pair(k));
  }
  d.baseline = d.mean_margin[sweep.baseline_index()];
  for (double m : d.mean_margin) d.delta_margin.push_back(m - d.baseline);

  const std::set<double> present(d.epsilons.begin(), d.epsilons.end());
  const std::vector<double> preferred{-2, -1, 0, 1, 2};
  if (std::all_of(preferred.begin(), preferred.end(), [&](double e) { return present.count(e) > 0; })) {
    d.slope_subset = preferred;
  } else {
    std::vector<double> mags;
    for (double e : present) {
      if (e > 0 && present.count(-e)) mags.push_back(e);
    }
    if (!mags.empty()) {
      const std::size_t take = std::min<std::size_t>(2, mags.size());
      for (std::size_t i = take; i-- > 0;) d.slope_subset.push_back(-mags[i]);
      d.slope_subset.push_back(0.0);
      for (std::size_t i = 0; i < take; ++i) d.slope_subset.push_back(mags[i]);
    }
  }
  if (!d.slope_subset.empty()) {
    Vector ys;
    for (double e : d.slope_subset) ys.push_back(d.margin_at(e));
    d.slope = ols_slope(d.slope_subset, ys);
  }

  if (d.epsilons.size() < 2) return d;
  try {
    d.corr_p2_full = pearson(d.epsilons, d.mean_p2_full);
  } catch (const UndefinedCorrelation&) {
  }
  try {
    d.corr_p2_pair = pearson(d.epsilons, d.mean_p2_pair);
  } catch (const UndefinedCorrelation&) {
  }
  return d;
}

std::vector<SweepResult> site_compare(const Model& model, std::span<const PromptRecord> prompts,
                                      std::span<const SweepPoint> points, const EpsilonGrid& grid, ReadMode mode,
                                      const ReadoutContext& ctx) {
  std::vector<SweepResult> out;
  for (const SweepPoint& pt : points) {
    SweepResult r = epsilon_sweep(model, prompts, pt.site, pt.direction, grid, mode, ctx);
    r.label = pt.label;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<SweepResult> layer_sweep(const Model& model, std::span<const PromptRecord> prompts,
                                     const HookSite& base, std::span<const int> layers,
                                     const std::function<Direction(const HookSite&)>& direction_for,
                                     const EpsilonGrid& grid, ReadMode mode, const ReadoutContext& ctx) {
  std::vector<SweepPoint> points;
  for (int l : layers) {
    HookSite s = base;
    s.layer = l;
    points.push_back({fmt::format("L{}", l), s, direction_for(s)});
  }
  return site_compare(model, prompts, points, grid, mode, ctx);
}

ClassMeans class_means(const Matrix& rows, std::span<const int> signs) {
  if (rows.rows() != signs.size()) throw DomainError("class_means: rows/labels mismatch");
  ClassMeans m{Vector(rows.cols(), 0.0), Vector(rows.cols(), 0.0)};
  std::size_t np = 0, nn = 0;
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    if (signs[r] == 0) continue;
    Vector& acc = signs[r] > 0 ? m.pleasure : m.pain;
    (signs[r] > 0 ? np : nn)++;
    auto row = rows.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) acc[c] += row[c];
  }
  if (np == 0 || nn == 0) throw DomainError("class_means: both classes required");
  for (double& v : m.pleasure) v /= static_cast<double>(np);
  for (double& v : m.pain) v /= static_cast<double>(nn);
  return m;
}

HeadTable head_table(const Model& model, std::span<const PromptRecord> prompts, int layer, int pos,
                     std::span<const HeadSet> sets, ReadMode mode, const ReadoutContext& ctx) {
  const int n_heads = model.config().n_heads;
  const std::vector<int> signs = signs_of(prompts);

  std::vector<HookSite> sites{HookSite{layer, Stream::attn_out, pos, std::nullopt}};
  for (int h = 0; h < n_heads; ++h) sites.push_back(HookSite{layer, Stream::head_z, pos, h});
  for (const HookSite& s : sites) validate_site(model.config(), s, 0);
  const std::vector<Matrix> rows = collect_activations(model, prompts, sites);

  std::vector<ClassMeans> means;
  std::vector<Direction> axes;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    means.push_back(class_means(rows[i], signs));
    axes.push_back(valence_axis(rows[i], signs, sites[i]));
  }

  const std::vector<DecisionReadout> base =
      run_all(model, prompts, [](std::size_t) { return std::vector<HookEdit>{}; }, layer, mode, ctx);
  const double baseline = mean_margin_of(base);

  HeadTable table;
  for (const HeadSet& set : sets) {
    for (int h : set.heads) {
      if (h < 0 || h >= n_heads) throw DomainError(fmt::format("head set '{}': invalid head {}", set.label, h));
    }
    const auto swap_edits = [&](std::size_t i) {
      const bool pleasure = signs[i] > 0;
      if (set.vector_level()) {
        const ClassMeans& m = means[0];
        return std::vector<HookEdit>{HookEdit::replace(sites[0], pleasure ? m.pain : m.pleasure)};
      }
      std::vector<Vector> donors;
      for (int h : set.heads) {
        const ClassMeans& m = means[static_cast<std::size_t>(h) + 1];
        donors.push_back(pleasure ? m.pain : m.pleasure);
      }
      return head_edits(layer, pos, set.heads, HeadEditKind::swap, donors);
    };
    const auto ablate_edits = [&](std::size_t) {
      if (set.vector_level()) {
        return std::vector<HookEdit>{HookEdit::remove_projection(sites[0], axes[0].vector())};
      }
      std::vector<Vector> dirs;
      for (int h : set.heads) dirs.push_back(axes[static_cast<std::size_t>(h) + 1].vector());
      return head_edits(layer, pos, set.heads, HeadEditKind::ablate, dirs);
    };

    const std::vector<DecisionReadout> swapped = run_all(model, prompts, swap_edits, layer, mode, ctx);
    SwapRow sr;
    sr.label = set.label;
    double sp = 0.0, sn = 0.0;
    std::size_t np = 0, nn = 0;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      if (signs[i] > 0) {
        sp += swapped[i].margin;
        ++np;
      } else {
        sn += swapped[i].margin;
        ++nn;
      }
    }
    sr.pleasure_mean = sp / static_cast<double>(np);
    sr.pain_mean = sn / static_cast<double>(nn);
    sr.delta = sr.pleasure_mean - sr.pain_mean;
    table.swap.push_back(sr);

    const std::vector<DecisionReadout> ablated = run_all(model, prompts, ablate_edits, layer, mode, ctx);
    AblateRow ar;
    ar.label = set.label;
    ar.baseline = baseline;
    ar.ablated = mean_margin_of(ablated);
    ar.delta = ar.ablated - baseline;
    if (baseline != 0.0) ar.percent_change = 100.0 * ar.delta / std::abs(baseline);
    table.ablate.push_back(ar);
  }
  return table;
}

std::vector<SiteInterventionRow> site_interventions(const Model& model, std::span<const PromptRecord> prompts,
                                                    const HookSite& site, ReadMode mode,
                                                    const ReadoutContext& ctx) {
  const std::vector<int> signs = signs_of(prompts);
  const std::vector<Matrix> rows = collect_activations(model, prompts, std::span(&site, 1));
  const ClassMeans means = class_means(rows[0], signs);
  const Direction axis = valence_axis(rows[0], signs, site);

  const std::vector<DecisionReadout> base =
      run_all(model, prompts, [](std::size_t) { return std::vector<HookEdit>{}; }, site.layer, mode, ctx);
  const double baseline = mean_margin_of(base);

  const auto summarise = [&](std::string label, const std::vector<DecisionReadout>& rs) {
    SiteInterventionRow row;
    row.label = std::move(label);
    row.mean_margin = mean_margin_of(rs);
    row.delta = row.mean_margin - baseline;
    for (const DecisionReadout& r : base) row.baseline_margins.push_back(r.margin);
    for (const DecisionReadout& r : rs) row.margins.push_back(r.margin);
    row.min_margin = rs.front().margin;
    row.max_margin = rs.front().margin;
    for (const DecisionReadout& r : rs) {
      row.min_margin = std::min(row.min_margin, r.margin);
      row.max_margin = std::max(row.max_margin, r.margin);
    }
    return row;
  };

  std::vector<SiteInterventionRow> out;
  out.push_back(summarise("Activation patching (swap)",
                          run_all(
                              model, prompts,
                              [&](std::size_t i) {
                                return std::vector<HookEdit>{
                                    HookEdit::replace(site, signs[i] > 0 ? means.pain : means.pleasure)};
                              },
                              site.layer, mode, ctx)));
  out.push_back(summarise("Ablation", run_all(
                                          model, prompts,
                                          [&](std::size_t) {
                                            return std::vector<HookEdit>{
                                                HookEdit::remove_projection(site, axis.vector())};
                                          },
                                          site.layer, mode, ctx)));
  return out;
}

}  // namespace vlab
