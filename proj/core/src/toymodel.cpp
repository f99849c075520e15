#include "vlab/toymodel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "vlab/error.hpp"

namespace vlab {

namespace {

constexpr double kLayerNormEps = 1e-5;

void layer_norm_row(std::span<const double> in, const Vector& g, const Vector& b,
                    std::span<double> out) {
  const std::size_t n = in.size();
  double m = 0.0;
  for (double v : in) m += v;
  m /= static_cast<double>(n);
  double var = 0.0;
  for (double v : in) var += (v - m) * (v - m);
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::size_t i = 0; i < n; ++i) out[i] = (in[i] - m) * inv * g[i] + b[i];
}

void linear_row(std::span<const double> in, const Matrix& w, const Vector& bias,
                std::span<double> out) {
  std::copy(bias.begin(), bias.end(), out.begin());
  for (std::size_t k = 0; k < w.rows(); ++k) {
    const double x = in[k];
    const double* wr = w.row(k).data();
    for (std::size_t j = 0; j < w.cols(); ++j) out[j] += x * wr[j];
  }
}

double gelu(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

// Causal attention for query position t over key/value rows [0, t].
void attend_row(std::span<const double> q, const Matrix& keys, const Matrix& values, std::size_t t,
                int n_heads, int d_head, std::span<double> z, std::vector<double>& scores) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_head));
  scores.resize(t + 1);
  for (int h = 0; h < n_heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * d_head;
    double mx = -INFINITY;
    for (std::size_t j = 0; j <= t; ++j) {
      const double* kr = keys.row(j).data() + off;
      double s = 0.0;
      for (int i = 0; i < d_head; ++i) s += q[off + i] * kr[i];
      scores[j] = s * scale;
      mx = std::max(mx, scores[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j <= t; ++j) {
      scores[j] = std::exp(scores[j] - mx);
      total += scores[j];
    }
    for (int i = 0; i < d_head; ++i) z[off + i] = 0.0;
    for (std::size_t j = 0; j <= t; ++j) {
      const double p = scores[j] / total;
      const double* vr = values.row(j).data() + off;
      for (int i = 0; i < d_head; ++i) z[off + i] += p * vr[i];
    }
  }
}

void mlp_row(std::span<const double> mid, const Vector& g, const Vector& b, const Matrix& w_in,
             const Vector& b_in, const Matrix& w_out, const Vector& b_out, std::span<double> normed,
             std::span<double> hidden, std::span<double> out) {
  layer_norm_row(mid, g, b, normed);
  linear_row(normed, w_in, b_in, hidden);
  for (double& v : hidden) v = gelu(v);
  linear_row(hidden, w_out, b_out, out);
}

void apply_edit(const HookEdit& e, std::span<double> h) {
  switch (e.kind) {
    case EditKind::add_vector:
      for (std::size_t i = 0; i < h.size(); ++i) h[i] += e.scale * e.payload[i];
      break;
    case EditKind::replace_vector:
      std::copy(e.payload.begin(), e.payload.end(), h.begin());
      break;
    case EditKind::remove_projection: {
      const double p = dot(h, e.payload);
      for (std::size_t i = 0; i < h.size(); ++i) h[i] -= p * e.payload[i];
      break;
    }
  }
}

void apply_stream_edits(std::span<const HookEdit> edits, int layer, Stream stream, Matrix& m,
                        int d_head) {
  const std::size_t seq = m.rows();
  for (const HookEdit& e : edits) {
    if (e.site.layer != layer || e.site.stream != stream) continue;
    auto row = m.row(seq - static_cast<std::size_t>(e.site.pos));
    if (stream == Stream::head_z) {
      row = row.subspan(static_cast<std::size_t>(*e.site.head) * d_head, d_head);
    }
    apply_edit(e, row);
  }
}

Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double sd) {
  std::normal_distribution<double> dist(0.0, sd);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

Vector random_vector(std::mt19937_64& rng, std::size_t n, double centre, double sd) {
  std::normal_distribution<double> dist(0.0, sd);
  Vector v(n);
  for (double& x : v) x = centre + dist(rng);
  return v;
}

template <class T>
void hash_values(std::uint64_t& h, std::span<const T> values) {
  h = fnv1a64(std::as_bytes(values), h);
}

}  // namespace

// --- config / sites ---------------------------------------------------------

void ModelConfig::validate() const {
  if (n_layers < 2) throw ConfigError("n_layers must be at least 2");
  if (n_heads < 1 || d_head < 1 || d_mlp < 1) throw ConfigError("model dimensions must be positive");
  if (d_model != n_heads * d_head) throw ConfigError("d_model must equal n_heads * d_head");
  if (vocab_size <= kReservedTokens) throw ConfigError("vocab_size too small");
  if (max_seq < 1) throw ConfigError("max_seq must be positive");
}

std::string ModelConfig::canonical() const {
  return fmt::format("n_layers={};n_heads={};d_model={};d_head={};d_mlp={};vocab_size={};max_seq={};rng_seed={}",
                     n_layers, n_heads, d_model, d_head, d_mlp, vocab_size, max_seq, rng_seed);
}

std::string_view to_string(Stream s) {
  switch (s) {
    case Stream::resid_pre: return "resid_pre";
    case Stream::attn_out: return "attn_out";
    case Stream::mlp_out: return "mlp_out";
    case Stream::resid_post: return "resid_post";
    case Stream::head_z: return "head_z";
    case Stream::ln_final: return "ln_final";
  }
  return "?";
}

Stream parse_stream(std::string_view name) {
  for (Stream s : {Stream::resid_pre, Stream::attn_out, Stream::mlp_out, Stream::resid_post,
                   Stream::head_z, Stream::ln_final}) {
    if (to_string(s) == name) return s;
  }
  if (name == "attn") return Stream::attn_out;
  if (name == "mlp") return Stream::mlp_out;
  throw ConfigError(fmt::format("unknown stream '{}'", name));
}

std::string HookSite::label() const {
  std::string head_part = head ? fmt::format(".h{}", *head) : std::string();
  return fmt::format("{}@L{}{}:pos-{}", to_string(stream), layer, head_part, pos);
}

HookSite HookSite::parse(std::string_view text) {
  auto fail = [&] { return ConfigError(fmt::format("malformed site '{}'", text)); };
  auto read_int = [&](std::string_view s) {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw fail();
    return v;
  };
  const auto at = text.find("@L");
  const auto colon = text.find(":pos-");
  if (at == std::string_view::npos || colon == std::string_view::npos || colon < at) throw fail();
  HookSite site;
  site.stream = parse_stream(text.substr(0, at));
  std::string_view layer_part = text.substr(at + 2, colon - at - 2);
  if (auto dot_h = layer_part.find(".h"); dot_h != std::string_view::npos) {
    site.head = read_int(layer_part.substr(dot_h + 2));
    layer_part = layer_part.substr(0, dot_h);
  }
  site.layer = read_int(layer_part);
  site.pos = read_int(text.substr(colon + 5));
  if (site.layer < 0 || site.pos < 1 || (site.head && *site.head < 0)) throw fail();
  if (site.head.has_value() != (site.stream == Stream::head_z)) throw fail();
  return site;
}

std::size_t site_width(const ModelConfig& config, const HookSite& site) {
  return static_cast<std::size_t>(site.stream == Stream::head_z ? config.d_head : config.d_model);
}

void validate_site(const ModelConfig& config, const HookSite& site, std::size_t seq_len) {
  const std::string name = site.label();
  if (site.layer < 0 || site.layer >= config.n_layers) {
    throw DomainError(fmt::format("site {}: layer out of range", name));
  }
  if (site.pos < 1 || (seq_len > 0 && static_cast<std::size_t>(site.pos) > seq_len)) {
    throw DomainError(fmt::format("site {}: position out of range", name));
  }
  if (site.stream == Stream::head_z) {
    if (!site.head || *site.head < 0 || *site.head >= config.n_heads) {
      throw DomainError(fmt::format("site {}: invalid head index", name));
    }
  } else if (site.head) {
    throw DomainError(fmt::format("site {}: head only valid for head_z", name));
  }
  if (site.stream == Stream::ln_final && site.layer != config.n_layers - 1) {
    throw DomainError(fmt::format("site {}: ln_final exists only after the last layer", name));
  }
}

// --- cache --------------------------------------------------------------------

ActivationCache::ActivationCache(const ModelConfig& config, std::size_t seq_len)
    : seq_len_(seq_len), d_head_(config.d_head), ln_final_(seq_len, config.d_model) {
  const auto d = static_cast<std::size_t>(config.d_model);
  layers_.reserve(config.n_layers);
  for (int l = 0; l < config.n_layers; ++l) {
    layers_.push_back(Layer{Matrix(seq_len, d), Matrix(seq_len, d), Matrix(seq_len, d),
                            Matrix(seq_len, d), Matrix(seq_len, d)});
  }
}

const Matrix& ActivationCache::stream(int layer, Stream s) const {
  return const_cast<ActivationCache*>(this)->stream(layer, s);
}

Matrix& ActivationCache::stream(int layer, Stream s) {
  if (layers_.empty()) throw DomainError("activation cache is empty");
  if (layer < 0 || layer >= n_layers()) throw DomainError("activation cache: layer out of range");
  Layer& l = layers_[static_cast<std::size_t>(layer)];
  switch (s) {
    case Stream::resid_pre: return l.resid_pre;
    case Stream::attn_out: return l.attn_out;
    case Stream::mlp_out: return l.mlp_out;
    case Stream::resid_post: return l.resid_post;
    case Stream::head_z: return l.head_z;
    case Stream::ln_final:
      if (layer != n_layers() - 1) throw DomainError("ln_final exists only after the last layer");
      return ln_final_;
  }
  throw DomainError("unknown stream");
}

std::span<const double> ActivationCache::at(const HookSite& site) const {
  if (site.pos < 1 || static_cast<std::size_t>(site.pos) > seq_len_) {
    throw DomainError(fmt::format("cache has no entry for {}", site.label()));
  }
  auto row = stream(site.layer, site.stream).row(seq_len_ - static_cast<std::size_t>(site.pos));
  if (site.stream == Stream::head_z) {
    if (!site.head) throw DomainError("head_z site without head");
    return row.subspan(static_cast<std::size_t>(*site.head) * d_head_, d_head_);
  }
  return row;
}

// --- edits --------------------------------------------------------------------

HookEdit HookEdit::add(HookSite site, Vector direction, double scale) {
  return HookEdit{site, EditKind::add_vector, std::move(direction), scale};
}

HookEdit HookEdit::replace(HookSite site, Vector donor) {
  return HookEdit{site, EditKind::replace_vector, std::move(donor), 1.0};
}

HookEdit HookEdit::remove_projection(HookSite site, Vector direction) {
  return HookEdit{site, EditKind::remove_projection, std::move(direction), 1.0};
}

// --- model ----------------------------------------------------------------------

Model build_model(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config_ = config;
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto hd = static_cast<std::size_t>(config.n_heads * config.d_head);
  const auto f = static_cast<std::size_t>(config.d_mlp);
  const auto v = static_cast<std::size_t>(config.vocab_size);
  const double sd_d = 1.0 / std::sqrt(static_cast<double>(d));

  std::mt19937_64 rng(config.rng_seed);
  m.tok_emb_ = random_matrix(rng, v, d, 1.0);
  auto marker = m.tok_emb_.row(kPlantPositiveToken);
  std::copy(marker.begin(), marker.end(), m.tok_emb_.row(kPlantNegativeToken).begin());
  m.pos_emb_ = random_matrix(rng, static_cast<std::size_t>(config.max_seq), d, 0.3);

  for (int l = 0; l < config.n_layers; ++l) {
    Model::LayerWeights w;
    w.ln1_g = random_vector(rng, d, 1.0, 0.05);
    w.ln1_b = random_vector(rng, d, 0.0, 0.05);
    w.w_q = random_matrix(rng, d, hd, sd_d);
    w.w_k = random_matrix(rng, d, hd, sd_d);
    w.w_v = random_matrix(rng, d, hd, sd_d);
    w.b_q = random_vector(rng, hd, 0.0, 0.02);
    w.b_k = random_vector(rng, hd, 0.0, 0.02);
    w.b_v = random_vector(rng, hd, 0.0, 0.02);
    w.w_o = random_matrix(rng, hd, d, 1.0 / std::sqrt(static_cast<double>(hd)));
    w.b_o = random_vector(rng, d, 0.0, 0.02);
    w.ln2_g = random_vector(rng, d, 1.0, 0.05);
    w.ln2_b = random_vector(rng, d, 0.0, 0.05);
    w.w_in = random_matrix(rng, d, f, sd_d);
    w.b_in = random_vector(rng, f, 0.0, 0.02);
    w.w_out = random_matrix(rng, f, d, 1.0 / std::sqrt(static_cast<double>(f)));
    w.b_out = random_vector(rng, d, 0.0, 0.02);
    m.layers_.push_back(std::move(w));
  }
  m.lnf_g_ = random_vector(rng, d, 1.0, 0.05);
  m.lnf_b_ = random_vector(rng, d, 0.0, 0.05);
  m.w_u_ = random_matrix(rng, d, v, sd_d);
  m.b_u_ = random_vector(rng, v, 0.0, 0.02);
  return m;
}

Model build_planted_model(const ModelConfig& config, const Vector& plant, const HookSite& site,
                          double gain) {
  Model m = build_model(config);
  if (plant.size() != static_cast<std::size_t>(config.d_model)) {
    throw ConfigError("plant direction width must equal d_model");
  }
  require_finite(plant, "plant");
  if (std::abs(norm(plant) - 1.0) > 1e-10) throw ConfigError("plant direction must be unit norm");
  if (site.stream != Stream::resid_post) throw ConfigError("plant site must be a resid_post site");
  validate_site(config, site, 0);
  if (!std::isfinite(gain)) throw ConfigError("plant gain must be finite");
  if (gain != 0.0) m.plant_ = Plant{plant, site, gain};
  return m;
}

void Model::check_tokens(std::span<const TokenId> tokens) const {
  if (tokens.empty() || tokens.size() > static_cast<std::size_t>(config_.max_seq)) {
    throw DomainError(fmt::format("sequence length {} outside [1, {}]", tokens.size(), config_.max_seq));
  }
  for (TokenId t : tokens) {
    if (t < 0 || t >= config_.vocab_size) throw DomainError(fmt::format("token id {} out of vocabulary", t));
  }
}

int Model::plant_label(std::span<const TokenId> tokens, std::size_t upto) const {
  for (std::size_t i = upto + 1; i-- > 0;) {
    if (tokens[i] == kPlantPositiveToken) return 1;
    if (tokens[i] == kPlantNegativeToken) return -1;
  }
  return 0;
}

ForwardResult Model::forward_cached(std::span<const TokenId> tokens) const {
  ForwardResult out;
  HookedResult r = run(tokens, {}, true, true, &out.logits);
  out.cache = std::move(*r.cache);
  return out;
}

HookedResult Model::forward_hooked(std::span<const TokenId> tokens, std::span<const HookEdit> edits,
                                   bool capture) const {
  return run(tokens, edits, capture, false, nullptr);
}

HookedResult Model::run(std::span<const TokenId> tokens, std::span<const HookEdit> edits,
                        bool capture, bool all_logits, Matrix* logits_out) const {
  check_tokens(tokens);
  const std::size_t seq = tokens.size();
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto hd = static_cast<std::size_t>(config_.n_heads * config_.d_head);
  const auto f = static_cast<std::size_t>(config_.d_mlp);

  for (std::size_t i = 0; i < edits.size(); ++i) {
    const HookEdit& e = edits[i];
    validate_site(config_, e.site, seq);
    if (e.payload.size() != site_width(config_, e.site)) {
      throw DomainError(fmt::format("edit at {}: payload width {} != site width {}", e.site.label(),
                                    e.payload.size(), site_width(config_, e.site)));
    }
    if (e.kind == EditKind::remove_projection && std::abs(norm(e.payload) - 1.0) > 1e-8) {
      throw DomainError(fmt::format("edit at {}: projection direction must be unit norm", e.site.label()));
    }
    if (e.kind == EditKind::replace_vector) {
      for (std::size_t j = 0; j < i; ++j) {
        if (edits[j].kind == EditKind::replace_vector && edits[j].site == e.site) {
          throw DomainError(fmt::format("duplicate replace edits at {}", e.site.label()));
        }
      }
    }
  }

  std::optional<ActivationCache> cache;
  if (capture) cache.emplace(config_, seq);

  Matrix x(seq, d);
  for (std::size_t t = 0; t < seq; ++t) {
    auto te = tok_emb_.row(static_cast<std::size_t>(tokens[t]));
    auto pe = pos_emb_.row(t);
    auto xr = x.row(t);
    for (std::size_t i = 0; i < d; ++i) xr[i] = te[i] + pe[i];
  }

  Matrix normed(seq, d), q(seq, hd), k(seq, hd), v(seq, hd), z(seq, hd), attn(seq, d), mid(seq, d),
      mlp(seq, d), post(seq, d);
  Vector ln2_buf(d), hidden(f);
  std::vector<double> scores;

  for (int l = 0; l < config_.n_layers; ++l) {
    const LayerWeights& w = layers_[static_cast<std::size_t>(l)];
    apply_stream_edits(edits, l, Stream::resid_pre, x, config_.d_head);

    for (std::size_t t = 0; t < seq; ++t) {
      layer_norm_row(x.row(t), w.ln1_g, w.ln1_b, normed.row(t));
      linear_row(normed.row(t), w.w_q, w.b_q, q.row(t));
      linear_row(normed.row(t), w.w_k, w.b_k, k.row(t));
      linear_row(normed.row(t), w.w_v, w.b_v, v.row(t));
    }
    for (std::size_t t = 0; t < seq; ++t) {
      attend_row(q.row(t), k, v, t, config_.n_heads, config_.d_head, z.row(t), scores);
    }
    apply_stream_edits(edits, l, Stream::head_z, z, config_.d_head);

    for (std::size_t t = 0; t < seq; ++t) linear_row(z.row(t), w.w_o, w.b_o, attn.row(t));
    apply_stream_edits(edits, l, Stream::attn_out, attn, config_.d_head);

    for (std::size_t t = 0; t < seq; ++t) {
      auto xr = x.row(t);
      auto ar = attn.row(t);
      auto mr = mid.row(t);
      for (std::size_t i = 0; i < d; ++i) mr[i] = xr[i] + ar[i];
      mlp_row(mr, w.ln2_g, w.ln2_b, w.w_in, w.b_in, w.w_out, w.b_out, ln2_buf, hidden, mlp.row(t));
    }
    if (plant_ && plant_->site.layer == l && static_cast<std::size_t>(plant_->site.pos) <= seq) {
      const std::size_t t = seq - static_cast<std::size_t>(plant_->site.pos);
      const int label = plant_label(tokens, t);
      if (label != 0) {
        auto mr = mlp.row(t);
        const double s = label * plant_->gain;
        for (std::size_t i = 0; i < d; ++i) mr[i] += s * plant_->direction[i];
      }
    }
    apply_stream_edits(edits, l, Stream::mlp_out, mlp, config_.d_head);

    for (std::size_t t = 0; t < seq; ++t) {
      auto xr = x.row(t);
      auto ar = attn.row(t);
      auto mr = mlp.row(t);
      auto pr = post.row(t);
      for (std::size_t i = 0; i < d; ++i) pr[i] = xr[i] + ar[i] + mr[i];
    }
    apply_stream_edits(edits, l, Stream::resid_post, post, config_.d_head);

    if (cache) {
      cache->stream(l, Stream::resid_pre) = x;
      cache->stream(l, Stream::head_z) = z;
      cache->stream(l, Stream::attn_out) = attn;
      cache->stream(l, Stream::mlp_out) = mlp;
      cache->stream(l, Stream::resid_post) = post;
    }
    std::swap(x, post);
  }

  const int last = config_.n_layers - 1;
  Matrix lnf(seq, d);
  for (std::size_t t = 0; t < seq; ++t) layer_norm_row(x.row(t), lnf_g_, lnf_b_, lnf.row(t));
  apply_stream_edits(edits, last, Stream::ln_final, lnf, config_.d_head);
  if (cache) cache->stream(last, Stream::ln_final) = lnf;

  HookedResult result;
  if (all_logits && logits_out) {
    *logits_out = Matrix(seq, static_cast<std::size_t>(config_.vocab_size));
    for (std::size_t t = 0; t < seq; ++t) linear_row(lnf.row(t), w_u_, b_u_, logits_out->row(t));
    auto lr = logits_out->row(seq - 1);
    result.logits.assign(lr.begin(), lr.end());
  } else {
    result.logits.assign(static_cast<std::size_t>(config_.vocab_size), 0.0);
    linear_row(lnf.row(seq - 1), w_u_, b_u_, result.logits);
  }
  result.cache = std::move(cache);
  return result;
}

Vector Model::unembed(std::span<const double> resid) const {
  if (resid.size() != static_cast<std::size_t>(config_.d_model)) throw DomainError("unembed: width mismatch");
  Vector normed(resid.size());
  layer_norm_row(resid, lnf_g_, lnf_b_, normed);
  return unembed_normed(normed);
}

Vector Model::unembed_normed(std::span<const double> normed) const {
  if (normed.size() != static_cast<std::size_t>(config_.d_model)) {
    throw DomainError("unembed_normed: width mismatch");
  }
  Vector logits(static_cast<std::size_t>(config_.vocab_size));
  linear_row(normed, w_u_, b_u_, logits);
  return logits;
}

Vector Model::logit_lens_read(const ActivationCache& cache, int layer, int pos) const {
  if (cache.empty()) throw DomainError("logit_lens_read: empty cache");
  HookSite site{layer, Stream::resid_post, pos, std::nullopt};
  return unembed(cache.at(site));
}

Vector Model::unembedding_column(TokenId token) const {
  if (token < 0 || token >= config_.vocab_size) throw DomainError("unembedding_column: token out of range");
  Vector col(static_cast<std::size_t>(config_.d_model));
  for (std::size_t i = 0; i < col.size(); ++i) col[i] = w_u_(i, static_cast<std::size_t>(token));
  return col;
}

std::string Model::config_hash() const {
  std::uint64_t h = fnv1a64(config_.canonical());
  if (plant_) {
    const std::string site = plant_->site.label();
    h = fnv1a64(std::as_bytes(std::span(site.data(), site.size())), h);
    hash_values<double>(h, std::span<const double>(&plant_->gain, 1));
    hash_values<double>(h, plant_->direction);
  }
  return fmt::format("{:016x}", h);
}

std::uint64_t Model::weights_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mat = [&](const Matrix& m) { hash_values<double>(h, m.data()); };
  auto vec = [&](const Vector& vv) { hash_values<double>(h, vv); };
  mat(tok_emb_);
  mat(pos_emb_);
  for (const LayerWeights& w : layers_) {
    vec(w.ln1_g), vec(w.ln1_b), mat(w.w_q), mat(w.w_k), mat(w.w_v), vec(w.b_q), vec(w.b_k), vec(w.b_v);
    mat(w.w_o), vec(w.b_o), vec(w.ln2_g), vec(w.ln2_b), mat(w.w_in), vec(w.b_in), mat(w.w_out), vec(w.b_out);
  }
  vec(lnf_g_), vec(lnf_b_), mat(w_u_), vec(b_u_);
  return h;
}

// --- incremental decoder --------------------------------------------------------

Model::Decoder::Decoder(const Model& model) : model_(&model) {
  if (model.plant_) throw ConfigError("incremental decoding is not defined for planted models");
  const auto hd = static_cast<std::size_t>(model.config_.n_heads * model.config_.d_head);
  for (int l = 0; l < model.config_.n_layers; ++l) {
    keys_.emplace_back(static_cast<std::size_t>(model.config_.max_seq), hd);
    values_.emplace_back(static_cast<std::size_t>(model.config_.max_seq), hd);
  }
}

Vector Model::Decoder::step(TokenId token, bool want_logits) {
  const Model& m = *model_;
  const ModelConfig& c = m.config_;
  if (length_ >= static_cast<std::size_t>(c.max_seq)) throw DomainError("decoder: max_seq exceeded");
  if (token < 0 || token >= c.vocab_size) throw DomainError("decoder: token out of vocabulary");
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto hd = static_cast<std::size_t>(c.n_heads * c.d_head);
  const std::size_t t = length_;

  Vector x(d), normed(d), q(hd), z(hd), attn(d), mid(d), ln2_buf(d), hidden(static_cast<std::size_t>(c.d_mlp)),
      mlp(d), post(d);
  std::vector<double> scores;
  auto te = m.tok_emb_.row(static_cast<std::size_t>(token));
  auto pe = m.pos_emb_.row(t);
  for (std::size_t i = 0; i < d; ++i) x[i] = te[i] + pe[i];

  for (int l = 0; l < c.n_layers; ++l) {
    const LayerWeights& w = m.layers_[static_cast<std::size_t>(l)];
    Matrix& keys = keys_[static_cast<std::size_t>(l)];
    Matrix& values = values_[static_cast<std::size_t>(l)];
    layer_norm_row(x, w.ln1_g, w.ln1_b, normed);
    linear_row(normed, w.w_q, w.b_q, q);
    linear_row(normed, w.w_k, w.b_k, keys.row(t));
    linear_row(normed, w.w_v, w.b_v, values.row(t));
    attend_row(q, keys, values, t, c.n_heads, c.d_head, z, scores);
    linear_row(z, w.w_o, w.b_o, attn);
    for (std::size_t i = 0; i < d; ++i) mid[i] = x[i] + attn[i];
    mlp_row(mid, w.ln2_g, w.ln2_b, w.w_in, w.b_in, w.w_out, w.b_out, ln2_buf, hidden, mlp);
    for (std::size_t i = 0; i < d; ++i) post[i] = x[i] + attn[i] + mlp[i];
    std::swap(x, post);
  }
  ++length_;
  if (!want_logits) return {};
  return m.unembed(x);
}

}  // namespace vlab
