#pragma once

// Small pre-norm decoder-only transformer with hooks on every stream family.
//
// Block structure (per layer L, per position):
//   resid_pre  = input residual
//   head_z[h]  = softmax(q_h k_h^T / sqrt(d_head), causal) v_h     (per head)
//   attn_out   = concat_h(head_z) * W_O + b_O
//   mlp_out    = W_out * gelu(W_in * LN2(resid_pre + attn_out) + b_in) + b_out
//   resid_post = resid_pre + attn_out + mlp_out
// followed by a final LayerNorm (the `ln_final` stream) and the unembedding.
//
// All compute is double precision. The three lowest token ids are reserved:
// end-of-sequence and the two planted class markers, whose embeddings are tied
// so that nothing but an explicit plant can tell them apart.

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vlab/numkit.hpp"

namespace vlab {

using TokenId = std::int32_t;

inline constexpr TokenId kEosToken = 0;
inline constexpr TokenId kPlantPositiveToken = 1;
inline constexpr TokenId kPlantNegativeToken = 2;
inline constexpr int kReservedTokens = 3;

struct ModelConfig {
  int n_layers = 6;
  int n_heads = 4;
  int d_model = 64;
  int d_head = 16;
  int d_mlp = 256;
  int vocab_size = 512;
  int max_seq = 256;
  std::uint64_t rng_seed = 0;

  // Throws ConfigError on inconsistent dimensions.
  void validate() const;
  std::string canonical() const;
};

enum class Stream { resid_pre, attn_out, mlp_out, resid_post, head_z, ln_final };

std::string_view to_string(Stream s);
Stream parse_stream(std::string_view name);

// Address of a measurement/intervention point. pos is pos-k, counted from the
// end of the prompt (pos = 1 is the final token). head is set iff stream is
// head_z. The ln_final stream only exists after the last layer.
struct HookSite {
  int layer = 0;
  Stream stream = Stream::resid_post;
  int pos = 1;
  std::optional<int> head;

  // "resid_post@L3:pos-1", "head_z@L4.h2:pos-1"
  std::string label() const;
  static HookSite parse(std::string_view text);

  auto operator<=>(const HookSite&) const = default;
};

std::size_t site_width(const ModelConfig& config, const HookSite& site);
// Throws DomainError if the site does not exist for this model and prompt length.
void validate_site(const ModelConfig& config, const HookSite& site, std::size_t seq_len);

// Every stream at every position for one forward pass.
class ActivationCache {
 public:
  ActivationCache() = default;
  ActivationCache(const ModelConfig& config, std::size_t seq_len);

  std::size_t seq_len() const noexcept { return seq_len_; }
  int n_layers() const noexcept { return static_cast<int>(layers_.size()); }
  bool empty() const noexcept { return layers_.empty(); }

  // Vector stored at the site (width d_model, or d_head for head_z).
  std::span<const double> at(const HookSite& site) const;

  // Full [seq x width] matrix of one stream; head_z holds all heads concatenated.
  const Matrix& stream(int layer, Stream s) const;
  Matrix& stream(int layer, Stream s);

 private:
  struct Layer {
    Matrix resid_pre, attn_out, mlp_out, resid_post, head_z;
  };
  std::size_t seq_len_ = 0;
  int d_head_ = 0;
  std::vector<Layer> layers_;
  Matrix ln_final_;
};

enum class EditKind { add_vector, replace_vector, remove_projection };

// add_vector:        h <- h + scale * payload
// replace_vector:    h <- payload
// remove_projection: h <- h - (h . payload) payload   (payload unit norm)
struct HookEdit {
  HookSite site;
  EditKind kind = EditKind::add_vector;
  Vector payload;
  double scale = 1.0;

  static HookEdit add(HookSite site, Vector direction, double scale);
  static HookEdit replace(HookSite site, Vector donor);
  static HookEdit remove_projection(HookSite site, Vector direction);
};

// Architectural injection of label * gain * direction into the resid_post of
// site.layer at site.pos. The label is +1/-1 from the most recent planted
// class marker at or before that position, 0 when there is none. It enters
// through the layer's MLP write, so residual accounting still holds.
struct Plant {
  Vector direction;
  HookSite site;
  double gain = 0.0;
};

struct ForwardResult {
  Matrix logits;  // [seq x vocab]
  ActivationCache cache;
};

struct HookedResult {
  Vector logits;  // final position only
  std::optional<ActivationCache> cache;
};

class Model {
 public:
  const ModelConfig& config() const noexcept { return config_; }
  const std::optional<Plant>& plant() const noexcept { return plant_; }

  // Logits at every position plus the full activation cache.
  ForwardResult forward_cached(std::span<const TokenId> tokens) const;

  // Forward pass with activation edits, applied in stream order within each
  // layer (resid_pre, head_z, attn_out, mlp_out, resid_post; then ln_final).
  // Edits sharing a stream apply in list order.
  HookedResult forward_hooked(std::span<const TokenId> tokens, std::span<const HookEdit> edits,
                              bool capture = false) const;

  // Final LayerNorm + unembedding applied to resid_post at (layer, pos-k).
  Vector logit_lens_read(const ActivationCache& cache, int layer, int pos) const;

  // LN_f followed by the unembedding, for one residual vector.
  Vector unembed(std::span<const double> resid) const;
  // Unembedding only, for an already-normalised vector.
  Vector unembed_normed(std::span<const double> normed) const;

  // Column W_U[:, token].
  Vector unembedding_column(TokenId token) const;

  // Hash over config and plant; identifies which model produced a dump.
  std::string config_hash() const;
  // Hash over every weight value.
  std::uint64_t weights_checksum() const;

  // KV-cached incremental decoding for sampling; numerically identical to
  // forward_cached row by row. Not available on planted models.
  class Decoder {
   public:
    explicit Decoder(const Model& model);
    // Feeds one token and returns the next-token logits (empty when
    // want_logits is false).
    Vector step(TokenId token, bool want_logits = true);
    std::size_t length() const noexcept { return length_; }

   private:
    const Model* model_;
    std::size_t length_ = 0;
    std::vector<Matrix> keys_, values_;  // per layer, [max_seq x d_model]
  };

 private:
  friend Model build_model(const ModelConfig& config);
  friend Model build_planted_model(const ModelConfig& config, const Vector& plant,
                                   const HookSite& site, double gain);

  struct LayerWeights {
    Vector ln1_g, ln1_b;
    Matrix w_q, w_k, w_v;  // [d_model x n_heads*d_head]
    Vector b_q, b_k, b_v;
    Matrix w_o;  // [n_heads*d_head x d_model]
    Vector b_o;
    Vector ln2_g, ln2_b;
    Matrix w_in;  // [d_model x d_mlp]
    Vector b_in;
    Matrix w_out;  // [d_mlp x d_model]
    Vector b_out;
  };

  HookedResult run(std::span<const TokenId> tokens, std::span<const HookEdit> edits, bool capture,
                   bool all_logits, Matrix* logits_out) const;
  void check_tokens(std::span<const TokenId> tokens) const;
  int plant_label(std::span<const TokenId> tokens, std::size_t upto) const;

  ModelConfig config_;
  std::optional<Plant> plant_;
  Matrix tok_emb_, pos_emb_;
  std::vector<LayerWeights> layers_;
  Vector lnf_g_, lnf_b_;
  Matrix w_u_;  // [d_model x vocab]
  Vector b_u_;
};

// Deterministic weights from config.rng_seed; immutable afterwards.
Model build_model(const ModelConfig& config);

// build_model plus a planted direction (unit norm, site.stream == resid_post).
// gain == 0 yields a model identical to build_model(config).
Model build_planted_model(const ModelConfig& config, const Vector& plant, const HookSite& site,
                          double gain);

}  // namespace vlab
