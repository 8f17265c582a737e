#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dualpf/ops.hpp"
#include "dualpf/param_store.hpp"
#include "dualpf/rng.hpp"

namespace dualpf {

// Reserved token ids shared by every vocabulary.
inline constexpr int kPad = 0;
inline constexpr int kSos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kReservedTokens = 4;

struct ModelConfig {
  std::size_t src_vocab = 36;
  std::size_t tgt_vocab = 36;
  std::size_t d_model = 64;
  std::size_t n_heads = 2;
  std::size_t n_layers = 2;
  std::size_t d_ff = 128;
  double dropout = 0.1;
  std::size_t max_len = 64;

  // Throws ConfigError when an extent is zero or d_model % n_heads != 0.
  void validate() const;
};

enum class BiasKind { Past, Future };

// Additive attention logits, [queries x keys]; every entry is 0 or kMasked.
class AttentionBias {
 public:
  static constexpr double kMasked = -1e9;

  AttentionBias() = default;
  AttentionBias(std::size_t queries, std::size_t keys) : queries_(queries), keys_(keys), values_(queries * keys, 0.0) {}

  std::size_t queries() const { return queries_; }
  std::size_t keys() const { return keys_; }
  double at(std::size_t q, std::size_t k) const { return values_[q * keys_ + k]; }
  bool masked(std::size_t q, std::size_t k) const { return values_[q * keys_ + k] != 0.0; }
  void mask(std::size_t q, std::size_t k) { values_[q * keys_ + k] = kMasked; }
  // Masks every key column holding the pad id.
  void mask_pad_keys(std::span<const int> key_ids);
  std::span<const double> values() const { return values_; }

 private:
  std::size_t queries_ = 0;
  std::size_t keys_ = 0;
  std::vector<double> values_;
};

// past: (i,j) open iff j <= i; future: open iff j >= i.
AttentionBias make_triangular_bias(std::size_t length, BiasKind kind);

// Dropout switch threaded through forward passes; a null pointer means eval.
struct DropoutContext {
  double rate = 0.0;
  CounterRng rng;
};

// Parameter ids of one attention sublayer. The key projection has no bias:
// a bias there shifts every logit of a query equally and cancels in softmax.
struct AttentionParams {
  std::size_t wq, bq, wk, wv, bv, wo, bo;
};

// Projects query/key/value inputs, applies biased scaled dot-product
// attention per head, concatenates heads and projects the result.
Tensor multi_head_attention(Tape& tape, const ParamStore& store, const AttentionParams& p, const Tensor& query_in,
                            const Tensor& key_in, const Tensor& value_in, const AttentionBias* bias,
                            std::size_t heads);

struct EncoderOutput {
  Tensor h;               // [I, d_model]
  std::vector<int> ids;   // source ids, for pad masking in cross-attention
};

// Pre-layer-norm encoder/decoder stack. Parameters live in a ParamStore owned
// by the caller; this object only records their ids under `prefix`.
class Transformer {
 public:
  Transformer(const ModelConfig& config, ParamStore& store, CounterRng& init, const std::string& prefix = "");

  const ModelConfig& config() const { return config_; }

  // Token lookup scaled by sqrt(d_model) plus sinusoidal positions starting
  // at `position_offset`.
  Tensor embed(Tape& tape, std::span<const int> ids, bool target_side, std::size_t position_offset = 0) const;

  // Pad keys are always masked on top of `bias`.
  EncoderOutput encode(Tape& tape, std::span<const int> ids, const AttentionBias* bias = nullptr,
                       std::size_t position_offset = 0, DropoutContext* dropout = nullptr) const;

  // Teacher-forced decoder states z for a prefix starting with SOS.
  Tensor decode_all(Tape& tape, std::span<const int> prefix, const EncoderOutput& enc,
                    DropoutContext* dropout = nullptr) const;
  // State of the last prefix position only.
  Tensor decode_step(Tape& tape, std::span<const int> prefix, const EncoderOutput& enc) const;

  static double positional_encoding(std::size_t position, std::size_t channel, std::size_t d_model);

 private:
  struct FeedForward {
    std::size_t w1, b1, w2, b2;
  };
  struct Norm {
    std::size_t gain, bias;
  };
  struct EncoderLayer {
    Norm ln_attn, ln_ff;
    AttentionParams attn;
    FeedForward ff;
  };
  struct DecoderLayer {
    Norm ln_self, ln_cross, ln_ff;
    AttentionParams self_attn, cross_attn;
    FeedForward ff;
  };

  Tensor norm(Tape& tape, const Norm& n, const Tensor& x) const;
  Tensor feed_forward(Tape& tape, const FeedForward& f, const Tensor& x) const;

  ModelConfig config_;
  const ParamStore* store_;
  std::size_t src_embed_, tgt_embed_;
  std::vector<EncoderLayer> enc_layers_;
  std::vector<DecoderLayer> dec_layers_;
  Norm enc_final_, dec_final_;
};

}  // namespace dualpf
