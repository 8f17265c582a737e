#include "dualpf/transformer.hpp"

#include <cmath>

#include "dualpf/errors.hpp"

namespace dualpf {

void ModelConfig::validate() const {
  if (src_vocab <= static_cast<std::size_t>(kReservedTokens) || tgt_vocab <= static_cast<std::size_t>(kReservedTokens))
    throw ConfigError("vocabulary sizes must exceed the 4 reserved ids");
  if (d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0 || max_len == 0)
    throw ConfigError("model extents must be positive");
  if (d_model % n_heads != 0)
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
}

void AttentionBias::mask_pad_keys(std::span<const int> key_ids) {
  if (key_ids.size() != keys_) throw DimensionError("mask_pad_keys: key count mismatch");
  for (std::size_t k = 0; k < keys_; ++k)
    if (key_ids[k] == kPad)
      for (std::size_t q = 0; q < queries_; ++q) mask(q, k);
}

AttentionBias make_triangular_bias(std::size_t length, BiasKind kind) {
  AttentionBias b(length, length);
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t j = 0; j < length; ++j) {
      const bool open = kind == BiasKind::Past ? j <= i : j >= i;
      if (!open) b.mask(i, j);
    }
  return b;
}

Tensor multi_head_attention(Tape& tape, const ParamStore& store, const AttentionParams& p, const Tensor& query_in,
                            const Tensor& key_in, const Tensor& value_in, const AttentionBias* bias,
                            std::size_t heads) {
  if (bias && (bias->queries() != query_in.shape()[0] || bias->keys() != key_in.shape()[0]))
    throw DimensionError("attention bias is [" + std::to_string(bias->queries()) + " x " +
                         std::to_string(bias->keys()) + "] but query/key lengths are " +
                         std::to_string(query_in.shape()[0]) + "/" + std::to_string(key_in.shape()[0]));
  Tensor q = linear(query_in, tape.param(store, p.wq), tape.param(store, p.bq));
  Tensor k = linear(key_in, tape.param(store, p.wk));
  Tensor v = linear(value_in, tape.param(store, p.wv), tape.param(store, p.bv));
  Tensor a = attention(q, k, v, bias ? bias->values() : std::span<const double>{}, heads);
  return linear(a, tape.param(store, p.wo), tape.param(store, p.bo));
}

namespace {

AttentionParams add_attention(ParamStore& s, CounterRng& rng, const std::string& pre, std::size_t d) {
  AttentionParams p{};
  p.wq = s.add_xavier(pre + ".wq", Shape{d, d}, rng);
  p.bq = s.add_zeros(pre + ".bq", Shape{d});
  p.wk = s.add_xavier(pre + ".wk", Shape{d, d}, rng);
  p.wv = s.add_xavier(pre + ".wv", Shape{d, d}, rng);
  p.bv = s.add_zeros(pre + ".bv", Shape{d});
  p.wo = s.add_xavier(pre + ".wo", Shape{d, d}, rng);
  p.bo = s.add_zeros(pre + ".bo", Shape{d});
  return p;
}

std::size_t add_embedding(ParamStore& s, CounterRng& rng, const std::string& name, std::size_t vocab, std::size_t d) {
  const double limit = std::sqrt(3.0 / static_cast<double>(d));
  std::vector<double> v(vocab * d);
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return s.add(name, Shape{vocab, d}, std::move(v));
}

}  // namespace

Transformer::Transformer(const ModelConfig& config, ParamStore& store, CounterRng& init, const std::string& prefix)
    : config_(config), store_(&store) {
  config_.validate();
  const std::size_t d = config_.d_model, ff = config_.d_ff;
  auto add_norm = [&](const std::string& name) {
    Norm n{};
    n.gain = store.add(name + ".gain", Shape{d}, std::vector<double>(d, 1.0));
    n.bias = store.add_zeros(name + ".bias", Shape{d});
    return n;
  };
  auto add_ff = [&](const std::string& name) {
    FeedForward f{};
    f.w1 = store.add_xavier(name + ".w1", Shape{d, ff}, init);
    f.b1 = store.add_zeros(name + ".b1", Shape{ff});
    f.w2 = store.add_xavier(name + ".w2", Shape{ff, d}, init);
    f.b2 = store.add_zeros(name + ".b2", Shape{d});
    return f;
  };
  src_embed_ = add_embedding(store, init, prefix + "enc.embed", config_.src_vocab, d);
  tgt_embed_ = add_embedding(store, init, prefix + "dec.embed", config_.tgt_vocab, d);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string pre = prefix + "enc.l" + std::to_string(l);
    EncoderLayer layer{};
    layer.ln_attn = add_norm(pre + ".ln_attn");
    layer.attn = add_attention(store, init, pre + ".attn", d);
    layer.ln_ff = add_norm(pre + ".ln_ff");
    layer.ff = add_ff(pre + ".ff");
    enc_layers_.push_back(layer);
  }
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string pre = prefix + "dec.l" + std::to_string(l);
    DecoderLayer layer{};
    layer.ln_self = add_norm(pre + ".ln_self");
    layer.self_attn = add_attention(store, init, pre + ".self", d);
    layer.ln_cross = add_norm(pre + ".ln_cross");
    layer.cross_attn = add_attention(store, init, pre + ".cross", d);
    layer.ln_ff = add_norm(pre + ".ln_ff");
    layer.ff = add_ff(pre + ".ff");
    dec_layers_.push_back(layer);
  }
  enc_final_ = add_norm(prefix + "enc.ln_final");
  dec_final_ = add_norm(prefix + "dec.ln_final");
}

double Transformer::positional_encoding(std::size_t position, std::size_t channel, std::size_t d_model) {
  const double pair = static_cast<double>(channel / 2 * 2);
  const double angle = static_cast<double>(position) / std::pow(10000.0, pair / static_cast<double>(d_model));
  return channel % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

Tensor Transformer::embed(Tape& tape, std::span<const int> ids, bool target_side, std::size_t position_offset) const {
  const std::size_t d = config_.d_model;
  Tensor table = tape.param(*store_, target_side ? tgt_embed_ : src_embed_);
  Tensor rows = embedding(table, ids);
  std::vector<double> pe(ids.size() * d);
  for (std::size_t p = 0; p < ids.size(); ++p)
    for (std::size_t c = 0; c < d; ++c) pe[p * d + c] = positional_encoding(p + position_offset, c, d);
  Tensor scaled = scale(rows, std::sqrt(static_cast<double>(d)));
  return add(scaled, tape.constant(Shape{ids.size(), d}, std::move(pe)));
}

Tensor Transformer::norm(Tape& tape, const Norm& n, const Tensor& x) const {
  return layer_norm(x, tape.param(*store_, n.gain), tape.param(*store_, n.bias));
}

Tensor Transformer::feed_forward(Tape& tape, const FeedForward& f, const Tensor& x) const {
  Tensor hidden = gelu(linear(x, tape.param(*store_, f.w1), tape.param(*store_, f.b1)));
  return linear(hidden, tape.param(*store_, f.w2), tape.param(*store_, f.b2));
}

namespace {
Tensor maybe_dropout(const Tensor& x, DropoutContext* ctx) { return ctx ? dropout(x, ctx->rate, ctx->rng) : x; }
}  // namespace

EncoderOutput Transformer::encode(Tape& tape, std::span<const int> ids, const AttentionBias* bias,
                                  std::size_t position_offset, DropoutContext* dropout) const {
  if (ids.size() + position_offset > config_.max_len)
    throw ContractError("encode: sequence of length " + std::to_string(ids.size()) + " at offset " +
                        std::to_string(position_offset) + " exceeds max length " + std::to_string(config_.max_len));
  const std::size_t n = ids.size();
  AttentionBias self_bias = bias ? *bias : AttentionBias(n, n);
  if (self_bias.queries() != n || self_bias.keys() != n)
    throw DimensionError("encode: bias shape does not match sequence length " + std::to_string(n));
  self_bias.mask_pad_keys(ids);
  Tensor x = embed(tape, ids, false, position_offset);
  x = maybe_dropout(x, dropout);
  for (const auto& layer : enc_layers_) {
    Tensor y = norm(tape, layer.ln_attn, x);
    x = add(x, maybe_dropout(multi_head_attention(tape, *store_, layer.attn, y, y, y, &self_bias, config_.n_heads),
                             dropout));
    y = norm(tape, layer.ln_ff, x);
    x = add(x, maybe_dropout(feed_forward(tape, layer.ff, y), dropout));
  }
  return {norm(tape, enc_final_, x), std::vector<int>(ids.begin(), ids.end())};
}

Tensor Transformer::decode_all(Tape& tape, std::span<const int> prefix, const EncoderOutput& enc,
                               DropoutContext* dropout) const {
  if (prefix.empty() || prefix[0] != kSos) throw ContractError("decode: target prefix must begin with SOS");
  if (prefix.size() > config_.max_len)
    throw ContractError("decode: prefix length " + std::to_string(prefix.size()) + " exceeds max length " +
                        std::to_string(config_.max_len));
  const std::size_t t = prefix.size();
  AttentionBias self_bias = make_triangular_bias(t, BiasKind::Past);
  self_bias.mask_pad_keys(prefix);
  AttentionBias cross_bias(t, enc.ids.size());
  cross_bias.mask_pad_keys(enc.ids);
  Tensor x = embed(tape, prefix, true);
  x = maybe_dropout(x, dropout);
  for (const auto& layer : dec_layers_) {
    Tensor y = norm(tape, layer.ln_self, x);
    x = add(x, maybe_dropout(
                   multi_head_attention(tape, *store_, layer.self_attn, y, y, y, &self_bias, config_.n_heads),
                   dropout));
    y = norm(tape, layer.ln_cross, x);
    x = add(x, maybe_dropout(multi_head_attention(tape, *store_, layer.cross_attn, y, enc.h, enc.h, &cross_bias,
                                                  config_.n_heads),
                             dropout));
    y = norm(tape, layer.ln_ff, x);
    x = add(x, maybe_dropout(feed_forward(tape, layer.ff, y), dropout));
  }
  return norm(tape, dec_final_, x);
}

Tensor Transformer::decode_step(Tape& tape, std::span<const int> prefix, const EncoderOutput& enc) const {
  Tensor z = decode_all(tape, prefix, enc);
  return slice(z, 0, prefix.size() - 1, prefix.size());
}

}  // namespace dualpf
