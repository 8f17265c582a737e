#include "dualpf/capsule.hpp"

#include "dualpf/errors.hpp"
#include "dualpf/transformer.hpp"

namespace dualpf {

void CapsuleConfig::validate() const {
  if (n_past == 0 || n_future == 0) throw ConfigError("capsules: past and future groups need at least one capsule");
  if (dim == 0) throw ConfigError("capsules: dimension must be positive");
  if (iterations == 0) throw ConfigError("capsules: at least one routing iteration is required");
  if (agreement_dim == 0) throw ConfigError("capsules: agreement dimension must be positive");
}

GroupMask GroupMask::all(const CapsuleConfig& cfg) { return {std::vector<std::uint8_t>(cfg.total(), 1)}; }

GroupMask GroupMask::only(const CapsuleConfig& cfg, CapsuleGroup group) {
  GroupMask m{std::vector<std::uint8_t>(cfg.total(), 0)};
  auto [b, e] = group_range(cfg, group);
  for (std::size_t j = b; j < e; ++j) m.allowed[j] = 1;
  return m;
}

std::size_t GroupMask::count() const {
  std::size_t n = 0;
  for (auto a : allowed) n += a ? 1 : 0;
  return n;
}

void GroupMask::validate(std::size_t highs) const {
  if (allowed.size() != highs)
    throw DimensionError("group mask has " + std::to_string(allowed.size()) + " entries for " + std::to_string(highs) +
                         " capsules");
  if (count() == 0) throw ContractError("group mask allows no capsule: every routing row would be fully masked");
}

std::vector<double> GroupMask::logit_bias() const {
  std::vector<double> bias(allowed.size());
  for (std::size_t j = 0; j < allowed.size(); ++j) bias[j] = allowed[j] ? 0.0 : AttentionBias::kMasked;
  return bias;
}

std::pair<std::size_t, std::size_t> group_range(const CapsuleConfig& cfg, CapsuleGroup group) {
  switch (group) {
    case CapsuleGroup::Past: return {0, cfg.n_past};
    case CapsuleGroup::Future: return {cfg.n_past, cfg.n_past + cfg.n_future};
    case CapsuleGroup::Redundant: return {cfg.n_past + cfg.n_future, cfg.total()};
  }
  return {0, 0};
}

Tensor project_low_capsules(const Tensor& h, const Tensor& w, std::size_t highs, std::size_t dim) {
  if (h.shape().rank() != 2 || w.shape().rank() != 2 || w.shape()[1] != highs * dim || w.shape()[0] != h.shape()[1])
    throw DimensionError("project_low_capsules: h " + h.shape().str() + " with W " + w.shape().str() + " for " +
                         std::to_string(highs) + " capsules of dimension " + std::to_string(dim));
  return reshape(matmul(h, w), Shape{h.shape()[0], highs, dim});
}

namespace {

Tensor column_constant(Tape& tape, const GroupMask& mask) {
  std::vector<double> keep(mask.allowed.size());
  for (std::size_t j = 0; j < keep.size(); ++j) keep[j] = mask.allowed[j] ? 1.0 : 0.0;
  const Shape shape{keep.size()};
  return tape.constant(shape, std::move(keep));
}

}  // namespace

RoutingState routing_round(const Tensor& u, const Tensor& b, const GroupMask* mask,
                           std::span<const std::uint8_t> row_mask) {
  if (u.shape().rank() != 3 || b.shape().rank() != 3 || b.shape()[1] != u.shape()[0] || b.shape()[2] != u.shape()[1])
    throw DimensionError("routing_round: logits " + b.shape().str() + " do not match votes " + u.shape().str());
  Tape& tape = b.tape();
  const std::size_t steps = b.shape()[0], lows = b.shape()[1], highs = b.shape()[2];
  Tensor logits = b;
  if (mask) {
    mask->validate(highs);
    logits = add(b, tape.constant(Shape{highs}, mask->logit_bias()));
  }
  Tensor c = softmax(logits, 2);
  if (!row_mask.empty()) {
    if (row_mask.size() != steps * lows)
      throw DimensionError("routing_round: row mask has " + std::to_string(row_mask.size()) + " entries, expected " +
                           std::to_string(steps * lows));
    std::vector<double> keep(steps * lows * highs);
    for (std::size_t r = 0; r < steps * lows; ++r)
      for (std::size_t j = 0; j < highs; ++j) keep[r * highs + j] = row_mask[r] ? 1.0 : 0.0;
    c = mul(c, tape.constant(Shape{steps, lows, highs}, std::move(keep)));
  }
  Tensor s = routing_pool(c, u);
  return {b, c, s, squash(s)};
}

Tensor guided_update(const Tensor& b, const Tensor& u, const Tensor& omega, const Tensor& z,
                     const GuidedAgreement& params, const GroupMask* mask) {
  const std::size_t lows = u.shape()[0], highs = u.shape()[1], dim = u.shape()[2];
  const std::size_t steps = z.shape()[0], d_model = z.shape()[1];
  const Shape& wb = params.w_b.shape();
  if (wb.rank() != 2 || wb[0] != d_model + 2 * dim)
    throw DimensionError("guided_update: W_b " + wb.str() + " does not accept [z; u; omega] of width " +
                         std::to_string(d_model + 2 * dim));
  if (params.w.shape() != Shape{wb[1]})
    throw DimensionError("guided_update: w " + params.w.shape().str() + " vs W_b " + wb.str());
  if (omega.shape() != Shape{steps, highs, dim})
    throw DimensionError("guided_update: omega " + omega.shape().str() + " for " + std::to_string(steps) + " steps");
  const std::size_t hidden = wb[1];
  Tensor wz = slice(params.w_b, 0, 0, d_model);
  Tensor wu = slice(params.w_b, 0, d_model, d_model + dim);
  Tensor wo = slice(params.w_b, 0, d_model + dim, d_model + 2 * dim);
  Tensor zp = matmul(z, wz);
  Tensor up = reshape(matmul(reshape(u, Shape{lows * highs, dim}), wu), Shape{lows, highs, hidden});
  Tensor op = reshape(matmul(reshape(omega, Shape{steps * highs, dim}), wo), Shape{steps, highs, hidden});
  Tensor delta = guided_agreement(zp, up, op, params.w);
  if (mask) delta = mul(delta, column_constant(b.tape(), *mask));
  return add(b, delta);
}

Tensor dot_update(const Tensor& b, const Tensor& u, const Tensor& omega, const GroupMask* mask) {
  Tensor delta = dot_agreement(u, omega);
  if (mask) delta = mul(delta, column_constant(b.tape(), *mask));
  return add(b, delta);
}

RoutingResult run_guided_routing(const Tensor& u, const Tensor& z, const GuidedAgreement& params,
                                 const CapsuleConfig& cfg, const GroupMask* mask) {
  Tape& tape = u.tape();
  const std::size_t steps = z.shape()[0], lows = u.shape()[0], highs = u.shape()[1];
  Tensor b = tape.constant(Shape{steps, lows, highs}, std::vector<double>(steps * lows * highs, 0.0));
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    RoutingState st = routing_round(u, b, mask);
    b = guided_update(b, u, st.omega, z, params, mask);
  }
  RoutingState last = routing_round(u, b, mask);
  return {last.omega, last.c};
}

RoutingResult run_masked_routing(const Tensor& u, std::size_t steps, std::span<const std::uint8_t> row_mask,
                                 const GroupMask& mask, const CapsuleConfig& cfg, bool agreement) {
  Tape& tape = u.tape();
  const std::size_t lows = u.shape()[0], highs = u.shape()[1];
  mask.validate(highs);
  Tensor b = tape.constant(Shape{steps, lows, highs}, std::vector<double>(steps * lows * highs, 0.0));
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    RoutingState st = routing_round(u, b, &mask, row_mask);
    if (agreement) b = dot_update(b, u, st.omega, &mask);
  }
  RoutingState last = routing_round(u, b, &mask, row_mask);
  return {last.omega, last.c};
}

CapsuleLayer::CapsuleLayer(const CapsuleConfig& cfg, std::size_t d_model, ParamStore& store, CounterRng& init,
                           const std::string& prefix, bool guided)
    : cfg_(cfg), store_(&store) {
  cfg_.validate();
  proj_ = store.add_xavier(prefix + ".W", Shape{d_model, cfg_.total() * cfg_.dim}, init);
  if (guided) {
    w_b_ = store.add_xavier(prefix + ".W_b", Shape{d_model + 2 * cfg_.dim, cfg_.agreement_dim}, init);
    w_ = store.add_xavier(prefix + ".w", Shape{cfg_.agreement_dim}, init);
  }
}

Tensor CapsuleLayer::project(Tape& tape, const Tensor& h) const {
  return project_low_capsules(h, tape.param(*store_, proj_), cfg_.total(), cfg_.dim);
}

GuidedAgreement CapsuleLayer::agreement(Tape& tape) const {
  if (!w_b_ || !w_) throw ContractError("capsule layer was built without guided agreement parameters");
  return {tape.param(*store_, *w_b_), tape.param(*store_, *w_)};
}

}  // namespace dualpf
