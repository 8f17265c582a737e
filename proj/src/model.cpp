#include "dualpf/model.hpp"

#include "dualpf/errors.hpp"

namespace dualpf {

TranslationModel::TranslationModel(const ModelConfig& model, const CapsuleConfig& capsules, bool use_capsules,
                                   std::uint64_t seed)
    : store_(std::make_unique<ParamStore>()), capsule_cfg_(capsules), use_capsules_(use_capsules) {
  CounterRng init(seed);
  transformer_ = std::make_unique<Transformer>(model, *store_, init);
  std::size_t width = 0;
  if (use_capsules_) {
    step_caps_ = std::make_unique<CapsuleLayer>(capsule_cfg_, model.d_model, *store_, init, "caps", true);
    extract_caps_ = std::make_unique<CapsuleLayer>(capsule_cfg_, model.d_model, *store_, init, "ext", false);
    width = capsule_cfg_.total() * capsule_cfg_.dim;
  }
  head_ = std::make_unique<PastFutureHead>(model.d_model, width, model.tgt_vocab, *store_, init);
  // Start from binary32-representable values so checkpoints are exact from step 0.
  store_->round_to_f32();
}

Tensor TranslationModel::student_capsules(Tape& tape, const EncoderOutput& enc, const Tensor& z) const {
  if (!use_capsules_) throw ContractError("student_capsules: model was built without capsules");
  Tensor u = step_caps_->project(tape, enc.h);
  const GuidedAgreement params = step_caps_->agreement(tape);
  bool any_pad = false;
  for (int id : enc.ids) any_pad = any_pad || id == kPad;
  if (!any_pad) return run_guided_routing(u, z, params, capsule_cfg_).omega;
  // Pad source rows do not vote.
  const std::size_t steps = z.shape()[0], lows = enc.ids.size(), highs = capsule_cfg_.total();
  std::vector<std::uint8_t> pad_rows(steps * lows);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < lows; ++i) pad_rows[t * lows + i] = enc.ids[i] != kPad;
  Tensor b = tape.constant(Shape{steps, lows, highs}, std::vector<double>(steps * lows * highs, 0.0));
  for (std::size_t it = 0; it < capsule_cfg_.iterations; ++it) {
    RoutingState st = routing_round(u, b, nullptr, pad_rows);
    b = guided_update(b, u, st.omega, z, params);
  }
  return routing_round(u, b, nullptr, pad_rows).omega;
}

Tensor TranslationModel::output_logits(Tape& tape, const Tensor& z, const Tensor& omega) const {
  if (!use_capsules_) return head_->logits(tape, z);
  const std::size_t steps = z.shape()[0];
  Tensor flat = reshape(omega, Shape{steps, capsule_cfg_.total() * capsule_cfg_.dim});
  return head_->logits(tape, head_->holistic_context(tape, z, flat));
}

TranslationModel::Forward TranslationModel::forward(Tape& tape, std::span<const int> src, std::span<const int> tgt_in,
                                                    DropoutContext* dropout) const {
  Forward out;
  out.enc = transformer_->encode(tape, src, nullptr, 0, dropout);
  out.z = transformer_->decode_all(tape, tgt_in, out.enc, dropout);
  if (use_capsules_) out.omega = student_capsules(tape, out.enc, out.z);
  out.logits = output_logits(tape, out.z, out.omega);
  return out;
}

Tensor TranslationModel::teacher_encode_all(Tape& tape, std::span<const int> seq, BiasKind kind,
                                            DropoutContext* dropout) const {
  if (seq.empty()) throw ContractError("teacher_encode_all: empty sequence");
  AttentionBias bias = make_triangular_bias(seq.size(), kind);
  return transformer_->encode(tape, seq, &bias, 0, dropout).h;
}

Tensor TranslationModel::extract_teacher_capsules(Tape& tape, const Tensor& h_tilde, BiasKind kind,
                                                  std::span<const std::size_t> steps) const {
  if (!use_capsules_) throw ContractError("extract_teacher_capsules: model was built without capsules");
  const std::size_t rows = h_tilde.shape()[0];
  std::vector<std::uint8_t> row_mask(steps.size() * rows, 0);
  for (std::size_t s = 0; s < steps.size(); ++s) {
    if (steps[s] >= rows) throw IndexError("extract_teacher_capsules: step " + std::to_string(steps[s]) + " of " +
                                           std::to_string(rows));
    for (std::size_t i = 0; i < rows; ++i)
      row_mask[s * rows + i] = kind == BiasKind::Past ? i <= steps[s] : i >= steps[s];
  }
  const CapsuleGroup group = kind == BiasKind::Past ? CapsuleGroup::Past : CapsuleGroup::Future;
  const GroupMask mask = GroupMask::only(capsule_cfg_, group);
  Tensor u = extract_caps_->project(tape, h_tilde);
  RoutingResult r = run_masked_routing(u, steps.size(), row_mask, mask, capsule_cfg_);
  auto [b, e] = group_range(capsule_cfg_, group);
  return slice(r.omega, 1, b, e);
}

}  // namespace dualpf
