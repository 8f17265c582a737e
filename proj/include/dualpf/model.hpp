#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "dualpf/capsule.hpp"
#include "dualpf/head.hpp"
#include "dualpf/param_store.hpp"
#include "dualpf/transformer.hpp"

namespace dualpf {

// One translation direction: transformer, step-level guided capsules, the
// separate extraction capsules used when this model acts as a teacher, and
// the output head. Owns its parameters.
class TranslationModel {
 public:
  TranslationModel(const ModelConfig& model, const CapsuleConfig& capsules, bool use_capsules, std::uint64_t seed);

  TranslationModel(const TranslationModel&) = delete;
  TranslationModel& operator=(const TranslationModel&) = delete;
  TranslationModel(TranslationModel&&) = default;

  ParamStore& params() { return *store_; }
  const ParamStore& params() const { return *store_; }
  const ModelConfig& config() const { return transformer_->config(); }
  const CapsuleConfig& capsule_config() const { return capsule_cfg_; }
  bool has_capsules() const { return use_capsules_; }
  const Transformer& transformer() const { return *transformer_; }
  const PastFutureHead& head() const { return *head_; }

  struct Forward {
    EncoderOutput enc;
    Tensor z;      // [T, d]
    Tensor omega;  // [T, J, Dc]; invalid without capsules
    Tensor logits; // [T, V]
  };

  // Teacher-forced pass: src ids (EOS-terminated), decoder input starting with SOS.
  Forward forward(Tape& tape, std::span<const int> src, std::span<const int> tgt_in,
                  DropoutContext* dropout = nullptr) const;

  // Step-level Past/Future/Redundant capsules for each row of z.
  Tensor student_capsules(Tape& tape, const EncoderOutput& enc, const Tensor& z) const;
  Tensor output_logits(Tape& tape, const Tensor& z, const Tensor& omega) const;

  // One encoder pass with the past- or future-triangular bias; row t encodes
  // the prefix ending (suffix starting) at t.
  Tensor teacher_encode_all(Tape& tape, std::span<const int> seq, BiasKind kind,
                            DropoutContext* dropout = nullptr) const;

  // Masked extraction over the prefix rows [0, t] (Past) or suffix rows
  // [t, L) (Future) for each selected 0-based step t. Returns only the
  // matching group: [steps, n_group, Dc].
  Tensor extract_teacher_capsules(Tape& tape, const Tensor& h_tilde, BiasKind kind,
                                  std::span<const std::size_t> steps) const;

 private:
  std::unique_ptr<ParamStore> store_;
  CapsuleConfig capsule_cfg_;
  bool use_capsules_;
  std::unique_ptr<Transformer> transformer_;
  std::unique_ptr<CapsuleLayer> step_caps_;
  std::unique_ptr<CapsuleLayer> extract_caps_;
  std::unique_ptr<PastFutureHead> head_;
};

}  // namespace dualpf
