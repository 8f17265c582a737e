#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dualpf/data.hpp"
#include "dualpf/model.hpp"

namespace dualpf {

struct DualLossConfig {
  double lambda_past = 0.5;
  double lambda_future = 0.5;
  bool stop_gradient_teacher = false;
  double subsample = 0.5;  // fraction of decoding steps paired per sentence

  // Both weights zero: the teacher passes are skipped entirely.
  bool active() const { return lambda_past > 0.0 || lambda_future > 0.0; }
  void validate() const;
};

enum class Direction { Forward, Backward };

// One student step paired with the teacher sequence it is compared against.
struct StepPairing {
  Direction direction;
  std::size_t step;          // 0-based decoding step of the student
  std::vector<int> tokens;   // teacher-side prefix (Past) or suffix (Future), inclusive of `step`
  BiasKind kind;
};

// Pairings of one sentence for a student decoding over `teacher_seq`
// (the student's target + EOS, which is the reverse model's source).
std::vector<StepPairing> step_pairings(Direction direction, std::span<const int> teacher_seq, BiasKind kind,
                                       std::span<const std::size_t> steps);

// Steps kept by the per-step subsampling; always at least one, all of them
// when rate is 1.
std::vector<std::size_t> subsample_steps(std::size_t steps, double rate, std::uint64_t seed, std::size_t sentence,
                                         Direction direction);

// Mean over paired steps of sum_j ||student_j - teacher_j||; both [S, n, Dc].
Tensor consistency_loss(const Tensor& student, const Tensor& teacher, bool stop_gradient_teacher = false);

struct DualLosses {
  double ce_fwd = 0.0;
  double ce_bwd = 0.0;
  double past = 0.0;
  double future = 0.0;
  double total = 0.0;
};

struct SentenceLoss {
  Tensor ce_fwd, ce_bwd;  // per-sentence token means
  Tensor past, future;    // per-sentence consistency terms (invalid when inactive)
};

// All loss terms of sentence b of the batch on `tape`. `dropout_f` and
// `dropout_b` may be null (no dropout).
SentenceLoss sentence_loss(Tape& tape, const DualBatch& batch, std::size_t b, const TranslationModel& fwd,
                           const TranslationModel& bwd, const DualLossConfig& cfg, std::uint64_t seed,
                           DropoutContext* dropout_f = nullptr, DropoutContext* dropout_b = nullptr);

// The batch objective on a single tape:
// CE_fwd + CE_bwd + lambda_past * L^P + lambda_future * L^F, with CE averaged
// over target tokens and L^P, L^F averaged over sentences.
Tensor dual_loss(Tape& tape, const DualBatch& batch, const TranslationModel& fwd, const TranslationModel& bwd,
                 const DualLossConfig& cfg, std::uint64_t seed, DualLosses* parts = nullptr);

// Token-mean CE of one direction's view on a single tape.
Tensor baseline_loss(Tape& tape, const DirectionView& view, const TranslationModel& model);

struct StepOptions {
  double dropout = 0.0;
  std::uint64_t seed = 0;  // drives dropout masks and step subsampling
};

// Computes the dual objective sentence by sentence (in parallel), and adds
// the gradient of the batch total into both models' parameter stores in a
// fixed order. Throws NumericalError naming the first non-finite component.
DualLosses dual_step(const DualBatch& batch, TranslationModel& fwd, TranslationModel& bwd, const DualLossConfig& cfg,
                     const StepOptions& options);

// CE-only step for one model on one direction's view; returns the loss.
double baseline_step(const DirectionView& view, TranslationModel& model, const StepOptions& options,
                     Direction direction = Direction::Forward);

}  // namespace dualpf
