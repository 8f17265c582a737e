#include "dualpf/dual.hpp"

#include <omp.h>

#include <cmath>
#include <exception>
#include <string>

#include "dualpf/errors.hpp"

namespace dualpf {

void DualLossConfig::validate() const {
  if (!(lambda_past >= 0.0) || !(lambda_future >= 0.0))
    throw ConfigError("dual loss weights must be non-negative");
  if (!(subsample > 0.0 && subsample <= 1.0))
    throw ConfigError("subsample rate must lie in (0, 1], got " + std::to_string(subsample));
}

std::vector<StepPairing> step_pairings(Direction direction, std::span<const int> teacher_seq, BiasKind kind,
                                       std::span<const std::size_t> steps) {
  std::vector<StepPairing> out;
  for (auto t : steps) {
    if (t >= teacher_seq.size())
      throw IndexError("step_pairings: step " + std::to_string(t) + " for a sequence of " +
                       std::to_string(teacher_seq.size()));
    StepPairing p{direction, t, {}, kind};
    if (kind == BiasKind::Past)
      p.tokens.assign(teacher_seq.begin(), teacher_seq.begin() + static_cast<std::ptrdiff_t>(t) + 1);
    else
      p.tokens.assign(teacher_seq.begin() + static_cast<std::ptrdiff_t>(t), teacher_seq.end());
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<std::size_t> subsample_steps(std::size_t steps, double rate, std::uint64_t seed, std::size_t sentence,
                                         Direction direction) {
  std::vector<std::size_t> out;
  if (steps == 0) return out;
  const std::uint64_t stream = sentence * 2 + (direction == Direction::Backward ? 1 : 0);
  if (rate >= 1.0) {
    for (std::size_t t = 0; t < steps; ++t) out.push_back(t);
    return out;
  }
  for (std::size_t t = 0; t < steps; ++t) {
    const double u = static_cast<double>(hash_combine(seed, stream, t, 0x5ab) >> 11) * 0x1.0p-53;
    if (u < rate) out.push_back(t);
  }
  if (out.empty()) out.push_back(hash_combine(seed, stream, steps, 0x5ac) % steps);
  return out;
}

Tensor consistency_loss(const Tensor& student, const Tensor& teacher, bool stop_gradient_teacher) {
  if (student.shape() != teacher.shape() || student.shape().rank() != 3)
    throw DimensionError("consistency_loss: student " + student.shape().str() + " vs teacher " +
                         teacher.shape().str());
  const Tensor target = stop_gradient_teacher ? detach(teacher) : teacher;
  const double steps = static_cast<double>(student.shape()[0]);
  return scale(sum(l2_norm_last(sub(student, target))), 1.0 / steps);
}

namespace {

// Student capsules of group `kind` at `steps`: [S, n_group, Dc].
Tensor student_group(const TranslationModel& m, const Tensor& omega, BiasKind kind,
                     std::span<const std::size_t> steps) {
  auto [b, e] = group_range(m.capsule_config(), kind == BiasKind::Past ? CapsuleGroup::Past : CapsuleGroup::Future);
  return slice(gather_rows(omega, steps), 1, b, e);
}

Tensor directional_term(Tape& tape, const TranslationModel& student, const Tensor& omega,
                        const TranslationModel& teacher, std::span<const int> teacher_seq, BiasKind kind,
                        std::span<const std::size_t> steps, bool stop_gradient) {
  Tensor h = teacher.teacher_encode_all(tape, teacher_seq, kind);
  Tensor t = teacher.extract_teacher_capsules(tape, h, kind, steps);
  return consistency_loss(student_group(student, omega, kind, steps), t, stop_gradient);
}

void require_capsules(const TranslationModel& fwd, const TranslationModel& bwd) {
  if (!fwd.has_capsules() || !bwd.has_capsules())
    throw ContractError("dual loss with non-zero weights needs capsule models in both directions");
  const auto& a = fwd.capsule_config();
  const auto& b = bwd.capsule_config();
  if (a.n_past != b.n_past || a.n_future != b.n_future || a.dim != b.dim)
    throw DimensionError("dual loss: capsule groups of the two directions differ");
}

void check_finite(double v, const char* component) {
  if (!std::isfinite(v)) throw NumericalError(std::string("non-finite ") + component + " loss");
}

}  // namespace

SentenceLoss sentence_loss(Tape& tape, const DualBatch& batch, std::size_t b, const TranslationModel& fwd,
                           const TranslationModel& bwd, const DualLossConfig& cfg, std::uint64_t seed,
                           DropoutContext* dropout_f, DropoutContext* dropout_b) {
  const DirectionView& vf = batch.fwd;
  const DirectionView& vb = batch.bwd;
  SentenceLoss out;
  auto f = fwd.forward(tape, vf.src_row(b), vf.tgt_in_row(b), dropout_f);
  out.ce_fwd = cross_entropy(f.logits, vf.tgt_out_row(b), kPad);
  auto r = bwd.forward(tape, vb.src_row(b), vb.tgt_in_row(b), dropout_b);
  out.ce_bwd = cross_entropy(r.logits, vb.tgt_out_row(b), kPad);
  if (!cfg.active()) return out;
  require_capsules(fwd, bwd);

  // The forward student decodes over Y + EOS, which is exactly the backward
  // model's source row, and vice versa.
  const auto steps_f = subsample_steps(vf.tgt_lengths[b], cfg.subsample, seed, b, Direction::Forward);
  const auto steps_b = subsample_steps(vb.tgt_lengths[b], cfg.subsample, seed, b, Direction::Backward);
  const bool sg = cfg.stop_gradient_teacher;
  if (cfg.lambda_past > 0.0)
    out.past = add(directional_term(tape, fwd, f.omega, bwd, vb.src_row(b), BiasKind::Past, steps_f, sg),
                   directional_term(tape, bwd, r.omega, fwd, vf.src_row(b), BiasKind::Past, steps_b, sg));
  if (cfg.lambda_future > 0.0)
    out.future = add(directional_term(tape, fwd, f.omega, bwd, vb.src_row(b), BiasKind::Future, steps_f, sg),
                     directional_term(tape, bwd, r.omega, fwd, vf.src_row(b), BiasKind::Future, steps_b, sg));
  return out;
}

namespace {

struct Weights {
  double ce_f, ce_b, past, future;
};

Weights sentence_weights(const DualBatch& batch, std::size_t b, const DualLossConfig& cfg) {
  const double n = static_cast<double>(batch.fwd.batch);
  return {static_cast<double>(batch.fwd.tgt_lengths[b]) / static_cast<double>(batch.fwd.target_tokens()),
          static_cast<double>(batch.bwd.tgt_lengths[b]) / static_cast<double>(batch.bwd.target_tokens()),
          cfg.lambda_past / n, cfg.lambda_future / n};
}

Tensor weighted_total(const SentenceLoss& l, const Weights& w, const DualLossConfig& cfg) {
  Tensor total = add(scale(l.ce_fwd, w.ce_f), scale(l.ce_bwd, w.ce_b));
  if (cfg.lambda_past > 0.0) total = add(total, scale(l.past, w.past));
  if (cfg.lambda_future > 0.0) total = add(total, scale(l.future, w.future));
  return total;
}

void add_parts(DualLosses& acc, const SentenceLoss& l, const Weights& w, std::size_t sentences) {
  const double n = static_cast<double>(sentences);
  acc.ce_fwd += w.ce_f * l.ce_fwd.item();
  acc.ce_bwd += w.ce_b * l.ce_bwd.item();
  if (l.past.valid()) acc.past += l.past.item() / n;
  if (l.future.valid()) acc.future += l.future.item() / n;
}

void finish(DualLosses& acc, const DualLossConfig& cfg) {
  check_finite(acc.ce_fwd, "CE_fwd");
  check_finite(acc.ce_bwd, "CE_bwd");
  check_finite(acc.past, "L^P");
  check_finite(acc.future, "L^F");
  acc.total = acc.ce_fwd + acc.ce_bwd + cfg.lambda_past * acc.past + cfg.lambda_future * acc.future;
}

DropoutContext dropout_stream(const StepOptions& o, std::size_t b, Direction d) {
  return {o.dropout, CounterRng(o.seed).split(2 * b + (d == Direction::Backward ? 1 : 0))};
}

}  // namespace

Tensor dual_loss(Tape& tape, const DualBatch& batch, const TranslationModel& fwd, const TranslationModel& bwd,
                 const DualLossConfig& cfg, std::uint64_t seed, DualLosses* parts) {
  cfg.validate();
  DualLosses acc;
  Tensor total;
  for (std::size_t b = 0; b < batch.fwd.batch; ++b) {
    SentenceLoss l = sentence_loss(tape, batch, b, fwd, bwd, cfg, seed);
    const Weights w = sentence_weights(batch, b, cfg);
    Tensor t = weighted_total(l, w, cfg);
    total = total.valid() ? add(total, t) : t;
    add_parts(acc, l, w, batch.fwd.batch);
  }
  finish(acc, cfg);
  if (parts) *parts = acc;
  return total;
}

Tensor baseline_loss(Tape& tape, const DirectionView& view, const TranslationModel& model) {
  Tensor total;
  const double n = static_cast<double>(view.target_tokens());
  for (std::size_t b = 0; b < view.batch; ++b) {
    auto f = model.forward(tape, view.src_row(b), view.tgt_in_row(b));
    Tensor t = scale(cross_entropy(f.logits, view.tgt_out_row(b), kPad), static_cast<double>(view.tgt_lengths[b]) / n);
    total = total.valid() ? add(total, t) : t;
  }
  return total;
}

namespace {

// Runs `work(b, slot)` for every sentence, `threads` sentences at a time,
// then `reduce(b, slot)` serially in sentence order. Reduction order does
// not depend on the thread count.
template <typename Slot, typename Work, typename Reduce>
void sentence_waves(std::size_t sentences, Work work, Reduce reduce) {
  const std::size_t wave = static_cast<std::size_t>(std::max(1, omp_get_max_threads()));
  std::vector<Slot> slots(std::min(wave, sentences));
  std::vector<std::exception_ptr> errors(slots.size());
  for (std::size_t start = 0; start < sentences; start += wave) {
    const std::size_t count = std::min(wave, sentences - start);
    const long n = static_cast<long>(count);
#pragma omp parallel for schedule(static) if (count > 1)
    for (long k = 0; k < n; ++k) {
      try {
        slots[k] = Slot{};
        work(start + static_cast<std::size_t>(k), slots[k]);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
    for (std::size_t k = 0; k < count; ++k)
      if (errors[k]) std::rethrow_exception(errors[k]);
    for (std::size_t k = 0; k < count; ++k) reduce(start + k, slots[k]);
  }
}

}  // namespace

DualLosses dual_step(const DualBatch& batch, TranslationModel& fwd, TranslationModel& bwd, const DualLossConfig& cfg,
                     const StepOptions& options) {
  cfg.validate();
  struct Slot {
    DualLosses parts;
    GradBuffer gf, gb;
  };
  DualLosses acc;
  const TranslationModel& cf = fwd;
  const TranslationModel& cb = bwd;
  sentence_waves<Slot>(
      batch.fwd.batch,
      [&](std::size_t b, Slot& s) {
        Tape tape;
        DropoutContext df = dropout_stream(options, b, Direction::Forward);
        DropoutContext db = dropout_stream(options, b, Direction::Backward);
        const bool drop = options.dropout > 0.0;
        SentenceLoss l = sentence_loss(tape, batch, b, cf, cb, cfg, options.seed, drop ? &df : nullptr,
                                       drop ? &db : nullptr);
        const Weights w = sentence_weights(batch, b, cfg);
        tape.backward(weighted_total(l, w, cfg));
        add_parts(s.parts, l, w, batch.fwd.batch);
        s.gf = tape.param_grads(cf.params());
        s.gb = tape.param_grads(cb.params());
      },
      [&](std::size_t, Slot& s) {
        acc.ce_fwd += s.parts.ce_fwd;
        acc.ce_bwd += s.parts.ce_bwd;
        acc.past += s.parts.past;
        acc.future += s.parts.future;
        check_finite(acc.ce_fwd, "CE_fwd");
        check_finite(acc.ce_bwd, "CE_bwd");
        check_finite(acc.past, "L^P");
        check_finite(acc.future, "L^F");
        fwd.params().accumulate(s.gf);
        bwd.params().accumulate(s.gb);
      });
  finish(acc, cfg);
  return acc;
}

double baseline_step(const DirectionView& view, TranslationModel& model, const StepOptions& options,
                     Direction direction) {
  struct Slot {
    double ce = 0;
    GradBuffer g;
  };
  double total = 0.0;
  const TranslationModel& cm = model;
  const double n = static_cast<double>(view.target_tokens());
  sentence_waves<Slot>(
      view.batch,
      [&](std::size_t b, Slot& s) {
        Tape tape;
        DropoutContext d = dropout_stream(options, b, direction);
        auto f = cm.forward(tape, view.src_row(b), view.tgt_in_row(b), options.dropout > 0.0 ? &d : nullptr);
        const double w = static_cast<double>(view.tgt_lengths[b]) / n;
        Tensor ce = cross_entropy(f.logits, view.tgt_out_row(b), kPad);
        tape.backward(scale(ce, w));
        s.ce = w * ce.item();
        s.g = tape.param_grads(cm.params());
      },
      [&](std::size_t, Slot& s) {
        total += s.ce;
        check_finite(total, "CE");
        model.params().accumulate(s.g);
      });
  return total;
}

}  // namespace dualpf
