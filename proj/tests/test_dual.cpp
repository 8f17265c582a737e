#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "dualpf/dual.hpp"
#include "dualpf/errors.hpp"
#include "dualpf/ops.hpp"
#include "test_util.hpp"

using namespace dualpf;

namespace {

struct Pair {
  ModelConfig mf = testutil::small_model(12, 11);
  TranslationModel fwd{mf, testutil::small_capsules(), true, 101};
  TranslationModel bwd{testutil::reversed(mf), testutil::small_capsules(), true, 202};
  DualBatch batch;

  Pair() {
    const std::pair<std::size_t, std::size_t> lengths[] = {{5, 3}, {2, 6}, {4, 4}};
    const auto pairs = testutil::random_pairs(lengths, mf, 9);
    const std::size_t ids[] = {0, 1, 2};
    batch = make_dual_batch(pairs, ids);
  }
};

std::vector<double> flat_grads(const ParamStore& s) {
  std::vector<double> out;
  for (auto id : s.ordered()) out.insert(out.end(), s.grad(id).begin(), s.grad(id).end());
  return out;
}

}  // namespace

TEST(Consistency, Examples) {
  Tape t(false);
  CounterRng rng(1);
  const auto v = testutil::random_values(2 * 2 * 3, rng);
  Tensor s = t.constant(Shape{2, 2, 3}, v);
  EXPECT_EQ(consistency_loss(s, t.constant(Shape{2, 2, 3}, v)).item(), 0.0);

  // One step, teacher = student + 0.3 e1 on capsule 1.
  const auto one = testutil::random_values(6, rng);
  auto shifted = one;
  shifted[3] += 0.3;
  EXPECT_NEAR(consistency_loss(t.constant(Shape{1, 2, 3}, one), t.constant(Shape{1, 2, 3}, shifted)).item(), 0.3,
              1e-15);
  shifted[3] += 0.3;
  EXPECT_NEAR(consistency_loss(t.constant(Shape{1, 2, 3}, one), t.constant(Shape{1, 2, 3}, shifted)).item(), 0.6,
              1e-15);
  EXPECT_THROW(consistency_loss(s, t.constant(Shape{2, 3, 2}, v)), DimensionError);
}

TEST(Consistency, StopGradientDetachesTeacher) {
  Tape t;
  Tensor s = t.variable(Shape{1, 1, 2}, {0.1, 0.2});
  Tensor teacher = t.variable(Shape{1, 1, 2}, {0.4, -0.2});
  t.backward(consistency_loss(s, teacher, true));
  EXPECT_TRUE(teacher.grad().empty() || (teacher.grad()[0] == 0.0 && teacher.grad()[1] == 0.0));
  EXPECT_NE(s.grad()[0], 0.0);
}

TEST(Pairings, PrefixAndSuffixInclusive) {
  const std::vector<int> seq = {7, 8, 9, kEos};
  const std::size_t steps[] = {0, 2, 3};
  auto past = step_pairings(Direction::Forward, seq, BiasKind::Past, steps);
  EXPECT_EQ(past[0].tokens, (std::vector<int>{7}));
  EXPECT_EQ(past[1].tokens, (std::vector<int>{7, 8, 9}));
  EXPECT_EQ(past[2].tokens, seq);
  auto future = step_pairings(Direction::Backward, seq, BiasKind::Future, steps);
  EXPECT_EQ(future[0].tokens, seq);
  EXPECT_EQ(future[1].tokens, (std::vector<int>{9, kEos}));
  EXPECT_EQ(future[2].tokens, (std::vector<int>{kEos}));
  const std::size_t bad[] = {4};
  EXPECT_THROW(step_pairings(Direction::Forward, seq, BiasKind::Past, bad), IndexError);
}

TEST(Subsample, RateOneAllStepsOtherwiseSeededNonEmpty) {
  auto all = subsample_steps(9, 1.0, 5, 0, Direction::Forward);
  EXPECT_EQ(all.size(), 9u);
  EXPECT_TRUE(std::is_sorted(all.begin(), all.end()));
  for (std::size_t s = 0; s < 50; ++s) {
    auto a = subsample_steps(7, 0.01, 3, s, Direction::Backward);
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, subsample_steps(7, 0.01, 3, s, Direction::Backward));
  }
  std::size_t kept = 0;
  for (std::size_t s = 0; s < 200; ++s) kept += subsample_steps(10, 0.5, 8, s, Direction::Forward).size();
  EXPECT_NEAR(static_cast<double>(kept) / 2000.0, 0.5, 0.05);
}

TEST(DualStep, ZeroWeightsReduceToTwoBaselines) {
  Pair p;
  DualLossConfig cfg;
  cfg.lambda_past = cfg.lambda_future = 0.0;
  p.fwd.params().zero_grad();
  p.bwd.params().zero_grad();
  const auto losses = dual_step(p.batch, p.fwd, p.bwd, cfg, {});
  const auto gf = flat_grads(p.fwd.params());
  const auto gb = flat_grads(p.bwd.params());

  p.fwd.params().zero_grad();
  p.bwd.params().zero_grad();
  const double ce_f = baseline_step(p.batch.fwd, p.fwd, {}, Direction::Forward);
  const double ce_b = baseline_step(p.batch.bwd, p.bwd, {}, Direction::Backward);
  EXPECT_NEAR(losses.total, ce_f + ce_b, 1e-12);
  EXPECT_EQ(losses.past, 0.0);
  EXPECT_LE(testutil::max_abs_diff(gf, flat_grads(p.fwd.params())), 1e-10);
  EXPECT_LE(testutil::max_abs_diff(gb, flat_grads(p.bwd.params())), 1e-10);
}

TEST(DualStep, PerSentenceTapesMatchSingleTape) {
  Pair p;
  DualLossConfig cfg;
  cfg.subsample = 1.0;
  p.fwd.params().zero_grad();
  p.bwd.params().zero_grad();
  const auto losses = dual_step(p.batch, p.fwd, p.bwd, cfg, {0.0, 77});
  const auto gf = flat_grads(p.fwd.params());
  const auto gb = flat_grads(p.bwd.params());

  Tape tape;
  DualLosses parts;
  Tensor total = dual_loss(tape, p.batch, p.fwd, p.bwd, cfg, 77, &parts);
  tape.backward(total);
  p.fwd.params().zero_grad();
  p.bwd.params().zero_grad();
  tape.accumulate_param_grads(p.fwd.params());
  tape.accumulate_param_grads(p.bwd.params());
  EXPECT_NEAR(losses.total, total.item(), 1e-12);
  EXPECT_NEAR(losses.past, parts.past, 1e-12);
  EXPECT_NEAR(losses.future, parts.future, 1e-12);
  EXPECT_GT(parts.past, 0.0);
  EXPECT_GT(parts.future, 0.0);
  EXPECT_LE(testutil::max_abs_diff(gf, flat_grads(p.fwd.params())), 1e-12);
  EXPECT_LE(testutil::max_abs_diff(gb, flat_grads(p.bwd.params())), 1e-12);
}

TEST(DualStep, StopGradientZeroesTeacherParameters) {
  Pair p;
  for (bool sg : {true, false}) {
    Tape tape;
    const auto& v = p.batch.fwd;
    auto f = p.fwd.forward(tape, v.src_row(0), v.tgt_in_row(0));
    auto steps = subsample_steps(v.tgt_lengths[0], 1.0, 0, 0, Direction::Forward);
    Tensor h = p.bwd.teacher_encode_all(tape, p.batch.bwd.src_row(0), BiasKind::Past);
    Tensor teacher = p.bwd.extract_teacher_capsules(tape, h, BiasKind::Past, steps);
    auto [b, e] = group_range(p.fwd.capsule_config(), CapsuleGroup::Past);
    Tensor student = slice(gather_rows(f.omega, steps), 1, b, e);
    tape.backward(consistency_loss(student, teacher, sg));
    p.bwd.params().zero_grad();
    tape.accumulate_param_grads(p.bwd.params());
    double teacher_norm = 0.0;
    for (auto id : p.bwd.params().ordered()) {
      for (double g : p.bwd.params().grad(id)) {
        if (sg) {
          ASSERT_EQ(g, 0.0) << p.bwd.params().name(id);
        }
        teacher_norm += g * g;
      }
    }
    if (!sg) {
      EXPECT_GT(teacher_norm, 0.0);
    }
  }
}

TEST(DualStep, SubsampleRateOneEqualsFullPairing) {
  Pair p;
  DualLossConfig cfg;
  cfg.subsample = 1.0;
  Tape tape(false);
  DualLosses parts;
  dual_loss(tape, p.batch, p.fwd, p.bwd, cfg, 123, &parts);

  // Every step paired, assembled by hand.
  double past = 0.0;
  for (std::size_t b = 0; b < p.batch.fwd.batch; ++b) {
    for (int dir = 0; dir < 2; ++dir) {
      const auto& sv = dir == 0 ? p.batch.fwd : p.batch.bwd;
      const auto& tv = dir == 0 ? p.batch.bwd : p.batch.fwd;
      const TranslationModel& student = dir == 0 ? p.fwd : p.bwd;
      const TranslationModel& teacher = dir == 0 ? p.bwd : p.fwd;
      auto f = student.forward(tape, sv.src_row(b), sv.tgt_in_row(b));
      std::vector<std::size_t> steps(sv.tgt_lengths[b]);
      std::iota(steps.begin(), steps.end(), 0);
      Tensor h = teacher.teacher_encode_all(tape, tv.src_row(b), BiasKind::Past);
      Tensor t = teacher.extract_teacher_capsules(tape, h, BiasKind::Past, steps);
      Tensor s = slice(gather_rows(f.omega, steps), 1, 0, student.capsule_config().n_past);
      past += consistency_loss(s, t).item();
    }
  }
  EXPECT_NEAR(parts.past, past / static_cast<double>(p.batch.fwd.batch), 1e-12);
}

TEST(DualStep, TiedModelsOnPalindromicCopyBatch) {
  auto m = testutil::small_model(12, 12);
  TranslationModel a(m, testutil::small_capsules(), true, 5);
  TranslationModel b(m, testutil::small_capsules(), true, 5);
  std::vector<EncodedPair> pairs = {{{4, 5, 6, 5, 4}, {4, 5, 6, 5, 4}}, {{7, 8, 7}, {7, 8, 7}}};
  const std::size_t ids[] = {0, 1};
  DualLossConfig cfg;
  cfg.subsample = 1.0;
  Tape tape(false);
  DualLosses parts;
  dual_loss(tape, make_dual_batch(pairs, ids), a, b, cfg, 1, &parts);
  EXPECT_TRUE(std::isfinite(parts.past));
  EXPECT_GE(parts.past, 0.0);
  EXPECT_GE(parts.future, 0.0);
  EXPECT_NEAR(parts.ce_fwd, parts.ce_bwd, 1e-12);
}

TEST(DualStep, NonFiniteLossNamesComponent) {
  Pair p;
  for (double& v : p.fwd.params().value_mut(p.fwd.params().id("head.b_out"))) v = std::nan("");
  try {
    dual_step(p.batch, p.fwd, p.bwd, DualLossConfig{}, {});
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("CE_fwd"), std::string::npos) << e.what();
  }
}

TEST(DualStep, NeedsCapsulesWhenActive) {
  auto m = testutil::small_model();
  TranslationModel a(m, testutil::small_capsules(), false, 1);
  TranslationModel b(testutil::reversed(m), testutil::small_capsules(), false, 2);
  Pair p;
  EXPECT_THROW(dual_step(p.batch, a, b, DualLossConfig{}, {}), ContractError);
  DualLossConfig bad;
  bad.subsample = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(TeacherCapsules, ExtractionExamples) {
  auto cfg = testutil::small_capsules();
  cfg.n_past = 1;
  TranslationModel m(testutil::small_model(), cfg, true, 3);
  Tape tape(false);
  const std::size_t d = m.config().d_model, D = cfg.dim;
  Tensor zeros = tape.constant(Shape{3, d}, std::vector<double>(3 * d, 0.0));
  const std::size_t steps[] = {0, 1, 2};
  for (double v : m.extract_teacher_capsules(tape, zeros, BiasKind::Past, steps).data()) EXPECT_EQ(v, 0.0);

  // One-row prefix with a single Past capsule: squash of that row's vote.
  CounterRng rng(4);
  Tensor h = tape.constant(Shape{3, d}, testutil::random_values(3 * d, rng));
  const std::size_t first[] = {0};
  auto got = m.extract_teacher_capsules(tape, h, BiasKind::Past, first).to_vector();
  Tensor u = project_low_capsules(h, tape.param(m.params(), "ext.W"), cfg.total(), D);
  auto vote = slice(slice(slice(u, 0, 0, 1), 1, 0, 1), 2, 0, D).to_vector();
  auto expected = squash(tape.constant(Shape{D}, vote)).to_vector();
  EXPECT_EQ(got.size(), D);
  EXPECT_LE(testutil::max_abs_diff(got, expected), 1e-15);

  const std::vector<int> seq = {6};
  auto hp = m.teacher_encode_all(tape, seq, BiasKind::Past).to_vector();
  auto hf = m.teacher_encode_all(tape, seq, BiasKind::Future).to_vector();
  EXPECT_EQ(hp, hf);
}
