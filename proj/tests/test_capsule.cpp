#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dualpf/capsule.hpp"
#include "dualpf/errors.hpp"
#include "dualpf/head.hpp"
#include "dualpf/ops.hpp"
#include "oracle/scratch_routing.hpp"
#include "test_util.hpp"

using namespace dualpf;

namespace {

CapsuleConfig config(std::size_t np, std::size_t nf, std::size_t nr, std::size_t dim, std::size_t iters = 3) {
  CapsuleConfig c;
  c.n_past = np;
  c.n_future = nf;
  c.n_redundant = nr;
  c.dim = dim;
  c.iterations = iters;
  c.agreement_dim = 5;
  return c;
}

oracle::Cube to_cube(std::span<const double> v, std::size_t I, std::size_t J, std::size_t D) {
  oracle::Cube u(I, oracle::Mat(J, oracle::Vec(D)));
  for (std::size_t i = 0; i < I; ++i)
    for (std::size_t j = 0; j < J; ++j)
      for (std::size_t d = 0; d < D; ++d) u[i][j][d] = v[(i * J + j) * D + d];
  return u;
}

oracle::Mat to_mat(std::span<const double> v, std::size_t R, std::size_t C) {
  oracle::Mat m(R, oracle::Vec(C));
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) m[r][c] = v[r * C + c];
  return m;
}

}  // namespace

TEST(Squash, Examples) {
  Tape t(false);
  auto zero = squash(t.constant(Shape{1, 2}, {0, 0})).to_vector();
  EXPECT_EQ(zero[0], 0.0);
  EXPECT_EQ(zero[1], 0.0);
  auto v = squash(t.constant(Shape{2}, {3, 4})).to_vector();
  EXPECT_NEAR(v[0], 0.57692, 1e-5);
  EXPECT_NEAR(v[1], 0.76923, 1e-5);
  EXPECT_NEAR(std::hypot(v[0], v[1]), 25.0 / 26.0, 1e-12);
  auto big = squash(t.constant(Shape{3}, {1e6, 0, 0})).to_vector();
  EXPECT_GT(big[0], 0.999999);
  EXPECT_LT(big[0], 1.0);
}

TEST(Projection, ZeroAndIdentity) {
  Tape t(false);
  CounterRng rng(1);
  Tensor h = t.constant(Shape{3, 4}, testutil::random_values(12, rng));
  auto zeros = project_low_capsules(h, t.constant(Shape{4, 6}, std::vector<double>(24, 0.0)), 3, 2).to_vector();
  EXPECT_TRUE(std::all_of(zeros.begin(), zeros.end(), [](double v) { return v == 0.0; }));
  Tensor h1 = t.constant(Shape{1, 3}, {0.5, -1, 2});
  Tensor eye = t.constant(Shape{3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(project_low_capsules(h1, eye, 1, 3).to_vector(), h1.to_vector());
  EXPECT_THROW(project_low_capsules(h, eye, 1, 3), DimensionError);
}

TEST(RoutingRound, SymmetricZeroLogits) {
  Tape t(false);
  CounterRng rng(2);
  Tensor u = t.constant(Shape{3, 2, 4}, testutil::random_values(24, rng));
  Tensor b = t.constant(Shape{1, 3, 2}, std::vector<double>(6, 0.0));
  for (double c : routing_round(u, b).c.data()) EXPECT_EQ(c, 0.5);
}

TEST(RoutingRound, PastMaskRenormalizes) {
  const auto cfg = config(2, 2, 1, 3);
  const auto mask = GroupMask::only(cfg, CapsuleGroup::Past);
  Tape t(false);
  CounterRng rng(3);
  Tensor u = t.constant(Shape{4, 5, 3}, testutil::random_values(60, rng));
  Tensor b = t.constant(Shape{2, 4, 5}, testutil::random_values(40, rng, 3.0));
  auto st = routing_round(u, b, &mask);
  auto c = st.c.to_vector();
  for (std::size_t r = 0; r < 8; ++r) {
    EXPECT_NEAR(c[r * 5] + c[r * 5 + 1], 1.0, 1e-12);
    for (std::size_t j = 2; j < 5; ++j) EXPECT_LE(c[r * 5 + j], 1e-6);
  }
  GroupMask none{std::vector<std::uint8_t>(5, 0)};
  EXPECT_THROW(routing_round(u, b, &none), ContractError);
}

TEST(RoutingRound, SingleColumnCoefficientIsOne) {
  Tape t(false);
  Tensor u = t.constant(Shape{2, 1, 2}, {1.0, 2.0, 3.0, -1.0});
  Tensor b = t.constant(Shape{1, 2, 1}, {0.3, -7.0});
  auto omega = routing_round(u, b).omega.to_vector();
  // One column: softmax gives c = 1 whatever b is, so s = u_11 + u_21.
  auto expected = oracle::squash({1.0 + 3.0, 2.0 - 1.0});
  EXPECT_NEAR(omega[0], expected[0], 1e-15);
  EXPECT_NEAR(omega[1], expected[1], 1e-15);
}

TEST(GuidedUpdate, ZeroWeightsLeaveLogits) {
  Tape t(false);
  CounterRng rng(5);
  const std::size_t I = 3, J = 2, D = 4, d = 6, H = 5;
  Tensor u = t.constant(Shape{I, J, D}, testutil::random_values(I * J * D, rng));
  Tensor om = t.constant(Shape{1, J, D}, testutil::random_values(J * D, rng));
  Tensor z = t.constant(Shape{1, d}, testutil::random_values(d, rng));
  Tensor b = t.constant(Shape{1, I, J}, testutil::random_values(I * J, rng));
  GuidedAgreement zero_w{t.constant(Shape{d + 2 * D, H}, testutil::random_values((d + 2 * D) * H, rng)),
                         t.constant(Shape{H}, std::vector<double>(H, 0.0))};
  EXPECT_EQ(guided_update(b, u, om, z, zero_w).to_vector(), b.to_vector());
  GuidedAgreement zero_wb{t.constant(Shape{d + 2 * D, H}, std::vector<double>((d + 2 * D) * H, 0.0)),
                          t.constant(Shape{H}, testutil::random_values(H, rng))};
  EXPECT_EQ(guided_update(b, u, om, z, zero_wb).to_vector(), b.to_vector());
}

TEST(GuidedRouting, OneIterationZeroWeightIsPlainRound) {
  auto cfg = config(1, 1, 1, 4, 1);
  Tape t(false);
  CounterRng rng(6);
  const std::size_t I = 5, J = 3, D = 4, d = 6, H = 5;
  Tensor u = t.constant(Shape{I, J, D}, testutil::random_values(I * J * D, rng));
  Tensor z = t.constant(Shape{2, d}, testutil::random_values(2 * d, rng));
  GuidedAgreement p{t.constant(Shape{d + 2 * D, H}, testutil::random_values((d + 2 * D) * H, rng)),
                    t.constant(Shape{H}, std::vector<double>(H, 0.0))};
  auto guided = run_guided_routing(u, z, p, cfg);
  Tensor b0 = t.constant(Shape{2, I, J}, std::vector<double>(2 * I * J, 0.0));
  auto plain = routing_round(u, b0);
  EXPECT_LE(testutil::max_abs_diff(guided.omega.to_vector(), plain.omega.to_vector()), 1e-12);
  const auto all = GroupMask::all(cfg);
  auto masked = run_masked_routing(u, 2, {}, all, cfg, false);
  EXPECT_LE(testutil::max_abs_diff(guided.omega.to_vector(), masked.omega.to_vector()), 1e-12);
}

TEST(GuidedRouting, MatchesScratchOracle) {
  const auto cfg = config(2, 2, 1, 3, 3);
  CounterRng rng(7);
  const std::size_t I = 4, J = cfg.total(), D = cfg.dim, d = 6, H = cfg.agreement_dim, T = 3;
  const auto hv = testutil::random_values(I * d, rng);
  const auto wv = testutil::random_values(d * J * D, rng);
  const auto zv = testutil::random_values(T * d, rng);
  const auto wbv = testutil::random_values((d + 2 * D) * H, rng);
  const auto w = testutil::random_values(H, rng);
  Tape t(false);
  Tensor u = project_low_capsules(t.constant(Shape{I, d}, hv), t.constant(Shape{d, J * D}, wv), J, D);
  GuidedAgreement p{t.constant(Shape{d + 2 * D, H}, wbv), t.constant(Shape{H}, w)};
  auto r = run_guided_routing(u, t.constant(Shape{T, d}, zv), p, cfg);
  auto omega = r.omega.to_vector();
  auto c = r.c.to_vector();

  const auto ou = oracle::project(to_mat(hv, I, d), to_mat(wv, d, J * D), J, D);
  for (std::size_t s = 0; s < T; ++s) {
    oracle::Vec z(zv.begin() + s * d, zv.begin() + (s + 1) * d);
    const auto ref = oracle::guided(ou, z, to_mat(wbv, d + 2 * D, H), w, cfg.iterations);
    for (std::size_t j = 0; j < J; ++j)
      for (std::size_t k = 0; k < D; ++k) EXPECT_NEAR(omega[(s * J + j) * D + k], ref.omega[j][k], 1e-12);
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t j = 0; j < J; ++j) EXPECT_NEAR(c[(s * I + i) * J + j], ref.c[i][j], 1e-12);
  }
}

TEST(GuidedRouting, LowCapsulePermutationEquivariance) {
  const auto cfg = config(2, 2, 1, 3, 3);
  CounterRng rng(8);
  const std::size_t I = 5, J = cfg.total(), D = cfg.dim, d = 6, H = cfg.agreement_dim;
  auto hv = testutil::random_values(I * d, rng);
  const auto wv = testutil::random_values(d * J * D, rng);
  const auto zv = testutil::random_values(2 * d, rng);
  const auto wbv = testutil::random_values((d + 2 * D) * H, rng);
  const auto w = testutil::random_values(H, rng);
  auto run = [&](const std::vector<double>& h) {
    Tape t(false);
    Tensor u = project_low_capsules(t.constant(Shape{I, d}, h), t.constant(Shape{d, J * D}, wv), J, D);
    GuidedAgreement p{t.constant(Shape{d + 2 * D, H}, wbv), t.constant(Shape{H}, w)};
    return run_guided_routing(u, t.constant(Shape{2, d}, zv), p, cfg).omega.to_vector();
  };
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  std::vector<double> permuted(hv.size());
  for (std::size_t i = 0; i < I; ++i) std::copy_n(hv.begin() + perm[i] * d, d, permuted.begin() + i * d);
  EXPECT_LE(testutil::max_abs_diff(run(hv), run(permuted)), 1e-12);
}

TEST(MaskedRouting, MatchesOracleAndZeroesMaskedGroups) {
  const auto cfg = config(2, 2, 1, 3, 3);
  CounterRng rng(9);
  const std::size_t I = 6, J = cfg.total(), D = cfg.dim, T = 2;
  const auto uv = testutil::random_values(I * J * D, rng);
  std::vector<std::uint8_t> rows(T * I, 0);
  for (std::size_t i = 0; i <= 2; ++i) rows[i] = 1;          // prefix of step 0
  for (std::size_t i = 3; i < I; ++i) rows[I + i] = 1;       // suffix of step 1
  for (auto group : {CapsuleGroup::Past, CapsuleGroup::Future}) {
    const auto mask = GroupMask::only(cfg, group);
    Tape t(false);
    auto r = run_masked_routing(t.constant(Shape{I, J, D}, uv), T, rows, mask, cfg);
    auto omega = r.omega.to_vector();
    const auto u = to_cube(uv, I, J, D);
    std::vector<bool> allowed(J);
    for (std::size_t j = 0; j < J; ++j) allowed[j] = mask.allowed[j] != 0;
    for (std::size_t s = 0; s < T; ++s) {
      std::vector<bool> sel(I);
      for (std::size_t i = 0; i < I; ++i) sel[i] = rows[s * I + i] != 0;
      const auto ref = oracle::masked(u, sel, allowed, cfg.iterations);
      for (std::size_t j = 0; j < J; ++j)
        for (std::size_t k = 0; k < D; ++k) {
          const double v = omega[(s * J + j) * D + k];
          if (!allowed[j]) {
            EXPECT_EQ(v, 0.0);
          } else {
            EXPECT_NEAR(v, ref.omega[j][k], 1e-12);
          }
        }
    }
  }
}

TEST(MaskedRouting, SinglePastCapsuleIsSquashedSum) {
  const auto cfg = config(1, 2, 1, 2, 3);
  const auto mask = GroupMask::only(cfg, CapsuleGroup::Past);
  CounterRng rng(10);
  const std::size_t I = 3, J = cfg.total(), D = cfg.dim;
  const auto uv = testutil::random_values(I * J * D, rng);
  Tape t(false);
  auto omega = run_masked_routing(t.constant(Shape{I, J, D}, uv), 1, {}, mask, cfg).omega.to_vector();
  oracle::Vec s(D, 0.0);
  for (std::size_t i = 0; i < I; ++i)
    for (std::size_t k = 0; k < D; ++k) s[k] += uv[(i * J) * D + k];
  const auto expected = oracle::squash(s);
  for (std::size_t k = 0; k < D; ++k) EXPECT_NEAR(omega[k], expected[k], 1e-14);
}

TEST(MaskedRouting, OneIterationNoAgreementIsRound) {
  const auto cfg = config(2, 2, 1, 3, 1);
  CounterRng rng(11);
  Tape t(false);
  Tensor u = t.constant(Shape{4, 5, 3}, testutil::random_values(60, rng));
  auto masked = run_masked_routing(u, 1, {}, GroupMask::all(cfg), cfg, false);
  auto plain = routing_round(u, t.constant(Shape{1, 4, 5}, std::vector<double>(20, 0.0)));
  EXPECT_EQ(masked.omega.to_vector(), plain.omega.to_vector());
}

TEST(Routing, RandomTrialInvariants) {
  CounterRng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const auto cfg = config(1 + rng.below(2), 1 + rng.below(2), rng.below(2), 2 + rng.below(3), 1 + rng.below(3));
    const std::size_t I = 1 + rng.below(6), J = cfg.total(), D = cfg.dim;
    const double scale = std::pow(10.0, rng.uniform(-2, 2));
    Tape t(false);
    Tensor u = t.constant(Shape{I, J, D}, testutil::random_values(I * J * D, rng, scale));
    const auto mask = GroupMask::only(cfg, rng.below(2) ? CapsuleGroup::Past : CapsuleGroup::Future);
    auto r = run_masked_routing(u, 1, {}, mask, cfg);
    auto c = r.c.to_vector();
    for (std::size_t i = 0; i < I; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < J; ++j) {
        sum += c[i * J + j];
        if (!mask.allowed[j]) {
          EXPECT_LE(c[i * J + j], 1e-6);
        }
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
    auto om = r.omega.to_vector();
    for (std::size_t j = 0; j < J; ++j) {
      double sq = 0.0;
      for (std::size_t k = 0; k < D; ++k) sq += om[j * D + k] * om[j * D + k];
      EXPECT_LT(std::sqrt(sq), 1.0);
    }
  }
}

TEST(Head, ZeroProjectionIsResidualIdentity) {
  ParamStore s;
  CounterRng init(3);
  PastFutureHead head(4, 6, 7, s, init);
  for (double& v : s.value_mut(s.id("head.W_o"))) v = 0.0;
  CounterRng rng(4);
  Tape t(false);
  Tensor z = t.constant(Shape{2, 4}, testutil::random_values(8, rng));
  Tensor caps = t.constant(Shape{2, 6}, testutil::random_values(12, rng));
  EXPECT_EQ(head.holistic_context(t, z, caps).to_vector(), z.to_vector());
  EXPECT_THROW(head.holistic_context(t, z, t.constant(Shape{2, 5}, std::vector<double>(10, 0.0))), DimensionError);
}

TEST(Head, ZeroCapsulesUseOnlyZBlock) {
  ParamStore s;
  CounterRng init(3);
  PastFutureHead head(4, 6, 7, s, init);
  CounterRng rng(5);
  Tape t(false);
  Tensor z = t.constant(Shape{2, 4}, testutil::random_values(8, rng));
  Tensor zero_caps = t.constant(Shape{2, 6}, std::vector<double>(12, 0.0));
  auto before = head.holistic_context(t, z, zero_caps).to_vector();
  auto w = s.value_mut(s.id("head.W_o"));
  for (std::size_t k = 4 * 4; k < w.size(); ++k) w[k] = 123.0;  // capsule rows
  EXPECT_EQ(head.holistic_context(t, z, zero_caps).to_vector(), before);
}

TEST(Head, DistributionProperties) {
  ParamStore s;
  CounterRng init(3);
  PastFutureHead head(4, 0, 4, s, init);
  for (double& v : s.value_mut(s.id("head.W_out"))) v = 0.0;
  Tape t(false);
  CounterRng rng(6);
  Tensor o = t.constant(Shape{3, 4}, testutil::random_values(12, rng));
  for (double p : head.output_distribution(t, o).data()) EXPECT_NEAR(p, 0.25, 1e-15);
  EXPECT_EQ(head.holistic_context(t, o, Tensor()).to_vector(), o.to_vector());

  // V=4 by hand: logits (0, ln 2, ln 3, ln 4) -> (1, 2, 3, 4) / 10.
  auto b = s.value_mut(s.id("head.b_out"));
  b[0] = 0.0;
  b[1] = std::log(2.0);
  b[2] = std::log(3.0);
  b[3] = std::log(4.0);
  auto p = head.output_distribution(t, o).to_vector();
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t v = 0; v < 4; ++v) EXPECT_NEAR(p[r * 4 + v], (v + 1) / 10.0, 1e-15);

  // Argmax is invariant to a shared logit shift.
  CounterRng wr(7);
  for (double& v : s.value_mut(s.id("head.W_out"))) v = wr.uniform(-1, 1);
  auto base = head.output_distribution(t, o).to_vector();
  for (double& v : b) v += 5.0;
  auto shifted = head.output_distribution(t, o).to_vector();
  for (std::size_t r = 0; r < 3; ++r) {
    auto arg = [&](const std::vector<double>& x) {
      return std::max_element(x.begin() + r * 4, x.begin() + r * 4 + 4) - x.begin();
    };
    EXPECT_EQ(arg(base), arg(shifted));
    EXPECT_NEAR(std::accumulate(shifted.begin() + r * 4, shifted.begin() + r * 4 + 4, 0.0), 1.0, 1e-9);
  }
}
