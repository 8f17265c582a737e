#include <gtest/gtest.h>

#include <omp.h>

#include <vector>

#include "dualpf/kernels.hpp"
#include "test_util.hpp"

using namespace dualpf;
namespace ks = dualpf::kernels::serial;
namespace kp = dualpf::kernels::parallel;

namespace {

// Big enough to cross the threshold that opens a parallel region.
constexpr std::size_t M = 97, N = 83, K = 64;

std::vector<double> rand(std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed);
  return testutil::random_values(n, rng);
}

}  // namespace

TEST(Kernels, GemmVariantsAgree) {
  const auto a = rand(M * K, 1), b = rand(K * N, 2), bt = rand(N * K, 3), at = rand(K * M, 4);
  const auto seed = rand(M * N, 5);
  for (int variant = 0; variant < 3; ++variant) {
    auto cs = seed, cp = seed;
    if (variant == 0) {
      ks::gemm_nn(M, N, K, a.data(), b.data(), cs.data());
      kp::gemm_nn(M, N, K, a.data(), b.data(), cp.data());
    } else if (variant == 1) {
      ks::gemm_nt(M, N, K, a.data(), bt.data(), cs.data());
      kp::gemm_nt(M, N, K, a.data(), bt.data(), cp.data());
    } else {
      ks::gemm_tn(M, N, K, at.data(), b.data(), cs.data());
      kp::gemm_tn(M, N, K, at.data(), b.data(), cp.data());
    }
    EXPECT_LE(testutil::max_abs_diff(cs, cp), 1e-12) << variant;
  }
}

TEST(Kernels, GemmByHand) {
  const double a[] = {1, 2, 3, 4}, b[] = {5, 6, 7, 8};
  double c[4] = {0, 0, 0, 0};
  kp::gemm_nn(2, 2, 2, a, b, c);
  EXPECT_EQ(std::vector<double>(c, c + 4), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Kernels, SoftmaxAgrees) {
  const std::size_t rows = 700, cols = 130;
  const auto x = rand(rows * cols, 6), dy = rand(rows * cols, 7);
  std::vector<double> ys(rows * cols), yp(rows * cols), ds(rows * cols, 0.0), dp(rows * cols, 0.0);
  ks::softmax_rows(rows, cols, x.data(), ys.data());
  kp::softmax_rows(rows, cols, x.data(), yp.data());
  EXPECT_LE(testutil::max_abs_diff(ys, yp), 1e-15);
  ks::softmax_rows_backward(rows, cols, ys.data(), dy.data(), ds.data());
  kp::softmax_rows_backward(rows, cols, ys.data(), dy.data(), dp.data());
  EXPECT_LE(testutil::max_abs_diff(ds, dp), 1e-15);
}

TEST(Kernels, RoutingAgrees) {
  const std::size_t T = 20, I = 18, J = 5, D = 16, H = 16;
  const auto c = rand(T * I * J, 8), u = rand(I * J * D, 9);
  std::vector<double> ss(T * J * D), sp(T * J * D);
  ks::routing_pool(T, I, J, D, c.data(), u.data(), ss.data());
  kp::routing_pool(T, I, J, D, c.data(), u.data(), sp.data());
  EXPECT_LE(testutil::max_abs_diff(ss, sp), 1e-13);

  const auto zp = rand(T * H, 10), up = rand(I * J * H, 11), op = rand(T * J * H, 12), w = rand(H, 13);
  std::vector<double> as(T * I * J), ap(T * I * J), acts(T * I * J * H), actp(T * I * J * H);
  ks::guided_agreement(T, I, J, H, zp.data(), up.data(), op.data(), w.data(), as.data(), acts.data());
  kp::guided_agreement(T, I, J, H, zp.data(), up.data(), op.data(), w.data(), ap.data(), actp.data());
  EXPECT_LE(testutil::max_abs_diff(as, ap), 1e-13);
  EXPECT_EQ(acts, actp);
}

TEST(Kernels, ParallelResultIndependentOfThreadCount) {
  const auto a = rand(M * K, 14), b = rand(K * N, 15);
  std::vector<double> one(M * N, 0.0), many(M * N, 0.0);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  kp::gemm_nn(M, N, K, a.data(), b.data(), one.data());
  omp_set_num_threads(4);
  kp::gemm_nn(M, N, K, a.data(), b.data(), many.data());
  omp_set_num_threads(saved);
  EXPECT_EQ(one, many);
}
