#include <gtest/gtest.h>

#include "dualpf/grad_suite.hpp"

using namespace dualpf;

// Every op case over many random inputs; composite cases run in the acceptance binary.
TEST(GradientSuite, OpsOverHundredSeeds) {
  std::size_t cases = 0;
  for (const auto& c : gradient_cases()) {
    if (c.composite) continue;
    ++cases;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto r = c.run(5000 + seed);
      ASSERT_LT(r.max_rel_error, kGradTolerance) << c.name << " seed " << seed << " at " << r.worst;
    }
  }
  EXPECT_GE(cases, 25u);
}
