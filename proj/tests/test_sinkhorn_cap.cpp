// Runs without the plan audit, so hitting the cap does not count against the
// suite-wide convergence record.

#include "otlex/ot_core.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace otlex;

TEST(SinkhornCap, ReportsNonConvergence) {
  std::mt19937_64 rng(3);
  const CostMatrix d{otlex::testing::uniform(30, 30, rng, 0.0, 10.0)};
  SinkhornOptions opt;
  opt.max_iters = 2;
  opt.overrelax = false;
  opt.tol = 1e-14;
  const TransportPlan p = sinkhorn(d, 0.01, opt);
  EXPECT_FALSE(p.converged());
  EXPECT_EQ(p.iterations(), 2);
  EXPECT_GT(p.residual(), opt.tol);
  // The returned plan is still a coupling.
  EXPECT_LT(p.violation(), 1e-12);
  EXPECT_DOUBLE_EQ(p.violation(), marginal_violation(p.values()));
  EXPECT_TRUE(p.values().allFinite());
  EXPECT_GE(p.values().minCoeff(), 0.0);
}

TEST(SinkhornCap, ConvergedFlagWhenTolMet) {
  std::mt19937_64 rng(4);
  const CostMatrix d{otlex::testing::uniform(6, 6, rng)};
  const TransportPlan p = sinkhorn(d, 1.0);
  EXPECT_TRUE(p.converged());
  EXPECT_LT(p.residual(), 1e-6);
}
