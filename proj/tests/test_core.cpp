#include <cmath>

#include <gtest/gtest.h>

#include "bridgekit/acceptance.hpp"
#include "bridgekit/core.hpp"

using namespace bridgekit;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

}  // namespace

TEST(PinnedPath, BrownianBridgeMidpoint) {
  const auto m = pinned_mean_std(PinnedPathSpec::brownian_bridge(1.0), v1(0.0), v1(1.0), 0.5);
  EXPECT_DOUBLE_EQ(m.mean[0], 0.5);
  EXPECT_DOUBLE_EQ(m.std, 0.5);
}

TEST(PinnedPath, BoundaryPinning) {
  Vec x0(2), x1(2);
  x0 << 1.5, -2.0;
  x1 << -3.0, 4.0;
  const auto bb = pinned_mean_std(PinnedPathSpec::brownian_bridge(1.0), x0, x1, 0.0);
  EXPECT_EQ(bb.mean, x0);
  EXPECT_EQ(bb.std, 0.0);
  const auto lin = pinned_mean_std(PinnedPathSpec::linear(), x0, x1, 0.0);
  EXPECT_EQ(lin.mean, x0);
  EXPECT_DOUBLE_EQ(lin.std, 0.01);
  const auto end = pinned_mean_std(PinnedPathSpec::linear(0.2), x0, x1, 1.0);
  EXPECT_EQ(end.mean, x1);
  EXPECT_DOUBLE_EQ(end.std, 0.2);
}

TEST(PinnedPath, BrownianBridgeScaled) {
  const auto m = pinned_mean_std(PinnedPathSpec::brownian_bridge(2.0), v1(0.0), v1(4.0), 0.25);
  EXPECT_NEAR(m.mean[0], 1.0, 1e-15);
  EXPECT_NEAR(m.std, 2.0 * std::sqrt(0.1875), 1e-15);
  EXPECT_NEAR(m.std, 0.866025403784, 1e-12);
}

TEST(PinnedPath, Errors) {
  const auto bb = PinnedPathSpec::brownian_bridge(1.0);
  EXPECT_THROW(pinned_mean_std(bb, v1(0.0), v1(1.0), 1.5), DomainError);
  EXPECT_THROW(pinned_mean_std(bb, v1(0.0), v1(1.0), -0.1), DomainError);
  EXPECT_THROW(pinned_mean_std(bb, v1(0.0), Vec::Zero(2), 0.5), ShapeError);
  Rng rng(1);
  EXPECT_THROW(sample_pinned(bb, v1(0.0), v1(1.0), 2.0, rng), DomainError);
}

TEST(SamplePinned, EndpointsAreExact) {
  const auto bb = PinnedPathSpec::brownian_bridge(1.0);
  Vec x0(3), x1(3);
  x0 << 0.1, 0.2, 0.3;
  x1 << -1.0, 5.0, 2.5;
  Rng rng(7);
  EXPECT_EQ(sample_pinned(bb, x0, x1, 0.0, rng), x0);
  EXPECT_EQ(sample_pinned(bb, x0, x1, 1.0, rng), x1);
}

TEST(SamplePinned, MidpointVariance) {
  const auto bb = PinnedPathSpec::brownian_bridge(1.0);
  const Vec zero = Vec::Zero(2);
  Rng rng(11);
  const int n = 100000;
  Vec sum = Vec::Zero(2), sq = Vec::Zero(2);
  for (int k = 0; k < n; ++k) {
    const Vec x = sample_pinned(bb, zero, zero, 0.5, rng);
    sum += x;
    sq += x.cwiseProduct(x);
  }
  for (int c = 0; c < 2; ++c) {
    const double mean = sum[c] / n;
    const double var = (sq[c] - n * mean * mean) / (n - 1);
    const double se = 0.25 * std::sqrt(2.0 / (n - 1));
    EXPECT_NEAR(var, 0.25, 3.0 * se) << "coordinate " << c;
  }
}

TEST(ConditionalDrift, Examples) {
  ConditionalDrift d;
  d.path = PinnedPathSpec::brownian_bridge(1.0);

  d.kind = DriftKind::doob_forward;
  EXPECT_DOUBLE_EQ(eval_conditional_drift(d, v1(0.0), v1(-3.0), v1(1.0), 0.5)[0], 2.0);
  for (double t : {0.0, 0.3, 0.9, 0.998}) EXPECT_EQ(eval_conditional_drift(d, v1(1.7), v1(0.0), v1(1.7), t)[0], 0.0);

  d.kind = DriftKind::sb_bridge;
  for (double x : {-4.0, 0.0, 2.5}) EXPECT_DOUBLE_EQ(eval_conditional_drift(d, v1(x), v1(-1.0), v1(2.0), 0.5)[0], 3.0);
  EXPECT_NEAR(eval_conditional_drift(d, v1(1.0), v1(0.0), v1(0.0), 0.25)[0], 0.5 / 0.375, 1e-15);

  d.kind = DriftKind::constant_line;
  EXPECT_DOUBLE_EQ(eval_conditional_drift(d, v1(9.0), v1(-1.0), v1(2.0), 0.7)[0], 3.0);

  d.kind = DriftKind::doob_reverse;
  EXPECT_DOUBLE_EQ(eval_conditional_drift(d, v1(1.0), v1(0.0), v1(5.0), 0.5)[0], -2.0);
}

TEST(ConditionalDrift, SingularEndpointsAreClamped) {
  ConditionalDrift d;
  d.kind = DriftKind::doob_forward;
  d.path = PinnedPathSpec::brownian_bridge(1.0);
  DriftDiagnostics diag;
  const Vec at_one = eval_conditional_drift(d, v1(0.0), v1(0.0), v1(1.0), 1.0, &diag);
  EXPECT_TRUE(at_one.allFinite());
  EXPECT_EQ(diag.clipped, 1u);
  EXPECT_NEAR(at_one[0], 1.0 / d.t_clip, 1e-9);  // 1 - (1 - t_clip) is inexact
  eval_conditional_drift(d, v1(0.0), v1(0.0), v1(1.0), 0.5, &diag);
  EXPECT_EQ(diag.clipped, 1u);

  d.kind = DriftKind::doob_reverse;
  EXPECT_TRUE(eval_conditional_drift(d, v1(1.0), v1(0.0), v1(1.0), 0.0, &diag).allFinite());
  d.kind = DriftKind::sb_bridge;
  EXPECT_TRUE(eval_conditional_drift(d, v1(1.0), v1(0.0), v1(1.0), 0.0, &diag).allFinite());
  EXPECT_TRUE(eval_conditional_drift(d, v1(1.0), v1(0.0), v1(1.0), 1.0, &diag).allFinite());
  EXPECT_EQ(diag.clipped, 4u);
}

TEST(ConditionalDrift, ParseNames) {
  for (auto k : {DriftKind::constant_line, DriftKind::sb_bridge, DriftKind::doob_forward, DriftKind::doob_reverse,
                 DriftKind::kinetic})
    EXPECT_EQ(parse_drift_kind(to_string(k)), k);
  EXPECT_THROW(parse_drift_kind("doob"), ConfigError);
}

TEST(KineticDrift, BrownianBridgeCoefficient) {
  // With x0 = x1 = 0 the drift is a_t x; a_t = -1/(1-t) for sigma_ref = 1.
  const MeanSchedule mean = linear_mean_schedule();
  const StdSchedule sd = brownian_bridge_std_schedule(1.0);
  EXPECT_NEAR(kinetic_drift(mean, sd, 1.0, v1(1.0), v1(0.0), v1(0.0), 0.5)[0], -2.0, 1e-12);
  for (double t : {0.05, 0.2, 0.7, 0.95})
    EXPECT_NEAR(kinetic_drift(mean, sd, 1.0, v1(1.0), v1(0.0), v1(0.0), t)[0], -1.0 / (1.0 - t), 1e-10) << t;

  // Same coefficient with finite-difference derivatives.
  StdSchedule fd{sd.gamma, {}};
  MeanSchedule fd_mean{mean.weights, {}};
  for (double t : {0.2, 0.5, 0.8})
    EXPECT_NEAR(kinetic_drift(fd_mean, fd, 1.0, v1(1.0), v1(0.0), v1(0.0), t)[0], -1.0 / (1.0 - t), 1e-6) << t;
}

TEST(KineticDrift, AtMeanReturnsMeanVelocity) {
  Vec x0(2), x1(2);
  x0 << 1.0, -2.0;
  x1 << 4.0, 3.0;
  for (double t : {0.1, 0.5, 0.9}) {
    const Vec mu = (1.0 - t) * x0 + t * x1;
    const Vec v = kinetic_drift(linear_mean_schedule(), brownian_bridge_std_schedule(1.3), 1.3, mu, x0, x1, t);
    EXPECT_NEAR((v - (x1 - x0)).cwiseAbs().maxCoeff(), 0.0, 1e-12);
  }
}

TEST(KineticDrift, RequiresPositiveGamma) {
  EXPECT_THROW(kinetic_drift(linear_mean_schedule(), constant_std_schedule(0.0), 1.0, v1(0.0), v1(0.0), v1(1.0), 0.5),
               DomainError);
}

TEST(KineticDrift, MatchesDoobOnRandomInputs) {
  EXPECT_TRUE(acceptance::kinetic_doob_identity(acceptance::library_doob_forward(), 2000, 5).passed());
}

TEST(KineticDrift, IdentityCheckCatchesFlippedDenominator) {
  // A Doob drift with the time denominator flipped to t must be rejected.
  const acceptance::DoobFn broken = [](const Vec& x, const Vec&, const Vec& x1, double t) -> Vec {
    return (x1 - x) / t;
  };
  const auto rep = acceptance::kinetic_doob_identity(broken);
  EXPECT_FALSE(rep.passed());
  EXPECT_GT(rep.max_error, 1e-3);
}
