#include <cmath>

#include <gtest/gtest.h>

#include "bridgekit/core.hpp"
#include "bridgekit/sim.hpp"

using namespace bridgekit;

namespace {

BatchDriftFn constant_drift(Vec c) {
  return [c](double, const Mat& x) {
    Mat out(x.rows(), x.cols());
    out.rowwise() = c.transpose();
    return out;
  };
}

BatchDriftFn zero_drift() {
  return [](double, const Mat& x) { return Mat(Mat::Zero(x.rows(), x.cols())); };
}

}  // namespace

TEST(TimeGrid, Shape) {
  const TimeGrid f = TimeGrid::forward(4), r = TimeGrid::reverse(4);
  EXPECT_DOUBLE_EQ(f.dt(), 0.25);
  EXPECT_DOUBLE_EQ(r.dt(), -0.25);
  EXPECT_TRUE(r.reversed());
  EXPECT_EQ(r.time(4), 0.0);
  EXPECT_EQ(f.time(4), 1.0);
  EXPECT_THROW((TimeGrid{0, 0.0, 1.0}.validate()), DomainError);
  EXPECT_THROW((TimeGrid{4, 0.5, 0.5}.validate()), DomainError);
  EXPECT_THROW((TimeGrid{4, 0.0, 1.5}.validate()), DomainError);
}

TEST(EulerMaruyama, ConstantDriftOneStep) {
  Vec c(2);
  c << 1.5, -0.5;
  Rng rng(1);
  const Trajectory tr = euler_maruyama([&](double, const Vec&) { return c; }, Vec::Zero(2), 0.0, TimeGrid::forward(1), rng);
  EXPECT_EQ(tr.states.rows(), 2);
  EXPECT_EQ(Vec(tr.states.row(1).transpose()), c);
  EXPECT_EQ(tr.times[1], 1.0);
}

TEST(EulerMaruyama, FirstOrderConvergence) {
  // dx = -x dt from x = 1: Euler gives (1 - 1/n)^n, closed form e^{-1}.
  const DriftFn f = [](double, const Vec& x) { return Vec(-x); };
  auto err = [&](int n) {
    Rng rng(2);
    const Trajectory tr = euler_maruyama(f, Vec::Ones(1), 0.0, TimeGrid::forward(n), rng);
    return std::abs(tr.states(n, 0) - std::exp(-1.0));
  };
  for (int n : {100, 1000, 10000}) {
    const double e1 = err(n), e2 = err(2 * n);
    EXPECT_NEAR(e1 / e2, 2.0, 0.4) << n;
    EXPECT_LT(e1 * n, 0.5);  // C ~ e^{-1} / 2
  }
}

TEST(EulerMaruyama, ReverseGridUsesPositiveStep) {
  // On a reverse grid the drift acts in the direction of travel.
  Rng rng(3);
  const Trajectory tr =
      euler_maruyama([](double, const Vec&) { return Vec(Vec::Ones(1)); }, Vec::Zero(1), 0.0, TimeGrid::reverse(10), rng);
  EXPECT_NEAR(tr.states(10, 0), 1.0, 1e-12);
  EXPECT_EQ(tr.times[10], 0.0);
}

TEST(EulerMaruyama, NonFiniteStateNamesStep) {
  Rng rng(4);
  const DriftFn blowup = [](double, const Vec& x) { return Vec(x * 1e300); };
  try {
    euler_maruyama(blowup, Vec::Ones(1), 0.0, TimeGrid::forward(10), rng);
    FAIL() << "expected IntegrationError";
  } catch (const IntegrationError& e) {
    EXPECT_EQ(e.step(), 2u);
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos);
  }
}

TEST(SimulateBatch, BrownianTerminalVariance) {
  const int n = 100000;
  Rng rng(5);
  const SampleBatch x0(Mat::Zero(n, 2));
  const SimResult r = simulate_batch(zero_drift(), x0, 1.0, TimeGrid::forward(20), rng);
  const Mat& x = r.terminal.points();
  for (int c = 0; c < 2; ++c) {
    const double mean = x.col(c).mean();
    const double var = (x.col(c).array() - mean).square().sum() / (n - 1);
    EXPECT_NEAR(var, 1.0, 3.0 * std::sqrt(2.0 / (n - 1))) << c;
  }
}

TEST(SimulateBatch, ZeroDriftWithoutNoiseIsIdentity) {
  Rng rng(6);
  const SampleBatch x0(Mat::NullaryExpr(300, 3, [&] { return rng.normal(); }));
  const SimResult r = simulate_batch(zero_drift(), x0, 0.0, TimeGrid::forward(50), rng);
  EXPECT_EQ(r.terminal.points(), x0.points());
}

TEST(SimulateBatch, IndependentOfThreadCount) {
  Rng data(7);
  const SampleBatch x0(Mat::NullaryExpr(1000, 2, [&] { return data.normal(); }));
  const BatchDriftFn f = [](double t, const Mat& x) { return Mat(-x * t); };
  SimOptions one, many;
  many.threads = 3;
  Rng a(8), b(8);
  const SimResult r1 = simulate_batch(f, x0, 0.7, TimeGrid::forward(40), a, one);
  const SimResult r3 = simulate_batch(f, x0, 0.7, TimeGrid::forward(40), b, many);
  EXPECT_EQ(r1.terminal.points(), r3.terminal.points());
}

TEST(SimulateBatch, SnapshotsAndTrajectories) {
  Rng rng(9);
  Vec c = Vec::Constant(1, 2.0);
  SimOptions o;
  o.snapshot_steps = {0, 5, 10};
  o.keep_trajectories = true;
  const SimResult r = simulate_batch(constant_drift(c), SampleBatch(Mat::Zero(3, 1)), 0.0, TimeGrid::forward(10), rng, o);
  EXPECT_EQ(r.snapshots[0](0, 0), 0.0);
  EXPECT_NEAR(r.snapshots[1](2, 0), 1.0, 1e-12);
  EXPECT_NEAR(r.snapshots[2](1, 0), 2.0, 1e-12);
  ASSERT_EQ(r.trajectories.size(), 3u);
  EXPECT_EQ(r.trajectories[1].states.rows(), 11);
  o.snapshot_steps = {11};
  EXPECT_THROW(simulate_batch(constant_drift(c), SampleBatch(Mat::Zero(3, 1)), 0.0, TimeGrid::forward(10), rng, o),
               DomainError);
}

TEST(SimulateBatch, DoobBridgeHitsTarget) {
  ConditionalDrift d;
  d.kind = DriftKind::doob_forward;
  d.path = PinnedPathSpec::brownian_bridge(1.0);
  const Vec x0 = Vec::Constant(1, -1.0), x1 = Vec::Constant(1, 2.0);
  const BatchDriftFn f = [&](double t, const Mat& x) {
    Mat out(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r) out(r, 0) = eval_conditional_drift(d, x.row(r), x0, x1, t)[0];
    return out;
  };
  const int n = 10000, steps = 1000;
  Rng rng(10);
  const SimResult r = simulate_batch(f, SampleBatch(Mat::Constant(n, 1, -1.0)), 1.0, TimeGrid::forward(steps), rng);
  const Vec x = r.terminal.points().col(0);
  const double mean = x.mean();
  const double se = std::sqrt((x.array() - mean).square().sum() / (n - 1) / n);
  // Mean error of the scheme is at most |x1 - x0| dt; the state at t = 1 keeps
  // the noise of the last step (std sqrt(dt)).
  const double bias = 3.0 / steps;
  EXPECT_NEAR(mean, 2.0, 3.0 * (bias + se));
  EXPECT_LT(std::sqrt((x.array() - mean).square().mean()), 3.0 * std::sqrt(2.0 / steps));
}
