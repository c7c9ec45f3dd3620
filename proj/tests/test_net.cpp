#include <cmath>
#include <memory>
#include <sstream>

#include <gtest/gtest.h>

#include "bridgekit/eval.hpp"
#include "bridgekit/net.hpp"
#include "bridgekit/uba.hpp"

using namespace bridgekit;

namespace {

// Random parameters everywhere, including the (normally zero) output layer.
DriftNetwork random_net(int dim, std::vector<int> hidden, Activation act, std::uint64_t seed) {
  Rng rng(seed);
  DriftNetwork net = DriftNetwork::create(dim, hidden, act, rng);
  for (auto& w : net.params.W) w = Eigen::MatrixXd::NullaryExpr(w.rows(), w.cols(), [&] { return 0.7 * rng.normal(); });
  for (auto& b : net.params.b) b = Vec::NullaryExpr(b.size(), [&] { return 0.3 * rng.normal(); });
  return net;
}

double& param_at(MlpParams& p, std::size_t layer, bool bias, Eigen::Index k) {
  return bias ? p.b[layer][k] : p.W[layer].data()[k];
}

void check_gradients(Activation act) {
  const int d = 2;
  DriftNetwork net = random_net(d, {5, 4}, act, 17);
  Rng rng(18);
  const int n = 7;
  const Vec t = Vec::NullaryExpr(n, [&] { return rng.uniform(); });
  const Mat x = Mat::NullaryExpr(n, d, [&] { return rng.normal(); });
  const Mat y = Mat::NullaryExpr(n, d, [&] { return rng.normal(); });
  const LossAndGrad lg = loss_and_grad(net, t, x, y);
  const double h = 1e-5;
  int checked = 0;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    for (bool bias : {false, true}) {
      const Eigen::Index size = bias ? net.params.b[l].size() : net.params.W[l].size();
      for (Eigen::Index k = 0; k < size; ++k) {
        DriftNetwork plus = net, minus = net;
        param_at(plus.params, l, bias, k) += h;
        param_at(minus.params, l, bias, k) -= h;
        const double fd = (loss_and_grad(plus, t, x, y).loss - loss_and_grad(minus, t, x, y).loss) / (2.0 * h);
        MlpParams g = lg.grads;
        const double an = param_at(g, l, bias, k);
        const double scale = std::max(std::abs(fd), std::abs(an));
        if (scale < 1e-7)
          EXPECT_LT(std::abs(fd - an), 1e-9);
        else
          EXPECT_LT(std::abs(fd - an) / scale, 1e-4) << "layer " << l << (bias ? " b" : " W") << k;
        ++checked;
      }
    }
  }
  EXPECT_EQ(std::size_t(checked), net.params.count());
}

}  // namespace

TEST(Network, ZeroParametersGiveZeroOutput) {
  Rng rng(1);
  const DriftNetwork net = DriftNetwork::create(3, {8, 8}, Activation::silu, rng);
  EXPECT_EQ(net.layer_sizes, (std::vector<int>{4, 8, 8, 3}));
  Mat x = Mat::NullaryExpr(5, 3, [&] { return rng.normal(); });
  EXPECT_EQ(forward_batch(net, 0.3, x).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Network, SingleLinearLayer) {
  Rng rng(2);
  DriftNetwork net = DriftNetwork::create(2, {}, Activation::tanh, rng);
  ASSERT_EQ(net.num_layers(), 1u);
  net.params.W[0] << 0, 1, 0, 0, 0, 1;
  Vec x(2);
  x << -1.5, 2.25;
  EXPECT_EQ(forward(net, 0.8, x), x);
}

TEST(Network, CreateRejectsBadShapes) {
  Rng rng(3);
  EXPECT_THROW(DriftNetwork::create(0, {4}, Activation::tanh, rng), DomainError);
  EXPECT_THROW(DriftNetwork::create(2, {0}, Activation::tanh, rng), DomainError);
  const DriftNetwork net = DriftNetwork::create(2, {4}, Activation::tanh, rng);
  EXPECT_THROW(forward_batch(net, 0.5, Mat::Zero(3, 3)), ShapeError);
}

TEST(LossAndGrad, ExactFitHasZeroLossAndGradient) {
  const DriftNetwork net = random_net(2, {6}, Activation::silu, 4);
  Rng rng(5);
  const Vec t = Vec::NullaryExpr(9, [&] { return rng.uniform(); });
  const Mat x = Mat::NullaryExpr(9, 2, [&] { return rng.normal(); });
  const LossAndGrad lg = loss_and_grad(net, t, x, forward_batch(net, t, x));
  // forward_batch and the training pass round differently; residuals are ~1e-17.
  EXPECT_LT(lg.loss, 1e-30);
  for (const auto& w : lg.grads.W) EXPECT_LT(w.cwiseAbs().maxCoeff(), 1e-15);
  for (const auto& b : lg.grads.b) EXPECT_LT(b.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(LossAndGrad, MatchesFiniteDifferencesSilu) { check_gradients(Activation::silu); }

TEST(LossAndGrad, MatchesFiniteDifferencesTanh) { check_gradients(Activation::tanh); }

TEST(LossAndGrad, Errors) {
  const DriftNetwork net = random_net(1, {3}, Activation::tanh, 6);
  const Vec t = Vec::Constant(2, 0.5);
  const Mat x = Mat::Zero(2, 1);
  Mat y = Mat::Zero(2, 1);
  y(1, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(loss_and_grad(net, t, x, y), DataError);
  EXPECT_THROW(loss_and_grad(net, t, x, Mat::Zero(3, 1)), ShapeError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  DriftNetwork net = random_net(1, {3}, Activation::tanh, 7);
  const DriftNetwork before = net;
  AdamState st = AdamState::for_network(net);
  MlpParams g = net.params.zeros_like();
  g.W[0](1, 1) = 0.25;
  g.b[1][0] = -4.0;
  optimizer_step(net, st, g, 0.01);
  // m_hat = g and v_hat = g^2 after one step, so the update is lr * g / (|g| + eps).
  EXPECT_NEAR(net.params.W[0](1, 1), before.params.W[0](1, 1) - 0.01 * 0.25 / (0.25 + 1e-8), 1e-15);
  EXPECT_NEAR(net.params.b[1][0], before.params.b[1][0] + 0.01 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_EQ(net.params.W[0](0, 0), before.params.W[0](0, 0));
}

TEST(Adam, ZeroGradientsLeaveParametersUnchanged) {
  DriftNetwork net = random_net(2, {4, 4}, Activation::silu, 8);
  const MlpParams before = net.params;
  AdamState st = AdamState::for_network(net);
  for (int k = 0; k < 10; ++k) optimizer_step(net, st, net.params.zeros_like(), 0.1);
  EXPECT_TRUE(net.params == before);
}

TEST(Adam, LinearModelReachesLeastSquares) {
  // A hidden-layer-free network is an affine map of (t, x); Adam on the mean
  // squared error must reach the normal-equation solution.
  Rng rng(9);
  const int n = 64;
  const Vec t = Vec::NullaryExpr(n, [&] { return rng.uniform(); });
  const Mat x = Mat::NullaryExpr(n, 1, [&] { return rng.normal(); });
  Mat y(n, 1);
  for (int k = 0; k < n; ++k) y(k, 0) = 0.5 - 2.0 * t[k] + 1.5 * x(k, 0) + 0.1 * rng.normal();
  Eigen::MatrixXd design(n, 3);
  design.col(0).setOnes();
  design.col(1) = t;
  design.col(2) = x.col(0);
  const Vec beta = (design.transpose() * design).ldlt().solve(design.transpose() * y.col(0));

  Rng init(10);
  DriftNetwork net = DriftNetwork::create(1, {}, Activation::tanh, init);
  AdamState st = AdamState::for_network(net);
  for (int k = 0; k < 20000; ++k) optimizer_step(net, st, loss_and_grad(net, t, x, y).grads, k < 15000 ? 1e-2 : 1e-3);
  EXPECT_NEAR(net.params.b[0][0], beta[0], 1e-6);
  EXPECT_NEAR(net.params.W[0](0, 0), beta[1], 1e-6);
  EXPECT_NEAR(net.params.W[0](0, 1), beta[2], 1e-6);
}

TEST(CosineSchedule, EndpointsAndSharedSpan) {
  TrainOptions o;
  o.steps = 11;
  o.lr = 1e-2;
  o.lr_final = 1e-4;
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 0), 1e-2);
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 10), 1e-4);
  EXPECT_NEAR(scheduled_lr(o, 5), 0.5 * (1e-2 + 1e-4), 1e-15);
  o.schedule_total = 22;
  o.schedule_offset = 11;
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 10), 1e-4);
  o.lr_final = -1.0;
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 7), 1e-2);
}

namespace {

PairSource point_pairs(double a, double b) {
  Mat pa = Mat::Constant(1, 1, a), pb = Mat::Constant(1, 1, b);
  auto c = std::make_shared<const Coupling>(
      Coupling{SampleBatch(pa), SampleBatch(pb), {{0, 0, 1.0}}, CouplingKind::independent});
  return coupling_pair_source(c);
}

}  // namespace

TEST(TrainRegression, Deterministic) {
  auto train = [] {
    Rng init(11);
    DriftNetwork net = DriftNetwork::create(1, {16, 16}, Activation::silu, init);
    AdamState st = AdamState::for_network(net);
    ConditionalDrift d;
    d.kind = DriftKind::doob_forward;
    d.path = PinnedPathSpec::brownian_bridge(1.0);
    TrainOptions o;
    o.steps = 100;
    o.batch_size = 32;
    Rng rng(12);
    const TrainingLog log = train_regression(net, st, point_pairs(0.0, 1.0), d.path, d, o, rng);
    return std::make_pair(net.params, log.loss);
  };
  const auto a = train(), b = train();
  EXPECT_TRUE(a.first == b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(TrainRegression, LearnsZeroFunction) {
  DriftNetwork net = random_net(1, {16, 16}, Activation::silu, 13);
  AdamState st = AdamState::for_network(net);
  ConditionalDrift d;  // constant_line: target x1 - x0 = 0
  TrainOptions o;
  o.steps = 2000;
  o.batch_size = 64;
  o.lr = 3e-3;
  o.lr_final = 1e-5;
  Rng rng(14);
  const TrainingLog log = train_regression(net, st, point_pairs(0.0, 0.0), d.path, d, o, rng);
  EXPECT_LT(log.loss.back(), 1e-6);
  EXPECT_GT(log.loss.front(), 1e-3);
}

TEST(TrainRegression, PointPairMatchesOracle) {
  // Pinned bridge 0 -> 1: the regression target is deterministic in (t, x).
  Rng init(15);
  DriftNetwork net = DriftNetwork::create(1, {32, 32}, Activation::tanh, init);
  AdamState st = AdamState::for_network(net);
  ConditionalDrift d;
  d.kind = DriftKind::doob_forward;
  d.path = PinnedPathSpec::brownian_bridge(1.0);
  d.t_clip = 0.05;
  TrainOptions o;
  o.steps = 40000;
  o.batch_size = 256;
  o.lr = 3e-3;
  o.lr_final = 1e-5;
  Rng rng(16);
  train_regression(net, st, point_pairs(0.0, 1.0), d.path, d, o, rng);

  const Coupling c{SampleBatch(Mat::Zero(1, 1)), SampleBatch(Mat::Ones(1, 1)), {{0, 0, 1.0}}, CouplingKind::independent};
  double worst = 0.0;
  for (int k = 1; k <= 9; ++k) {
    const double t = 0.1 * k, g = std::sqrt(t * (1.0 - t));
    for (int j = -12; j <= 12; ++j) {
      const Vec x = Vec::Constant(1, t + 0.25 * j * g);
      worst = std::max(worst, std::abs(forward(net, t, x)[0] - marginal_drift_oracle(c, d.path, d, t, x)[0]));
    }
  }
  EXPECT_LT(worst, 0.05);
}

TEST(Serialization, RoundTripIsBitExact) {
  const DriftNetwork net = random_net(3, {7, 5}, Activation::tanh, 19);
  std::stringstream ss;
  write_network(ss, "forward", net);
  const std::string first = ss.str();
  const DriftNetwork back = read_network(ss, "forward");
  EXPECT_TRUE(back.params == net.params);
  EXPECT_EQ(back.layer_sizes, net.layer_sizes);
  EXPECT_EQ(back.activation, net.activation);
  std::stringstream again;
  write_network(again, "forward", back);
  EXPECT_EQ(again.str(), first);

  std::stringstream wrong(first);
  EXPECT_THROW(read_network(wrong, "reverse"), DataError);
  std::stringstream truncated(first.substr(0, first.size() / 2));
  EXPECT_THROW(read_network(truncated, "forward"), DataError);
}
