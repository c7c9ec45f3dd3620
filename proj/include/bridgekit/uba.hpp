#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bridgekit/core.hpp"
#include "bridgekit/coupling.hpp"
#include "bridgekit/data.hpp"
#include "bridgekit/error.hpp"
#include "bridgekit/eval.hpp"
#include "bridgekit/net.hpp"
#include "bridgekit/rng.hpp"
#include "bridgekit/sim.hpp"
#include "bridgekit/types.hpp"

namespace bridgekit {

enum class Instantiation { cfm_independent, ot_cfm, sb_cfm, imf, dsbm };

inline std::string_view to_string(Instantiation k) {
  switch (k) {
    case Instantiation::cfm_independent: return "cfm_independent";
    case Instantiation::ot_cfm: return "ot_cfm";
    case Instantiation::sb_cfm: return "sb_cfm";
    case Instantiation::imf: return "imf";
    case Instantiation::dsbm: return "dsbm";
  }
  return "?";
}

inline Instantiation parse_instantiation(std::string_view s) {
  if (s == "cfm_independent") return Instantiation::cfm_independent;
  if (s == "ot_cfm") return Instantiation::ot_cfm;
  if (s == "sb_cfm") return Instantiation::sb_cfm;
  if (s == "imf") return Instantiation::imf;
  if (s == "dsbm") return Instantiation::dsbm;
  throw ConfigError("unknown instantiation '" + std::string(s) + "'");
}

// How often mini-batch couplings (ot_cfm, sb_cfm) are recomputed.
enum class CouplingRefresh { per_step, per_outer };

inline std::string_view to_string(CouplingRefresh r) {
  return r == CouplingRefresh::per_step ? "per_step" : "per_outer";
}

inline CouplingRefresh parse_refresh(std::string_view s) {
  if (s == "per_step") return CouplingRefresh::per_step;
  if (s == "per_outer") return CouplingRefresh::per_outer;
  throw ConfigError("unknown coupling refresh '" + std::string(s) + "'");
}

struct UbaConfig {
  Instantiation instantiation = Instantiation::imf;
  int outer_iters = 10;
  int inner_steps = 5000;
  int batch_size = 256;
  double lr = 1e-3;
  double lr_final = -1.0;  // negative: constant learning rate
  std::vector<int> hidden = DriftNetwork::kDefaultHidden;
  Activation activation = Activation::silu;
  DiffusionConfig diffusion;
  // Overrides of the instantiation's pinned path and conditional drift.
  std::optional<PathKind> path_kind;
  std::optional<DriftKind> drift_kind;
  double sigma_min = PinnedPathSpec::kDefaultSigmaMin;
  double t_clip = ConditionalDrift::kDefaultTClip;
  CouplingRefresh refresh = CouplingRefresh::per_step;
  std::size_t pool_n = 0;  // 0: 10 * batch_size * sqrt(inner_steps)
  double sinkhorn_tol = 1e-9;
  int sinkhorn_max_iter = 10000;
  int train_sim_steps = TimeGrid::kTrainSteps;
  int eval_sim_steps = TimeGrid::kEvalSteps;
  std::size_t data_n = 10000;  // fresh endpoint samples per outer iteration
  std::size_t eval_n = 4096;
  int eval_every = 1;  // 0 disables per-iteration evaluation
  int baseline_repeats = kBaselineRepeats;
  std::uint64_t seed = 0;
  int threads = 1;

  PathKind effective_path_kind() const {
    if (path_kind) return *path_kind;
    switch (instantiation) {
      case Instantiation::cfm_independent:
      case Instantiation::ot_cfm: return PathKind::linear_sigma_min;
      default: return PathKind::brownian_bridge;
    }
  }

  DriftKind effective_drift_kind() const {
    if (drift_kind) return *drift_kind;
    switch (instantiation) {
      case Instantiation::cfm_independent:
      case Instantiation::ot_cfm: return DriftKind::constant_line;
      case Instantiation::sb_cfm: return DriftKind::sb_bridge;
      default: return DriftKind::doob_forward;
    }
  }

  PinnedPathSpec pinned_path() const {
    return effective_path_kind() == PathKind::linear_sigma_min ? PinnedPathSpec::linear(sigma_min)
                                                                : PinnedPathSpec::brownian_bridge(diffusion.sigma_ref);
  }

  ConditionalDrift conditional_drift(DriftKind kind) const {
    ConditionalDrift d;
    d.kind = kind;
    d.path = pinned_path();
    d.sigma_ref = diffusion.sigma_ref;
    d.t_clip = t_clip;
    return d;
  }

  ConditionalDrift conditional_drift() const { return conditional_drift(effective_drift_kind()); }

  std::size_t effective_pool_n() const {
    if (pool_n > 0) return pool_n;
    return std::size_t(10.0 * double(batch_size) * std::sqrt(double(std::max(inner_steps, 1))));
  }

  void validate() const {
    diffusion.validate();
    if (outer_iters < 0) throw ConfigError("outer_iters must be >= 0");
    if (inner_steps < 0) throw ConfigError("inner_steps must be >= 0");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(t_clip > 0.0 && t_clip < 0.5)) throw ConfigError("t_clip must lie in (0, 0.5)");
    if (train_sim_steps <= 0 || eval_sim_steps <= 0) throw ConfigError("simulation steps must be positive");
    if (data_n == 0) throw ConfigError("data_n must be positive");
    if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
    if (eval_every > 0 && eval_n < 2) throw ConfigError("eval_n must be at least 2");
    if (threads <= 0) throw ConfigError("threads must be positive");
    if (path_kind == PathKind::custom_schedule) throw ConfigError("custom schedules are not configurable from data");

    const double sigma = diffusion.sigma, sigma_ref = diffusion.sigma_ref;
    const DriftKind dk = effective_drift_kind();
    const PathKind pk = effective_path_kind();
    const std::string name(to_string(instantiation));
    auto rule = [&](const std::string& what) {
      return ConfigError("sigma-consistency rule violated: " + what);
    };
    switch (instantiation) {
      case Instantiation::ot_cfm:
      case Instantiation::sb_cfm:
        if (sigma != 0.0) throw rule(name + " is an ODE bridge and requires sigma == 0");
        if (dk != (instantiation == Instantiation::ot_cfm ? DriftKind::constant_line : DriftKind::sb_bridge))
          throw ConfigError(name + " does not accept a drift override");
        if (instantiation == Instantiation::sb_cfm && !(sigma_ref > 0.0))
          throw ConfigError("sb_cfm requires sigma_ref > 0 (entropic regularization 2 sigma_ref^2)");
        if (instantiation == Instantiation::sb_cfm && pk != PathKind::brownian_bridge)
          throw ConfigError("sb_cfm requires the brownian_bridge path");
        break;
      case Instantiation::imf:
      case Instantiation::dsbm:
        if (!(sigma_ref > 0.0) || sigma != sigma_ref)
          throw rule(name + " requires sigma == sigma_ref > 0");
        if (pk != PathKind::brownian_bridge) throw ConfigError(name + " requires the brownian_bridge path");
        if (dk != DriftKind::doob_forward && dk != DriftKind::kinetic)
          throw ConfigError(name + " requires the doob_forward (or equivalent kinetic) drift");
        break;
      case Instantiation::cfm_independent:
        if (drift_requires_ode(dk) && sigma != 0.0)
          throw rule(std::string(to_string(dk)) + " drift requires sigma == 0");
        if (!drift_requires_ode(dk) && (!(sigma_ref > 0.0) || sigma != sigma_ref))
          throw rule(std::string(to_string(dk)) + " drift requires sigma == sigma_ref > 0");
        if (dk == DriftKind::doob_reverse) throw ConfigError("cfm_independent trains forward-time drifts only");
        if ((dk == DriftKind::sb_bridge || !drift_requires_ode(dk)) && pk != PathKind::brownian_bridge)
          throw ConfigError(std::string(to_string(dk)) + " drift requires the brownian_bridge path");
        break;
    }
  }
};

struct UbaState {
  DriftNetwork forward;
  AdamState forward_opt;
  std::optional<DriftNetwork> reverse;  // dsbm only
  std::optional<AdamState> reverse_opt;
  int iteration = 0;
  std::string coupling_source = "none";
  std::vector<TrainingLog> logs;
};

namespace uba_streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kTrain = 2;
inline constexpr std::uint64_t kData = 3;
inline constexpr std::uint64_t kEval = 4;
inline constexpr std::uint64_t kReverseInit = 5;
}  // namespace uba_streams

inline UbaState init_state(const UbaConfig& config) {
  Rng root(config.seed);
  Rng init = root.substream(uba_streams::kInit);
  UbaState s;
  s.forward = DriftNetwork::create(config.diffusion.dim, config.hidden, config.activation, init);
  s.forward_opt = AdamState::for_network(s.forward);
  return s;
}

/// Independent pairs: x0 and x1 rows drawn uniformly and independently.
inline PairSource independent_pair_source(const SampleBatch& data0, const SampleBatch& data1) {
  return [&data0, &data1](std::size_t n, Rng& rng, Mat& x0, Mat& x1) {
    x0.resize(Eigen::Index(n), data0.dim());
    x1.resize(Eigen::Index(n), data1.dim());
    for (Eigen::Index k = 0; k < Eigen::Index(n); ++k) {
      x0.row(k) = data0.points().row(Eigen::Index(rng.uniform_int(data0.size())));
      x1.row(k) = data1.points().row(Eigen::Index(rng.uniform_int(data1.size())));
    }
  };
}

/// Pairs drawn from a fixed coupling.
inline PairSource coupling_pair_source(std::shared_ptr<const Coupling> coupling) {
  auto sampler = std::make_shared<PairSampler>(*coupling);
  return [coupling, sampler](std::size_t n, Rng& rng, Mat& x0, Mat& x1) {
    const int d = coupling->batch0.dim();
    x0.resize(Eigen::Index(n), d);
    x1.resize(Eigen::Index(n), d);
    for (Eigen::Index k = 0; k < Eigen::Index(n); ++k) {
      const auto& e = sampler->draw(rng);
      x0.row(k) = coupling->batch0.points().row(e.i);
      x1.row(k) = coupling->batch1.points().row(e.j);
    }
  };
}

namespace detail {

inline SampleBatch draw_minibatch(const SampleBatch& data, std::size_t n, Rng& rng) {
  Mat m(Eigen::Index(n), data.dim());
  for (Eigen::Index k = 0; k < Eigen::Index(n); ++k)
    m.row(k) = data.points().row(Eigen::Index(rng.uniform_int(data.size())));
  return SampleBatch(std::move(m));
}

inline Coupling minibatch_coupling(const UbaConfig& config, const SampleBatch& b0, const SampleBatch& b1) {
  if (config.instantiation == Instantiation::ot_cfm) return exact_ot_coupling(b0, b1);
  return sinkhorn_coupling(b0, b1, config.diffusion.sigma_ref, config.sinkhorn_tol, config.sinkhorn_max_iter);
}

}  // namespace detail

/// Mini-batch OT / entropic-OT pairs: fresh mini-batches from both pools,
/// a plan on them, then pairs drawn from the plan.
inline PairSource minibatch_pair_source(const UbaConfig& config, const SampleBatch& data0, const SampleBatch& data1) {
  return [&config, &data0, &data1](std::size_t n, Rng& rng, Mat& x0, Mat& x1) {
    const SampleBatch b0 = detail::draw_minibatch(data0, n, rng);
    const SampleBatch b1 = detail::draw_minibatch(data1, n, rng);
    const Coupling c = detail::minibatch_coupling(config, b0, b1);
    PointPairs p = sample_pairs(c, n, rng);
    x0 = std::move(p.x0);
    x1 = std::move(p.x1);
  };
}

// The learning-rate schedule spans all outer iterations.
inline TrainOptions train_options(const UbaConfig& config, int iteration = 0) {
  TrainOptions opt;
  opt.steps = config.inner_steps;
  opt.batch_size = config.batch_size;
  opt.lr = config.lr;
  opt.lr_final = config.lr_final;
  opt.schedule_offset = iteration * config.inner_steps;
  opt.schedule_total = std::max(1, config.outer_iters) * config.inner_steps;
  return opt;
}

/// One outer iteration: choose Q and the pinned path, choose (sigma, u_t),
/// then regress the network onto u_t for `inner_steps` steps.
inline void uba_iteration(UbaState& state, const UbaConfig& config, const SampleBatch& data0,
                          const SampleBatch& data1, Rng& rng) {
  config.validate();
  if (data0.dim() != config.diffusion.dim || data1.dim() != config.diffusion.dim)
    throw ShapeError("data dimension does not match the configuration");
  const PinnedPathSpec pinned = config.pinned_path();
  const double sigma = config.diffusion.sigma;
  const TrainOptions opt = train_options(config, state.iteration);

  auto model_pool = [&](const DriftNetwork& net, const SampleBatch& data, Direction dir) {
    const std::size_t pool = config.effective_pool_n();
    const SampleBatch source = detail::draw_minibatch(data, pool, rng);
    return std::make_shared<const Coupling>(
        model_coupling(net, source, sigma, config.train_sim_steps, rng, dir, config.threads));
  };

  PairSource pairs;
  std::shared_ptr<const Coupling> fixed;
  bool train_reverse = false;
  switch (config.instantiation) {
    case Instantiation::cfm_independent:
      pairs = independent_pair_source(data0, data1);
      state.coupling_source = "independent";
      break;
    case Instantiation::ot_cfm:
    case Instantiation::sb_cfm:
      if (config.refresh == CouplingRefresh::per_step) {
        pairs = minibatch_pair_source(config, data0, data1);
      } else {
        const SampleBatch b0 = detail::draw_minibatch(data0, std::size_t(config.batch_size), rng);
        const SampleBatch b1 = detail::draw_minibatch(data1, std::size_t(config.batch_size), rng);
        fixed = std::make_shared<const Coupling>(detail::minibatch_coupling(config, b0, b1));
        pairs = coupling_pair_source(fixed);
      }
      state.coupling_source = config.instantiation == Instantiation::ot_cfm ? "exact_ot" : "entropic_ot";
      break;
    case Instantiation::imf:
      if (state.iteration == 0) {
        pairs = independent_pair_source(data0, data1);
        state.coupling_source = "independent";
      } else {
        fixed = model_pool(state.forward, data0, Direction::forward);
        pairs = coupling_pair_source(fixed);
        state.coupling_source = "model_forward";
      }
      break;
    case Instantiation::dsbm:
      if (state.iteration == 0) {
        pairs = independent_pair_source(data0, data1);
        state.coupling_source = "independent";
      } else if (state.iteration % 2 == 1) {
        fixed = model_pool(state.forward, data0, Direction::forward);
        pairs = coupling_pair_source(fixed);
        state.coupling_source = "model_forward";
        train_reverse = true;
      } else {
        fixed = model_pool(*state.reverse, data1, Direction::reverse);
        pairs = coupling_pair_source(fixed);
        state.coupling_source = "model_reverse";
      }
      break;
  }

  if (train_reverse) {
    if (!state.reverse) {
      Rng init = Rng(config.seed).substream(uba_streams::kReverseInit);
      state.reverse = DriftNetwork::create(config.diffusion.dim, config.hidden, config.activation, init);
      state.reverse_opt = AdamState::for_network(*state.reverse);
    }
    const ConditionalDrift drift = config.conditional_drift(DriftKind::doob_reverse);
    state.logs.push_back(train_regression(*state.reverse, *state.reverse_opt, pairs, pinned, drift, opt, rng));
  } else {
    state.logs.push_back(
        train_regression(state.forward, state.forward_opt, pairs, pinned, config.conditional_drift(), opt, rng));
  }
  ++state.iteration;
}

struct UbaRunResult {
  UbaState state;
  std::vector<MetricRecord> history;
};

namespace detail {

inline double sample_covariance(const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Vec>& b) {
  const double ma = a.mean(), mb = b.mean();
  return ((a.array() - ma) * (b.array() - mb)).sum() / double(a.size() - 1);
}

}  // namespace detail

/// Runs `outer_iters` iterations with fresh endpoint pools each time and
/// records metrics after every `eval_every`-th iteration. Evaluation reuses the
/// same source/target samples and noise stream at every iteration.
///
/// Metrics: train_loss (mean of the last 100 losses), ed_terminal,
/// ed_baseline (std_error = baseline std), terminal_mean_<c>, terminal_var_<c>,
/// and coupling_cov in one dimension.
inline UbaRunResult run(const UbaConfig& config, const EndpointDistribution& dist0, const EndpointDistribution& dist1) {
  config.validate();
  if (dist0.dim != config.diffusion.dim || dist1.dim != config.diffusion.dim)
    throw ConfigError("endpoint distribution dimension does not match diffusion.dim");
  const Rng root(config.seed);
  Rng train = root.substream(uba_streams::kTrain);
  Rng data = root.substream(uba_streams::kData);
  const Rng eval = root.substream(uba_streams::kEval);

  UbaRunResult out{init_state(config), {}};
  const bool evaluate = config.eval_every > 0 && config.outer_iters > 0;
  SampleBatch eval_source, eval_target;
  Baseline baseline;
  if (evaluate) {
    Rng s0 = eval.substream(0), s1 = eval.substream(1), s2 = eval.substream(2);
    eval_source = sample(dist0, config.eval_n, s0);
    eval_target = sample(dist1, config.eval_n, s1);
    baseline = same_distribution_baseline(dist1, config.eval_n, s2, config.baseline_repeats);
  }
  for (int it = 0; it < config.outer_iters; ++it) {
    const SampleBatch data0 = sample(dist0, config.data_n, data);
    const SampleBatch data1 = sample(dist1, config.data_n, data);
    uba_iteration(out.state, config, data0, data1, train);
    auto& h = out.history;
    h.push_back({"train_loss", it, out.state.logs.back().trailing_mean(100), std::nullopt});
    if (!evaluate || ((it + 1) % config.eval_every != 0 && it + 1 != config.outer_iters)) continue;
    Rng noise = eval.substream(3);
    SimOptions so;
    so.threads = config.threads;
    const SimResult sim = simulate_batch(network_drift(out.state.forward), eval_source, config.diffusion.sigma,
                                         TimeGrid::forward(config.eval_sim_steps), noise, so);
    h.push_back({"ed_terminal", it, energy_distance(sim.terminal, eval_target), std::nullopt});
    h.push_back({"ed_baseline", it, baseline.mean, baseline.std});
    const Mat& term = sim.terminal.points();
    for (Eigen::Index c = 0; c < term.cols(); ++c) {
      const Vec col = term.col(c);
      h.push_back({"terminal_mean_" + std::to_string(c), it, col.mean(), std::nullopt});
      h.push_back({"terminal_var_" + std::to_string(c), it, detail::sample_covariance(col, col), std::nullopt});
    }
    if (term.cols() == 1)
      h.push_back({"coupling_cov", it, detail::sample_covariance(eval_source.points().col(0), term.col(0)),
                   std::nullopt});
  }
  return out;
}

}  // namespace bridgekit
