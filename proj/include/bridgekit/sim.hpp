#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "bridgekit/coupling.hpp"
#include "bridgekit/error.hpp"
#include "bridgekit/net.hpp"
#include "bridgekit/rng.hpp"
#include "bridgekit/types.hpp"

namespace bridgekit {

struct TimeGrid {
  static constexpr int kTrainSteps = 200;
  static constexpr int kEvalSteps = 1000;

  int n_steps = kEvalSteps;
  double t_start = 0.0;
  double t_end = 1.0;

  static TimeGrid forward(int n) { return {n, 0.0, 1.0}; }
  static TimeGrid reverse(int n) { return {n, 1.0, 0.0}; }

  void validate() const {
    if (n_steps <= 0) throw DomainError("time grid needs a positive number of steps");
    if (!(t_start >= 0.0 && t_start <= 1.0 && t_end >= 0.0 && t_end <= 1.0))
      throw DomainError("time grid endpoints must lie in [0, 1]");
    if (t_start == t_end) throw DomainError("time grid endpoints must differ");
  }

  // Signed step; negative for reverse-time grids.
  double dt() const { return (t_end - t_start) / double(n_steps); }
  double time(int k) const { return k == n_steps ? t_end : t_start + double(k) * dt(); }
  bool reversed() const { return t_end < t_start; }
};

struct Trajectory {
  Vec times;
  Mat states;  // (n_steps + 1) x d
};

// Per-state drift: v(t, x).
using DriftFn = std::function<Vec(double, const Vec&)>;
// Batched drift: row k of the result is v(t, x.row(k)).
using BatchDriftFn = std::function<Mat(double, const Mat&)>;

/// Euler-Maruyama on a uniform grid:
///   x_{k+1} = x_k + v(t_k, x_k) |dt| + sigma sqrt(|dt|) z_k.
/// On a reverse grid (t_end < t_start) the drift is the reverse-time drift,
/// i.e. the drift of the process in its own direction of travel.
inline Trajectory euler_maruyama(const DriftFn& drift, const Eigen::Ref<const Vec>& x_init, double sigma,
                                 const TimeGrid& grid, Rng& rng) {
  grid.validate();
  if (!(sigma >= 0.0)) throw DomainError("sigma must be >= 0");
  const Eigen::Index d = x_init.size();
  Trajectory tr{Vec(grid.n_steps + 1), Mat(grid.n_steps + 1, d)};
  const double h = std::abs(grid.dt());
  const double noise = sigma * std::sqrt(h);
  Vec x = x_init;
  tr.times[0] = grid.t_start;
  tr.states.row(0) = x.transpose();
  for (int k = 0; k < grid.n_steps; ++k) {
    const Vec f = drift(grid.time(k), x);
    if (f.size() != d) throw ShapeError("drift returned a vector of the wrong length");
    x += h * f;
    if (noise != 0.0)
      for (Eigen::Index c = 0; c < d; ++c) x[c] += noise * rng.normal();
    if (!x.allFinite()) throw IntegrationError("non-finite state", std::size_t(k + 1));
    tr.times[k + 1] = grid.time(k + 1);
    tr.states.row(k + 1) = x.transpose();
  }
  return tr;
}

struct SimOptions {
  int threads = 1;
  bool keep_trajectories = false;
  // Grid step indices whose states are copied into SimResult::snapshots.
  std::vector<int> snapshot_steps;
  // Called after each drift evaluation with (step, t, first_row, states, drift).
  // Rows of different calls never overlap, so per-row accumulation is race-free.
  std::function<void(int, double, std::size_t, const Mat&, const Mat&)> observer;
};

struct SimResult {
  SampleBatch terminal;
  std::vector<Trajectory> trajectories;
  std::vector<Mat> snapshots;
};

inline constexpr std::size_t kSimChunkRows = 256;

/// Vectorized Euler-Maruyama over the rows of `x_inits`.
///
/// Row r draws its noise from the substream keyed by (base seed, r), where the
/// base seed is one draw from `rng`. Rows are processed in fixed chunks of
/// kSimChunkRows, so results do not depend on the thread count.
inline SimResult simulate_batch(const BatchDriftFn& drift, const SampleBatch& x_inits, double sigma,
                                const TimeGrid& grid, Rng& rng, const SimOptions& opt = {}) {
  grid.validate();
  if (!(sigma >= 0.0)) throw DomainError("sigma must be >= 0");
  const Eigen::Index n = Eigen::Index(x_inits.size());
  const Eigen::Index d = x_inits.dim();
  const std::uint64_t base = rng.next_u64();
  const double h = std::abs(grid.dt());
  const double noise = sigma * std::sqrt(h);
  for (int s : opt.snapshot_steps)
    if (s < 0 || s > grid.n_steps) throw DomainError("snapshot step outside the grid");

  Mat terminal(n, d);
  SimResult res;
  if (opt.keep_trajectories) res.trajectories.resize(std::size_t(n));
  res.snapshots.assign(opt.snapshot_steps.size(), Mat(n, d));

  const std::size_t chunks = (std::size_t(n) + kSimChunkRows - 1) / kSimChunkRows;
  auto run_chunk = [&](std::size_t chunk) {
    const Eigen::Index r0 = Eigen::Index(chunk * kSimChunkRows);
    const Eigen::Index rows = std::min<Eigen::Index>(Eigen::Index(kSimChunkRows), n - r0);
    Mat x = x_inits.points().middleRows(r0, rows);
    std::vector<Rng> streams;
    streams.reserve(std::size_t(rows));
    for (Eigen::Index r = 0; r < rows; ++r) streams.emplace_back(mix_keys(base, {std::uint64_t(r0 + r)}));
    auto record = [&](int k) {
      for (std::size_t s = 0; s < opt.snapshot_steps.size(); ++s)
        if (opt.snapshot_steps[s] == k) res.snapshots[s].middleRows(r0, rows) = x;
      if (opt.keep_trajectories)
        for (Eigen::Index r = 0; r < rows; ++r) {
          auto& tr = res.trajectories[std::size_t(r0 + r)];
          if (k == 0) {
            tr.times.resize(grid.n_steps + 1);
            tr.states.resize(grid.n_steps + 1, d);
          }
          tr.times[k] = grid.time(k);
          tr.states.row(k) = x.row(r);
        }
    };
    record(0);
    for (int k = 0; k < grid.n_steps; ++k) {
      const double t = grid.time(k);
      Mat f = drift(t, x);
      if (f.rows() != rows || f.cols() != d) throw ShapeError("batched drift returned the wrong shape");
      if (!f.allFinite()) throw IntegrationError("non-finite drift", std::size_t(k));
      if (opt.observer) opt.observer(k, t, std::size_t(r0), x, f);
      x += h * f;
      if (noise != 0.0)
        for (Eigen::Index r = 0; r < rows; ++r)
          for (Eigen::Index c = 0; c < d; ++c) x(r, c) += noise * streams[std::size_t(r)].normal();
      if (!x.allFinite()) throw IntegrationError("non-finite state", std::size_t(k + 1));
      record(k + 1);
    }
    terminal.middleRows(r0, rows) = x;
  };

  const int threads = std::max(1, std::min<int>(opt.threads, int(chunks)));
  if (threads == 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    std::size_t next = 0;
    std::mutex next_mutex;
    for (int w = 0; w < threads; ++w)
      pool.emplace_back([&] {
        for (;;) {
          std::size_t c;
          {
            std::lock_guard lock(next_mutex);
            if (next >= chunks) return;
            c = next++;
          }
          try {
            run_chunk(c);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
  }
  res.terminal = SampleBatch(std::move(terminal));
  return res;
}

// Row-wise adapter for a per-state drift.
inline BatchDriftFn batch_drift(DriftFn f) {
  return [f = std::move(f)](double t, const Mat& x) {
    Mat out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) out.row(r) = f(t, x.row(r).transpose()).transpose();
    return out;
  };
}

inline BatchDriftFn network_drift(const DriftNetwork& net) {
  return [&net](double t, const Mat& x) { return forward_batch(net, t, x); };
}

enum class Direction { forward, reverse };

/// Simulates each source point to the opposite boundary under the network and
/// returns the diagonal coupling over the simulated (x0, x1) pairs.
/// Forward starts from pi0 samples (t: 0 -> 1); reverse from pi1 (t: 1 -> 0).
inline Coupling model_coupling(const DriftNetwork& net, const SampleBatch& source, double sigma, int n_steps,
                               Rng& rng, Direction direction, int threads = 1) {
  if (source.empty()) throw DomainError("model coupling needs a nonempty source batch");
  if (source.dim() != net.dim()) throw ShapeError("source dimension != network dimension");
  const TimeGrid grid = direction == Direction::forward ? TimeGrid::forward(n_steps) : TimeGrid::reverse(n_steps);
  SimOptions opt;
  opt.threads = threads;
  SimResult sim = simulate_batch(network_drift(net), source, sigma, grid, rng, opt);
  const SampleBatch start(source.points());
  Coupling c;
  c.kind = CouplingKind::model_induced;
  if (direction == Direction::forward) {
    c.batch0 = start;
    c.batch1 = std::move(sim.terminal);
  } else {
    c.batch0 = std::move(sim.terminal);
    c.batch1 = start;
  }
  const std::size_t n = source.size();
  c.entries.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) c.entries.push_back({i, i, 1.0 / double(n)});
  return c;
}

/// CSV with header `traj_id,t,x_0,...,x_{d-1}`.
inline void write_trajectories_csv(std::ostream& os, const std::vector<Trajectory>& trajectories) {
  const Eigen::Index d = trajectories.empty() ? 0 : trajectories.front().states.cols();
  os << "traj_id,t";
  for (Eigen::Index c = 0; c < d; ++c) os << ",x_" << c;
  os << '\n';
  for (std::size_t id = 0; id < trajectories.size(); ++id) {
    const auto& tr = trajectories[id];
    for (Eigen::Index k = 0; k < tr.times.size(); ++k) {
      os << id << ',' << format_real(tr.times[k]);
      for (Eigen::Index c = 0; c < tr.states.cols(); ++c) os << ',' << format_real(tr.states(k, c));
      os << '\n';
    }
  }
}

}  // namespace bridgekit
