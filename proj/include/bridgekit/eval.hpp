#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "bridgekit/core.hpp"
#include "bridgekit/coupling.hpp"
#include "bridgekit/data.hpp"
#include "bridgekit/error.hpp"
#include "bridgekit/net.hpp"
#include "bridgekit/rng.hpp"
#include "bridgekit/sim.hpp"
#include "bridgekit/types.hpp"

namespace bridgekit {

struct MetricRecord {
  std::string name;
  int iteration = 0;
  double value = 0.0;
  std::optional<double> std_error;
};

/// CSV with header `iteration,name,value,std_error`; a missing standard error is an empty field.
inline void write_metrics_csv(std::ostream& os, const std::vector<MetricRecord>& records) {
  os << "iteration,name,value,std_error\n";
  for (const auto& r : records) {
    os << r.iteration << ',' << r.name << ',' << format_real(r.value) << ',';
    if (r.std_error) os << format_real(*r.std_error);
    os << '\n';
  }
}

namespace detail {

// Mean Euclidean distance over all ordered pairs (i, j), i in a, j in b.
inline double mean_cross_distance(const Mat& a, const Mat& b) {
  const Eigen::Index d = a.cols();
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i).data();
    double row = 0.0;
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      const double* bj = b.row(j).data();
      double s = 0.0;
      for (Eigen::Index c = 0; c < d; ++c) {
        const double diff = ai[c] - bj[c];
        s += diff * diff;
      }
      row += std::sqrt(s);
    }
    total += row;
  }
  return total / (double(a.rows()) * double(b.rows()));
}

// Same as mean_cross_distance(a, a), summing each unordered pair once.
inline double mean_self_distance(const Mat& a) {
  const Eigen::Index d = a.cols();
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i).data();
    double row = 0.0;
    for (Eigen::Index j = i + 1; j < a.rows(); ++j) {
      const double* aj = a.row(j).data();
      double s = 0.0;
      for (Eigen::Index c = 0; c < d; ++c) {
        const double diff = ai[c] - aj[c];
        s += diff * diff;
      }
      row += std::sqrt(s);
    }
    total += row;
  }
  return 2.0 * total / (double(a.rows()) * double(a.rows()));
}

}  // namespace detail

/// V-statistic energy distance 2 E|A-B| - E|A-A'| - E|B-B'| by full double sums.
inline double energy_distance(const SampleBatch& a, const SampleBatch& b) {
  if (a.empty() || b.empty()) throw DomainError("energy distance needs nonempty batches");
  if (a.dim() != b.dim()) throw ShapeError("energy distance batches differ in dimension");
  const double ab = detail::mean_cross_distance(a.points(), b.points());
  const double aa = detail::mean_self_distance(a.points());
  const double bb = detail::mean_self_distance(b.points());
  return 2.0 * ab - aa - bb;
}

struct Baseline {
  double mean = 0.0;
  double std = 0.0;
  int repeats = 0;
  double threshold() const { return mean + 3.0 * std; }
};

inline constexpr int kBaselineRepeats = 20;

/// Energy distance between two disjoint same-size draws of `dist`, repeated.
inline Baseline same_distribution_baseline(const EndpointDistribution& dist, std::size_t n, Rng& rng,
                                           int repeats = kBaselineRepeats) {
  if (repeats < 2) throw DomainError("baseline needs at least two repeats");
  std::vector<double> v;
  for (int r = 0; r < repeats; ++r) {
    const SampleBatch a = sample(dist, n, rng);
    const SampleBatch b = sample(dist, n, rng);
    v.push_back(energy_distance(a, b));
  }
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= double(v.size() - 1);
  return {mean, std::sqrt(var), repeats};
}

/// Exact marginal drift u_t(x) = E[u_t(x | x0, x1) | x_t = x] for a discrete
/// coupling: responsibilities r_k ~ mass_k N(x; mu_t(pair_k), gamma_t^2 I),
/// computed in log space with max subtraction.
inline Vec marginal_drift_oracle(const Coupling& coupling, const PinnedPathSpec& pinned,
                                 const ConditionalDrift& drift, double t, const Eigen::Ref<const Vec>& x) {
  if (coupling.entries.size() > 10000) throw DomainError("oracle coupling support exceeds 10^4 pairs");
  if (coupling.entries.empty()) throw DomainError("oracle needs a nonempty coupling");
  detail::check_time(t);
  if (x.size() != coupling.batch0.dim()) throw ShapeError("query dimension mismatch");
  const double gamma = pinned.gamma(t);
  if (!(gamma > 0.0)) throw DomainError("oracle requires gamma_t > 0");
  const MeanWeights w = pinned.weights(t);
  const std::size_t k = coupling.entries.size();
  std::vector<double> logr(k);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < k; ++e) {
    const auto& ent = coupling.entries[e];
    if (ent.mass <= 0.0) {
      logr[e] = -std::numeric_limits<double>::infinity();
      continue;
    }
    const Vec mu = w.a * coupling.batch0.row(ent.i) + w.b * coupling.batch1.row(ent.j);
    logr[e] = std::log(ent.mass) - (x - mu).squaredNorm() / (2.0 * gamma * gamma);
    mx = std::max(mx, logr[e]);
  }
  if (!std::isfinite(mx)) throw DataError("density underflow: all responsibilities vanish");
  Vec out = Vec::Zero(x.size());
  double norm = 0.0;
  for (std::size_t e = 0; e < k; ++e) {
    const double r = std::exp(logr[e] - mx);
    if (r == 0.0) continue;
    const auto& ent = coupling.entries[e];
    out += r * eval_conditional_drift(drift, x, coupling.batch0.row(ent.i), coupling.batch1.row(ent.j), t);
    norm += r;
  }
  return out / norm;
}

struct GaussianEotOptions {
  int grid_points = 1024;
  double half_width_std = 6.0;
  double tol = 1e-10;
  int max_iter = 100000;
};

struct GaussianEotResult {
  double cov01 = 0.0;
  double mean0 = 0.0, mean1 = 0.0;
  double var0 = 0.0, var1 = 0.0;
  int iterations = 0;
  double correlation() const { return cov01 / std::sqrt(var0 * var1); }
};

/// Entropic-OT plan moments between N(mean0, var0) and N(mean1, var1) with
/// epsilon = 2 sigma_ref^2, from Sinkhorn on discretized marginals
/// (grid of +-half_width_std standard deviations, density weights).
inline GaussianEotResult gaussian_eot_oracle(double mean0, double var0, double mean1, double var1, double sigma_ref,
                                             const GaussianEotOptions& opt = {}) {
  if (!(var0 > 0.0) || !(var1 > 0.0)) throw DomainError("variances must be positive");
  if (opt.grid_points < 2) throw DomainError("grid needs at least two points");
  auto grid = [&](double mean, double var) {
    const double s = std::sqrt(var);
    const int n = opt.grid_points;
    Mat pts(n, 1);
    Vec w(n);
    for (int k = 0; k < n; ++k) {
      const double x = mean - opt.half_width_std * s + 2.0 * opt.half_width_std * s * double(k) / double(n - 1);
      pts(k, 0) = x;
      w[k] = std::exp(-0.5 * (x - mean) * (x - mean) / var);
    }
    w /= w.sum();
    return SampleBatch(std::move(pts), std::move(w));
  };
  const SampleBatch g0 = grid(mean0, var0), g1 = grid(mean1, var1);
  SinkhornOptions so;
  so.tol = opt.tol;
  so.max_iter = opt.max_iter;
  const SinkhornResult sr = sinkhorn_solve(g0, g1, sigma_ref, so);
  GaussianEotResult res;
  res.iterations = sr.iterations;
  const Vec w0 = g0.weights(), w1 = g1.weights();
  res.mean0 = w0.dot(g0.points().col(0));
  res.mean1 = w1.dot(g1.points().col(0));
  res.var0 = w0.dot((g0.points().col(0).array() - res.mean0).square().matrix());
  res.var1 = w1.dot((g1.points().col(0).array() - res.mean1).square().matrix());
  double cov = 0.0;
  for (const auto& e : sr.coupling.entries)
    cov += e.mass * (g0.points()(e.i, 0) - res.mean0) * (g1.points()(e.j, 0) - res.mean1);
  res.cov01 = cov;
  return res;
}

struct KineticEstimate {
  double value = 0.0;
  double std_error = 0.0;
  Vec per_path;  // per-trajectory sum of ||v||^2 dt / (2 sigma_ref^2)
};

/// Monte Carlo path kinetic energy of the learned SDE started at `source`:
/// mean over trajectories of sum_k ||v(t_k, x_k)||^2 |dt| / (2 sigma_ref^2).
/// The SDE is simulated with diffusion sigma_ref.
inline KineticEstimate path_kinetic_energy(const BatchDriftFn& drift, const SampleBatch& source, double sigma_ref,
                                           const TimeGrid& grid, Rng& rng, int threads = 1) {
  if (!(sigma_ref > 0.0)) throw DomainError("path kinetic energy requires sigma_ref > 0");
  const double h = std::abs(grid.dt());
  Vec acc = Vec::Zero(Eigen::Index(source.size()));
  SimOptions opt;
  opt.threads = threads;
  opt.observer = [&](int, double, std::size_t r0, const Mat&, const Mat& f) {
    for (Eigen::Index r = 0; r < f.rows(); ++r) acc[Eigen::Index(r0) + r] += f.row(r).squaredNorm() * h;
  };
  simulate_batch(drift, source, sigma_ref, grid, rng, opt);
  acc /= 2.0 * sigma_ref * sigma_ref;
  KineticEstimate est;
  const double n = double(acc.size());
  est.value = acc.mean();
  est.std_error = n > 1 ? std::sqrt((acc.array() - est.value).square().sum() / (n - 1.0) / n) : 0.0;
  est.per_path = std::move(acc);
  return est;
}

inline KineticEstimate path_kinetic_energy(const DriftNetwork& net, const SampleBatch& source, double sigma_ref,
                                           const TimeGrid& grid, Rng& rng, int threads = 1) {
  return path_kinetic_energy(network_drift(net), source, sigma_ref, grid, rng, threads);
}

/// Energy distance, at each t in `t_list`, between the SDE started at the
/// coupling's x0-marginal and direct samples of the mixture
/// P_t = E_Q[P_t(. | x0, x1)]. Records are named `ed_t<t>`.
inline std::vector<MetricRecord> marginal_check(const BatchDriftFn& drift, const PinnedPathSpec& pinned,
                                                const Coupling& coupling, double sigma,
                                                const std::vector<double>& t_list, std::size_t n, Rng& rng,
                                                int n_steps = TimeGrid::kEvalSteps, int iteration = 0) {
  const PairSampler sampler(coupling);
  const int d = coupling.batch0.dim();
  Mat start(Eigen::Index(n), d);
  for (Eigen::Index r = 0; r < Eigen::Index(n); ++r) start.row(r) = coupling.batch0.points().row(sampler.draw(rng).i);
  const TimeGrid grid = TimeGrid::forward(n_steps);
  SimOptions opt;
  for (double t : t_list) {
    detail::check_time(t);
    opt.snapshot_steps.push_back(int(std::lround(t * n_steps)));
  }
  const SimResult sim = simulate_batch(drift, SampleBatch(start), sigma, grid, rng, opt);
  std::vector<MetricRecord> out;
  for (std::size_t s = 0; s < t_list.size(); ++s) {
    const double t = grid.time(opt.snapshot_steps[s]);
    Mat ref(Eigen::Index(n), d);
    for (Eigen::Index r = 0; r < Eigen::Index(n); ++r) {
      const auto& e = sampler.draw(rng);
      ref.row(r) = sample_pinned(pinned, coupling.batch0.row(e.i), coupling.batch1.row(e.j), t, rng).transpose();
    }
    out.push_back({"ed_t" + format_real(t_list[s]), iteration,
                   energy_distance(SampleBatch(sim.snapshots[s]), SampleBatch(std::move(ref))), std::nullopt});
  }
  return out;
}

inline std::vector<MetricRecord> marginal_check(const DriftNetwork& net, const PinnedPathSpec& pinned,
                                                const Coupling& coupling, double sigma,
                                                const std::vector<double>& t_list, std::size_t n, Rng& rng,
                                                int n_steps = TimeGrid::kEvalSteps, int iteration = 0) {
  return marginal_check(network_drift(net), pinned, coupling, sigma, t_list, n, rng, n_steps, iteration);
}

}  // namespace bridgekit
