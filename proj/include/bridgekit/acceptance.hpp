#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "bridgekit/core.hpp"
#include "bridgekit/coupling.hpp"
#include "bridgekit/data.hpp"
#include "bridgekit/eval.hpp"
#include "bridgekit/net.hpp"
#include "bridgekit/rng.hpp"
#include "bridgekit/sim.hpp"
#include "bridgekit/uba.hpp"

namespace bridgekit::acceptance {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

// ---------------------------------------------------------------------------
// 1. kinetic drift with Brownian-bridge schedules == (x1 - x) / (1 - t)
// ---------------------------------------------------------------------------

using DoobFn = std::function<Vec(const Vec& x, const Vec& x0, const Vec& x1, double t)>;

inline DoobFn library_doob_forward() {
  ConditionalDrift d;
  d.kind = DriftKind::doob_forward;
  d.path = PinnedPathSpec::brownian_bridge(1.0);
  return [d](const Vec& x, const Vec& x0, const Vec& x1, double t) { return eval_conditional_drift(d, x, x0, x1, t); };
}

struct IdentityReport {
  double max_error = 0.0;
  std::size_t n = 0;
  bool passed() const { return max_error < 1e-9; }
};

inline IdentityReport kinetic_doob_identity(const DoobFn& doob, std::size_t n = 10000, std::uint64_t seed = 101) {
  const double sigma_ref = 1.0;
  const MeanSchedule mean = linear_mean_schedule();
  const StdSchedule std_schedule = brownian_bridge_std_schedule(sigma_ref);
  Rng rng(seed);
  IdentityReport rep;
  rep.n = n;
  for (std::size_t k = 0; k < n; ++k) {
    Vec x(2), x0(2), x1(2);
    for (int c = 0; c < 2; ++c) {
      x0[c] = 2.0 * rng.normal();
      x1[c] = 2.0 * rng.normal();
      x[c] = 2.0 * rng.normal();
    }
    const double t = rng.uniform(0.01, 0.99);
    const Vec kin = kinetic_drift(mean, std_schedule, sigma_ref, x, x0, x1, t);
    rep.max_error = std::max(rep.max_error, (kin - doob(x, x0, x1, t)).cwiseAbs().maxCoeff());
  }
  return rep;
}

inline CriterionResult criterion_1() {
  const IdentityReport rep = kinetic_doob_identity(library_doob_forward());
  return {1, "kinetic/Doob drift identity", rep.passed(),
          fmt::format("max |err| = {:.3e} over {} inputs (tol 1e-9)", rep.max_error, rep.n)};
}

// ---------------------------------------------------------------------------
// 2. Euler-Maruyama under the Doob drift reproduces the pinned marginals
// ---------------------------------------------------------------------------

inline CriterionResult criterion_2() {
  const std::size_t n = 10000;
  const int steps = 1000;
  ConditionalDrift drift;
  drift.kind = DriftKind::doob_forward;
  drift.path = PinnedPathSpec::brownian_bridge(1.0);
  const double x0 = 0.0, x1 = 2.0;
  BatchDriftFn f = [&](double t, const Mat& x) {
    Mat out(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      detail::conditional_drift_raw(drift, &x(r, 0), &x0, &x1, 1, t, &out(r, 0), nullptr);
    return out;
  };
  SimOptions opt;
  const std::vector<double> times{0.25, 0.5, 0.75};
  for (double t : times) opt.snapshot_steps.push_back(int(std::lround(t * steps)));
  Rng rng(202);
  const SimResult sim = simulate_batch(f, SampleBatch(Mat::Constant(Eigen::Index(n), 1, x0)), 1.0,
                                       TimeGrid::forward(steps), rng, opt);
  bool ok = true;
  std::string detail;
  for (std::size_t s = 0; s < times.size(); ++s) {
    const double t = times[s];
    const Vec col = sim.snapshots[s].col(0);
    const double m = col.mean();
    const double v = (col.array() - m).square().sum() / double(n - 1);
    const double want_m = (1.0 - t) * x0 + t * x1, want_v = t * (1.0 - t);
    const double se_m = std::sqrt(v / double(n));
    const double se_v = v * std::sqrt(2.0 / double(n - 1));
    const bool pass = std::abs(m - want_m) <= 3.0 * se_m && std::abs(v - want_v) <= 3.0 * se_v + 0.01;
    ok = ok && pass;
    detail += fmt::format("{}t={}: mean {:.4f} (want {:.4f}, 3SE {:.4f}) var {:.4f} (want {:.4f}, tol {:.4f})",
                          s ? "; " : "", t, m, want_m, 3.0 * se_m, v, want_v, 3.0 * se_v + 0.01);
  }
  return {2, "conditional marginal preservation", ok, detail};
}

// ---------------------------------------------------------------------------
// 3. regression onto Doob targets recovers the exact marginal drift
// ---------------------------------------------------------------------------

struct RegressionSetup {
  Coupling coupling;
  PinnedPathSpec pinned = PinnedPathSpec::brownian_bridge(1.0);
  ConditionalDrift drift;
  std::vector<double> t_grid;
  double x_step = 0.05;
  double min_density = 1e-3;  // relative to the maximum of the mixture density at each t
};

inline RegressionSetup regression_setup() {
  RegressionSetup s;
  Mat a(3, 1), b(3, 1);
  a << -0.4, 0.0, 0.4;
  b << 0.4, -0.4, 0.0;
  s.coupling.batch0 = SampleBatch(a);
  s.coupling.batch1 = SampleBatch(b);
  s.coupling.kind = CouplingKind::independent;
  s.coupling.entries = {{0, 0, 0.3}, {1, 1, 0.3}, {2, 2, 0.4}};
  s.drift.kind = DriftKind::doob_forward;
  s.drift.path = s.pinned;
  for (int k = 1; k <= 9; ++k) s.t_grid.push_back(0.1 * k);
  return s;
}

struct GridPoint {
  double t, x;
};

// Points of the (t, x) grid where the pinned mixture density is at least
// min_density times its maximum over x at that t.
inline std::vector<GridPoint> regression_grid(const RegressionSetup& s) {
  std::vector<GridPoint> out;
  const Mat& x0 = s.coupling.batch0.points();
  const Mat& x1 = s.coupling.batch1.points();
  for (double t : s.t_grid) {
    const MeanWeights w = s.pinned.weights(t);
    const double g = s.pinned.gamma(t);
    auto density = [&](double x) {
      double p = 0.0;
      for (const auto& e : s.coupling.entries) {
        const double z = (x - (w.a * x0(e.i, 0) + w.b * x1(e.j, 0))) / g;
        p += e.mass * std::exp(-0.5 * z * z);
      }
      return p;
    };
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& e : s.coupling.entries) {
      const double mu = w.a * x0(e.i, 0) + w.b * x1(e.j, 0);
      lo = std::min(lo, mu - 5.0 * g);
      hi = std::max(hi, mu + 5.0 * g);
    }
    std::vector<GridPoint> row;
    double peak = 0.0;
    for (double x = std::floor(lo / s.x_step) * s.x_step; x <= hi; x += s.x_step) {
      row.push_back({t, x});
      peak = std::max(peak, density(x));
    }
    for (const auto& p : row)
      if (density(p.x) >= s.min_density * peak) out.push_back(p);
  }
  return out;
}

struct RegressionError {
  double max_error = 0.0;
  GridPoint worst{0.0, 0.0};
  std::size_t points = 0;
};

inline RegressionError regression_error(const DriftNetwork& net, const RegressionSetup& s) {
  RegressionError r;
  for (const GridPoint& p : regression_grid(s)) {
    const Vec x = Vec::Constant(1, p.x);
    const double err = std::abs(forward(net, p.t, x)[0] - marginal_drift_oracle(s.coupling, s.pinned, s.drift, p.t, x)[0]);
    if (err > r.max_error) r = {err, p, r.points};
    ++r.points;
  }
  return r;
}

struct RegressionTraining {
  std::vector<int> hidden{64, 64};
  Activation activation = Activation::tanh;
  double t_clip = 0.05;
  int steps = 20000;
  int batch_size = 1024;
  double lr = 1e-2;
  double lr_final = 1e-5;
};

inline DriftNetwork train_regression_net(const RegressionSetup& s, const RegressionTraining& tr, std::uint64_t seed) {
  Rng init = Rng(seed).substream(uba_streams::kInit);
  DriftNetwork net = DriftNetwork::create(1, tr.hidden, tr.activation, init);
  AdamState adam = AdamState::for_network(net);
  auto shared = std::make_shared<const Coupling>(s.coupling);
  TrainOptions opt;
  opt.steps = tr.steps;
  opt.batch_size = tr.batch_size;
  opt.lr = tr.lr;
  opt.lr_final = tr.lr_final;
  Rng rng = Rng(seed).substream(uba_streams::kTrain);
  ConditionalDrift drift = s.drift;
  drift.t_clip = tr.t_clip;
  train_regression(net, adam, coupling_pair_source(shared), s.pinned, drift, opt, rng);
  return net;
}

inline CriterionResult criterion_3() {
  const RegressionSetup s = regression_setup();
  const DriftNetwork net = train_regression_net(s, RegressionTraining{}, 303);
  const RegressionError e = regression_error(net, s);
  return {3, "regression matches the marginal-drift oracle", e.max_error < 0.05,
          fmt::format("max |v - oracle| = {:.4f} at (t={:.1f}, x={:.2f}) over {} grid points (tol 0.05)", e.max_error,
                      e.worst.t, e.worst.x, e.points)};
}

// ---------------------------------------------------------------------------
// 4. Sinkhorn
// ---------------------------------------------------------------------------

inline CriterionResult criterion_4() {
  std::vector<std::string> notes;
  bool ok = true;
  // Random problem: marginal violation.
  {
    Rng rng(404);
    const SampleBatch a(Mat::NullaryExpr(40, 2, [&] { return rng.normal(); }));
    const SampleBatch b(Mat::NullaryExpr(30, 2, [&] { return 1.0 + rng.normal(); }));
    SinkhornOptions so;
    so.tol = 1e-12;
    const SinkhornResult r = sinkhorn_solve(a, b, 1.0, so);
    const double viol = r.coupling.marginal_violation();
    ok = ok && viol < 1e-9;
    notes.push_back(fmt::format("violation {:.2e}", viol));
  }
  // 2x2 symmetric: points {0, 1} on both sides, cost 1 off the diagonal.
  {
    Mat p(2, 1);
    p << 0.0, 1.0;
    const double sigma_ref = 1.0, eps = 2.0 * sigma_ref * sigma_ref;
    SinkhornOptions so;
    so.tol = 1e-14;
    const SinkhornResult r = sinkhorn_solve(SampleBatch(p), SampleBatch(p), sigma_ref, so);
    const Eigen::MatrixXd m = r.coupling.dense_mass();
    const double want = 0.5 * std::exp(1.0 / eps) / (1.0 + std::exp(1.0 / eps));
    const double err = std::max(std::abs(m(0, 0) - want), std::abs(m(1, 1) - want));
    ok = ok && err < 1e-8;
    notes.push_back(fmt::format("2x2 a = {:.10f} (want {:.10f})", m(0, 0), want));
  }
  // Limits: large epsilon -> independent plan, small epsilon -> exact OT.
  {
    Rng rng(405);
    const SampleBatch a(Mat::NullaryExpr(5, 1, [&] { return rng.normal(); }));
    const SampleBatch b(Mat::NullaryExpr(5, 1, [&] { return rng.normal(); }));
    const Eigen::MatrixXd hi = sinkhorn_coupling(a, b, 1e3).dense_mass();
    const Eigen::MatrixXd ind = independent_coupling(a, b).dense_mass();
    const double e_hi = (hi - ind).cwiseAbs().maxCoeff();
    // Small epsilon: Sinkhorn slows down sharply near ties in the cost, so use a
    // fixed, well-separated instance and a looser stopping tolerance.
    Mat pa(5, 1), pb(5, 1);
    pa << 0.0, 0.3, 0.9, 1.6, 2.2;
    pb << -0.5, 1.9, 0.2, 1.1, 2.8;
    SinkhornOptions so;
    so.tol = 1e-6;
    so.max_iter = 200000;
    const Eigen::MatrixXd lo = sinkhorn_solve(SampleBatch(pa), SampleBatch(pb), 1e-2, so).coupling.dense_mass();
    const Eigen::MatrixXd ot = exact_ot_coupling(SampleBatch(pa), SampleBatch(pb)).dense_mass();
    const double e_lo = (lo - ot).cwiseAbs().maxCoeff();
    ok = ok && e_hi < 1e-5 && e_lo < 1e-3;
    notes.push_back(fmt::format("large-eps gap {:.2e}, small-eps gap {:.2e}", e_hi, e_lo));
  }
  std::string detail;
  for (std::size_t k = 0; k < notes.size(); ++k) detail += (k ? "; " : "") + notes[k];
  return {4, "Sinkhorn correctness", ok, detail};
}

// ---------------------------------------------------------------------------
// 5. exact mini-batch OT vs brute-force permutations
// ---------------------------------------------------------------------------

inline double brute_force_assignment_cost(const Eigen::MatrixXd& cost) {
  std::vector<int> perm(std::size_t(cost.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) c += cost(Eigen::Index(i), perm[i]);
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline CriterionResult criterion_5() {
  Rng rng(505);
  int matched = 0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    const Eigen::Index n = 1 + Eigen::Index(rng.uniform_int(6));
    const SampleBatch a(Mat::NullaryExpr(n, 2, [&] { return rng.normal(); }));
    const SampleBatch b(Mat::NullaryExpr(n, 2, [&] { return rng.normal(); }));
    const Coupling c = exact_ot_coupling(a, b);
    // transport_cost() is mass-weighted; the permutation cost is n times it.
    const double solver = c.transport_cost() * double(n);
    const double brute = brute_force_assignment_cost(detail::squared_cost(a, b));
    if (std::abs(solver - brute) <= 1e-12 * std::max(1.0, brute)) ++matched;
  }
  return {5, "exact mini-batch OT", matched == trials, fmt::format("{}/{} trials match brute force", matched, trials)};
}

// ---------------------------------------------------------------------------
// 6-10. end-to-end runs on N(0, 1) -> N(4, 1), sigma_ref = 1
// ---------------------------------------------------------------------------

inline EndpointDistribution shift_source() { return EndpointDistribution::gaussian_1d(0.0, 1.0); }
inline EndpointDistribution shift_target() { return EndpointDistribution::gaussian_1d(4.0, 1.0); }

inline UbaConfig shift_imf_config() {
  UbaConfig c;
  c.instantiation = Instantiation::imf;
  c.diffusion = {1.0, 1.0, 1};
  c.outer_iters = 1;
  c.inner_steps = 20000;
  c.batch_size = 512;
  c.lr = 2e-3;
  c.lr_final = 1e-5;
  c.hidden = {64, 64};
  c.data_n = 100000;
  c.eval_n = 4096;
  c.seed = 606;
  return c;
}

inline UbaConfig shift_dsbm_config() {
  UbaConfig c = shift_imf_config();
  c.instantiation = Instantiation::dsbm;
  c.outer_iters = 8;
  c.inner_steps = 8000;
  c.pool_n = 100000;
  c.eval_every = 0;
  c.seed = 707;
  return c;
}

inline UbaConfig moons_config() {
  UbaConfig c;
  c.instantiation = Instantiation::ot_cfm;
  c.diffusion = {0.0, 1.0, 2};
  c.outer_iters = 5;
  c.inner_steps = 8000;
  c.batch_size = 128;
  c.lr = 2e-3;
  c.lr_final = 1e-5;
  c.hidden = {64, 64, 64};
  c.sigma_min = 0.01;
  c.data_n = 20000;
  c.eval_n = 4096;
  c.seed = 909;
  return c;
}

inline double metric(const std::vector<MetricRecord>& h, const std::string& name, int iteration) {
  for (const auto& r : h)
    if (r.name == name && r.iteration == iteration) return r.value;
  throw BridgeError("metric " + name + " missing for iteration " + std::to_string(iteration));
}

inline std::string metrics_csv(const std::vector<MetricRecord>& h) {
  std::ostringstream os;
  write_metrics_csv(os, h);
  return os.str();
}

// Artifacts shared by criteria 6-10.
struct Context {
  int threads = 1;
  std::optional<UbaRunResult> imf;
  std::optional<DriftNetwork> dsbm_forward;
};

inline const UbaRunResult& imf_run(Context& ctx) {
  if (!ctx.imf) {
    UbaConfig c = shift_imf_config();
    c.threads = ctx.threads;
    ctx.imf = run(c, shift_source(), shift_target());
  }
  return *ctx.imf;
}

inline CriterionResult criterion_6(Context& ctx) {
  const UbaRunResult& r = imf_run(ctx);
  const auto& h = r.history;
  const double ed = metric(h, "ed_terminal", 0), base = metric(h, "ed_baseline", 0);
  const double m = metric(h, "terminal_mean_0", 0), v = metric(h, "terminal_var_0", 0);
  const bool ok = ed < 3.0 * base && std::abs(m - 4.0) < 0.2 && std::abs(v - 1.0) < 0.3;
  return {6, "IMF iteration 1 reproduces the target marginal", ok,
          fmt::format("ED {:.3e} (3x baseline {:.3e}); mean {:.4f}; var {:.4f}", ed, 3.0 * base, m, v)};
}

inline double eot_reference_cov() {
  return gaussian_eot_oracle(0.0, 1.0, 4.0, 1.0, 1.0).cov01;
}

inline CriterionResult criterion_7(Context& ctx) {
  UbaConfig c = shift_dsbm_config();
  c.threads = ctx.threads;
  const UbaRunResult r = run(c, shift_source(), shift_target());
  ctx.dsbm_forward = r.state.forward;
  Rng rng = Rng(c.seed).substream(77);
  const SampleBatch src = sample(shift_source(), 20000, rng);
  const Coupling cp = model_coupling(*ctx.dsbm_forward, src, c.diffusion.sigma, c.eval_sim_steps, rng,
                                     Direction::forward, ctx.threads);
  const double cov = detail::sample_covariance(cp.batch0.points().col(0), cp.batch1.points().col(0));
  const double want = eot_reference_cov();
  return {7, "DSBM coupling matches entropic OT", std::abs(cov - want) < 0.1,
          fmt::format("Cov(x0, x1) = {:.4f}, oracle {:.4f} (tol 0.1)", cov, want)};
}

inline CriterionResult criterion_8(Context& ctx) {
  if (!ctx.dsbm_forward) criterion_7(ctx);
  const UbaRunResult& imf = imf_run(ctx);
  Rng rng = Rng(808);
  const SampleBatch src = sample(shift_source(), 4096, rng);
  const TimeGrid grid = TimeGrid::forward(TimeGrid::kEvalSteps);
  // Same source and noise for both models: a paired comparison.
  Rng n1 = rng.substream(1), n2 = rng.substream(1);
  const KineticEstimate kd = path_kinetic_energy(*ctx.dsbm_forward, src, 1.0, grid, n1, ctx.threads);
  const KineticEstimate ki = path_kinetic_energy(imf.state.forward, src, 1.0, grid, n2, ctx.threads);
  const Vec diff = kd.per_path - ki.per_path;
  const double n = double(diff.size());
  const double se = std::sqrt((diff.array() - diff.mean()).square().sum() / (n - 1.0) / n);
  const double gap = kd.value - ki.value;
  return {8, "DSBM kinetic energy <= IMF iteration 1", gap <= 2.0 * se,
          fmt::format("KE dsbm {:.4f}, imf {:.4f}, diff {:.4f} (2 SE {:.4f})", kd.value, ki.value, gap, 2.0 * se)};
}

inline CriterionResult criterion_9(Context& ctx) {
  UbaConfig c = moons_config();
  c.threads = ctx.threads;
  const UbaRunResult r = run(c, EndpointDistribution::eight_gaussians(), EndpointDistribution::two_moons());
  std::vector<double> ed;
  for (int it = 0; it < c.outer_iters; ++it) ed.push_back(metric(r.history, "ed_terminal", it));
  const double base = metric(r.history, "ed_baseline", c.outer_iters - 1);
  bool monotone = true;
  for (std::size_t k = ed.size() - 3; k + 1 < ed.size(); ++k) monotone = monotone && ed[k + 1] <= ed[k];
  std::string series;
  for (std::size_t k = 0; k < ed.size(); ++k) series += fmt::format("{}{:.3e}", k ? ", " : "", ed[k]);
  return {9, "OT-CFM eight Gaussians -> two moons", monotone && ed.back() < 3.0 * base,
          fmt::format("ED per iteration [{}]; 3x baseline {:.3e}", series, 3.0 * base)};
}

inline CriterionResult criterion_10(Context& ctx) {
  const std::string first = metrics_csv(imf_run(ctx).history);
  UbaConfig c = shift_imf_config();
  c.threads = 1;
  const std::string second = metrics_csv(run(c, shift_source(), shift_target()).history);
  if (ctx.threads != 1) {
    // The cached run used other thread counts; compare two single-thread runs.
    const std::string third = metrics_csv(run(c, shift_source(), shift_target()).history);
    return {10, "determinism", second == third, second == third ? "identical metrics.csv" : "metrics differ"};
  }
  return {10, "determinism", first == second,
          first == second ? fmt::format("identical metrics.csv ({} bytes)", first.size()) : "metrics differ"};
}

// ---------------------------------------------------------------------------
// runner
// ---------------------------------------------------------------------------

struct SuiteOptions {
  bool fast = false;  // criteria 1-5 only
  int threads = 1;
  std::vector<int> only;  // empty: all selected by `fast`
};

inline bool is_fast(int id) { return id <= 5; }

inline std::string format_result(const CriterionResult& r) {
  return fmt::format("[{}] criterion {:>2}: {} ({:.1f} s) -- {}", r.passed ? "PASS" : "FAIL", r.id, r.name,
                     r.seconds, r.detail);
}

/// Runs the selected criteria in order and prints one line per criterion.
inline std::vector<CriterionResult> run_suite(const SuiteOptions& opt, std::ostream& out) {
  Context ctx;
  ctx.threads = opt.threads;
  const std::vector<std::function<CriterionResult()>> all{
      [] { return criterion_1(); },          [] { return criterion_2(); },
      [] { return criterion_3(); },          [] { return criterion_4(); },
      [] { return criterion_5(); },          [&] { return criterion_6(ctx); },
      [&] { return criterion_7(ctx); },      [&] { return criterion_8(ctx); },
      [&] { return criterion_9(ctx); },      [&] { return criterion_10(ctx); }};
  std::vector<CriterionResult> results;
  for (int id = 1; id <= int(all.size()); ++id) {
    if (!opt.only.empty()) {
      if (std::find(opt.only.begin(), opt.only.end(), id) == opt.only.end()) continue;
    } else if (opt.fast && !is_fast(id)) {
      continue;
    }
    const auto start = std::chrono::steady_clock::now();
    CriterionResult r;
    try {
      r = all[std::size_t(id - 1)]();
    } catch (const std::exception& e) {
      r = {id, "criterion " + std::to_string(id), false, std::string("exception: ") + e.what()};
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out << format_result(r) << std::endl;
    results.push_back(r);
  }
  const auto passed = std::count_if(results.begin(), results.end(), [](const auto& r) { return r.passed; });
  out << fmt::format("{}/{} criteria passed", passed, results.size()) << std::endl;
  return results;
}

}  // namespace bridgekit::acceptance
