#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "bridgekit/error.hpp"
#include "bridgekit/rng.hpp"
#include "bridgekit/types.hpp"

namespace bridgekit {

enum class CouplingKind { independent, exact_ot, entropic_ot, model_induced };

inline std::string_view to_string(CouplingKind k) {
  switch (k) {
    case CouplingKind::independent: return "independent";
    case CouplingKind::exact_ot: return "exact_ot";
    case CouplingKind::entropic_ot: return "entropic_ot";
    case CouplingKind::model_induced: return "model_induced";
  }
  return "?";
}

struct CouplingEntry {
  std::uint32_t i = 0;
  std::uint32_t j = 0;
  double mass = 0.0;
};

/// Discrete joint distribution Q(x0, x1) over two point clouds.
///
/// The mass matrix is stored as its support (row-major order). Dense plans
/// list every cell; model-induced couplings list only the simulated pairs, so
/// an n-pair coupling costs O(n) rather than O(n^2).
struct Coupling {
  SampleBatch batch0;
  SampleBatch batch1;
  std::vector<CouplingEntry> entries;
  CouplingKind kind = CouplingKind::independent;

  Eigen::MatrixXd dense_mass() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(Eigen::Index(batch0.size()), Eigen::Index(batch1.size()));
    for (const auto& e : entries) m(e.i, e.j) += e.mass;
    return m;
  }

  Vec row_sums() const {
    Vec r = Vec::Zero(Eigen::Index(batch0.size()));
    for (const auto& e : entries) r[e.i] += e.mass;
    return r;
  }

  Vec col_sums() const {
    Vec c = Vec::Zero(Eigen::Index(batch1.size()));
    for (const auto& e : entries) c[e.j] += e.mass;
    return c;
  }

  double total_mass() const {
    double s = 0.0;
    for (const auto& e : entries) s += e.mass;
    return s;
  }

  // Sum of mass * ||x0_i - x1_j||^2.
  double transport_cost() const {
    double s = 0.0;
    for (const auto& e : entries)
      s += e.mass * (batch0.points().row(e.i) - batch1.points().row(e.j)).squaredNorm();
    return s;
  }

  // Largest absolute deviation of the row/column sums from the batch weights.
  double marginal_violation() const {
    const Vec r = row_sums() - batch0.weights();
    const Vec c = col_sums() - batch1.weights();
    return std::max(r.cwiseAbs().maxCoeff(), c.cwiseAbs().maxCoeff());
  }

  // Throws DataError when the coupling invariants fail.
  void validate(double marginal_tol = 1e-6, double total_tol = 1e-9) const {
    for (const auto& e : entries) {
      if (e.i >= batch0.size() || e.j >= batch1.size()) throw ShapeError("coupling entry out of range");
      if (!(e.mass >= 0.0)) throw DataError("coupling mass must be nonnegative");
    }
    if (std::abs(total_mass() - 1.0) > total_tol) throw DataError("coupling total mass != 1");
    if (marginal_violation() > marginal_tol) throw DataError("coupling marginals violate batch weights");
  }
};

namespace detail {

inline void check_pair(const SampleBatch& b0, const SampleBatch& b1) {
  if (b0.empty() || b1.empty()) throw DomainError("coupling requires nonempty batches");
  if (b0.dim() != b1.dim()) throw ShapeError("coupling batches have different dimensions");
}

inline Eigen::MatrixXd squared_cost(const SampleBatch& b0, const SampleBatch& b1) {
  const Mat& x = b0.points();
  const Mat& y = b1.points();
  Eigen::MatrixXd c(x.rows(), y.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < y.rows(); ++j) c(i, j) = (x.row(i) - y.row(j)).squaredNorm();
  return c;
}

// Shortest augmenting path assignment (Jonker-Volgenant style) on a square
// cost matrix. Returns col_of_row. Ties resolve towards lower column indices.
inline std::vector<int> solve_assignment(const Eigen::MatrixXd& cost) {
  const int n = int(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> col_of_row(n);
  for (int j = 1; j <= n; ++j) col_of_row[p[j] - 1] = j - 1;
  return col_of_row;
}

// Balanced transport with integer supplies (rows) and demands (columns) on a
// dense cost matrix, by successive shortest paths with Johnson potentials.
// Returns the flow matrix.
inline Eigen::MatrixXd solve_transport(const Eigen::MatrixXd& cost, const std::vector<long long>& supply,
                                       const std::vector<long long>& demand) {
  const int n = int(cost.rows()), m = int(cost.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<long long> sup = supply, dem = demand;
  Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic> flow =
      Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>::Zero(n, m);
  // Nodes: rows 0..n-1, columns n..n+m-1.
  std::vector<double> pot(n + m, 0.0), dist(n + m);
  std::vector<int> parent(n + m);
  std::vector<char> done(n + m);
  long long remaining = std::accumulate(sup.begin(), sup.end(), 0LL);
  while (remaining > 0) {
    std::fill(dist.begin(), dist.end(), inf);
    std::fill(parent.begin(), parent.end(), -1);
    std::fill(done.begin(), done.end(), 0);
    for (int i = 0; i < n; ++i)
      if (sup[i] > 0) dist[i] = 0.0;
    // Dense Dijkstra on the residual graph with reduced costs.
    for (int iter = 0; iter < n + m; ++iter) {
      int best = -1;
      for (int k = 0; k < n + m; ++k)
        if (!done[k] && dist[k] < inf && (best < 0 || dist[k] < dist[best])) best = k;
      if (best < 0) break;
      done[best] = 1;
      if (best < n) {
        const int i = best;
        for (int j = 0; j < m; ++j) {
          const int node = n + j;
          if (done[node]) continue;
          const double rc = cost(i, j) + pot[i] - pot[node];
          const double nd = dist[i] + std::max(rc, 0.0);
          if (nd < dist[node]) {
            dist[node] = nd;
            parent[node] = i;
          }
        }
      } else {
        const int j = best - n;
        for (int i = 0; i < n; ++i) {
          if (done[i] || flow(i, j) <= 0) continue;
          const double rc = -cost(i, j) + pot[best] - pot[i];
          const double nd = dist[best] + std::max(rc, 0.0);
          if (nd < dist[i]) {
            dist[i] = nd;
            parent[i] = best;
          }
        }
      }
    }
    int sink = -1;
    for (int j = 0; j < m; ++j)
      if (dem[j] > 0 && dist[n + j] < inf && (sink < 0 || dist[n + j] < dist[n + sink])) sink = j;
    if (sink < 0) throw ConvergenceError("transport problem infeasible", double(remaining));
    // Bottleneck along the path.
    long long push = dem[sink];
    int node = n + sink;
    while (parent[node] >= 0) {
      const int prev = parent[node];
      if (prev >= n) push = std::min(push, flow(node, prev - n));  // backward edge column->row
      node = prev;
    }
    push = std::min(push, sup[node]);
    const int source = node;
    node = n + sink;
    while (parent[node] >= 0) {
      const int prev = parent[node];
      if (prev < n)
        flow(prev, node - n) += push;
      else
        flow(node, prev - n) -= push;
      node = prev;
    }
    sup[source] -= push;
    dem[sink] -= push;
    remaining -= push;
    const double cap = dist[n + sink];
    for (int k = 0; k < n + m; ++k) pot[k] += std::min(dist[k], cap);
  }
  return flow.cast<double>();
}

}  // namespace detail

/// Product coupling: mass(i, j) = w0_i * w1_j.
inline Coupling independent_coupling(const SampleBatch& batch0, const SampleBatch& batch1) {
  detail::check_pair(batch0, batch1);
  Coupling c{batch0, batch1, {}, CouplingKind::independent};
  const Vec w0 = batch0.weights(), w1 = batch1.weights();
  c.entries.reserve(batch0.size() * batch1.size());
  for (std::uint32_t i = 0; i < batch0.size(); ++i)
    for (std::uint32_t j = 0; j < batch1.size(); ++j) c.entries.push_back({i, j, w0[i] * w1[j]});
  return c;
}

/// Exact mini-batch optimal transport plan under squared Euclidean cost with
/// uniform marginals. Equal batch sizes are solved as an assignment problem
/// (mass 1/n on a permutation); otherwise the general transport LP is solved.
inline Coupling exact_ot_coupling(const SampleBatch& batch0, const SampleBatch& batch1) {
  detail::check_pair(batch0, batch1);
  if (!batch0.uniform() || !batch1.uniform())
    throw DomainError("exact OT coupling requires uniform batch weights");
  const Eigen::MatrixXd cost = detail::squared_cost(batch0, batch1);
  const std::size_t n = batch0.size(), m = batch1.size();
  Coupling c{batch0, batch1, {}, CouplingKind::exact_ot};
  if (n == m) {
    const auto perm = detail::solve_assignment(cost);
    c.entries.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) c.entries.push_back({i, std::uint32_t(perm[i]), 1.0 / double(n)});
    return c;
  }
  // Integer scaling: row supply m, column demand n, total n*m.
  const std::vector<long long> supply(n, (long long)m), demand(m, (long long)n);
  const Eigen::MatrixXd flow = detail::solve_transport(cost, supply, demand);
  const double total = double(n) * double(m);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < m; ++j)
      if (flow(i, j) > 0.0) c.entries.push_back({i, j, flow(i, j) / total});
  return c;
}

struct SinkhornOptions {
  double tol = 1e-9;
  int max_iter = 10000;
  // Marginal violations (L1 over rows) are recorded every `checkpoint_every` iterations.
  int checkpoint_every = 10;
};

struct SinkhornResult {
  Coupling coupling;
  int iterations = 0;
  double violation = 0.0;  // max abs marginal deviation at exit
  std::vector<double> violation_history;
};

namespace detail {

inline double log_sum_exp(const double* v, Eigen::Index n, Eigen::Index stride) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < n; ++k) mx = std::max(mx, v[k * stride]);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) s += std::exp(v[k * stride] - mx);
  return mx + std::log(s);
}

}  // namespace detail

/// Log-domain Sinkhorn for the entropic OT plan with regularization
/// epsilon = 2 sigma_ref^2 on squared Euclidean costs and the batch weights as
/// marginals. Column marginals are exact after every sweep; termination is on
/// the row violation.
inline SinkhornResult sinkhorn_solve(const SampleBatch& batch0, const SampleBatch& batch1, double sigma_ref,
                                     const SinkhornOptions& opt = {}) {
  detail::check_pair(batch0, batch1);
  if (!(sigma_ref > 0.0)) throw DomainError("sinkhorn requires sigma_ref > 0");
  const double eps = 2.0 * sigma_ref * sigma_ref;
  const Eigen::Index n = Eigen::Index(batch0.size()), m = Eigen::Index(batch1.size());
  const Eigen::MatrixXd cost = detail::squared_cost(batch0, batch1);
  const Vec a = batch0.weights(), b = batch1.weights();
  const Vec log_a = a.array().log(), log_b = b.array().log();
  // Scaled potentials: P_ij = exp(f_i + g_j - C_ij / eps).
  Vec f = Vec::Zero(n), g = Vec::Zero(m);
  Eigen::MatrixXd kernel = -cost / eps;  // column-major: column j contiguous
  Eigen::MatrixXd scratch(n, m);
  Vec lse_row(n);

  SinkhornResult res;
  auto row_lse = [&]() {
    // lse_row_i = log sum_j exp(g_j - C_ij/eps)
    for (Eigen::Index j = 0; j < m; ++j) scratch.col(j) = kernel.col(j).array() + g[j];
    for (Eigen::Index i = 0; i < n; ++i) lse_row[i] = detail::log_sum_exp(&scratch(i, 0), m, n);
  };
  int it = 0;
  double viol = std::numeric_limits<double>::infinity();
  double viol_l1 = viol;
  for (;;) {
    row_lse();
    // Row sums of the current plan: exp(f_i + lse_row_i).
    viol = 0.0;
    viol_l1 = 0.0;
    if (it > 0) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double dev = std::abs(std::exp(f[i] + lse_row[i]) - a[i]);
        viol = std::max(viol, dev);
        viol_l1 += dev;
      }
    } else {
      viol = viol_l1 = std::numeric_limits<double>::infinity();
    }
    if (it > 0 && (it % opt.checkpoint_every == 0)) res.violation_history.push_back(viol_l1);
    if (viol < opt.tol || it >= opt.max_iter) break;
    f = log_a - lse_row;
    for (Eigen::Index j = 0; j < m; ++j) {
      const Eigen::Map<const Vec> colk(&kernel(0, j), n);
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < n; ++i) mx = std::max(mx, colk[i] + f[i]);
      double s = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) s += std::exp(colk[i] + f[i] - mx);
      g[j] = log_b[j] - (mx + std::log(s));
    }
    ++it;
  }
  res.iterations = it;
  res.violation = viol;
  if (viol > 1e-6)
    throw ConvergenceError("sinkhorn did not converge: marginal violation " + std::to_string(viol), viol);

  Coupling c{batch0, batch1, {}, CouplingKind::entropic_ot};
  c.entries.reserve(std::size_t(n * m));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      c.entries.push_back({std::uint32_t(i), std::uint32_t(j), std::exp(f[i] + g[j] + kernel(i, j))});
  res.coupling = std::move(c);
  return res;
}

inline Coupling sinkhorn_coupling(const SampleBatch& batch0, const SampleBatch& batch1, double sigma_ref,
                                  double tol = 1e-9, int max_iter = 10000) {
  SinkhornOptions opt;
  opt.tol = tol;
  opt.max_iter = max_iter;
  return sinkhorn_solve(batch0, batch1, sigma_ref, opt).coupling;
}

/// Alias table over the coupling support for O(1) pair draws.
class PairSampler {
 public:
  explicit PairSampler(const Coupling& c) : coupling_(&c) {
    const std::size_t k = c.entries.size();
    if (k == 0) throw DataError("cannot sample from an empty coupling");
    double total = c.total_mass();
    if (!(total > 0.0)) throw DataError("coupling has no mass");
    prob_.resize(k);
    alias_.resize(k);
    std::vector<double> scaled(k);
    std::vector<std::size_t> small, large;
    for (std::size_t e = 0; e < k; ++e) {
      scaled[e] = c.entries[e].mass * double(k) / total;
      (scaled[e] < 1.0 ? small : large).push_back(e);
    }
    while (!small.empty() && !large.empty()) {
      const std::size_t s = small.back(), l = large.back();
      small.pop_back();
      prob_[s] = scaled[s];
      alias_[s] = l;
      scaled[l] = (scaled[l] + scaled[s]) - 1.0;
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    for (auto e : large) prob_[e] = 1.0, alias_[e] = e;
    for (auto e : small) prob_[e] = 1.0, alias_[e] = e;
  }

  const CouplingEntry& draw(Rng& rng) const {
    const std::size_t e = std::size_t(rng.uniform_int(prob_.size()));
    return coupling_->entries[rng.uniform() < prob_[e] ? e : alias_[e]];
  }

 private:
  const Coupling* coupling_;
  std::vector<double> prob_;
  std::vector<std::size_t> alias_;
};

struct PointPairs {
  Mat x0;
  Mat x1;
  std::size_t size() const { return std::size_t(x0.rows()); }
};

/// n i.i.d. (x0, x1) pairs with probability mass(i, j).
inline PointPairs sample_pairs(const Coupling& coupling, std::size_t n, Rng& rng) {
  const PairSampler sampler(coupling);
  const int d = coupling.batch0.dim();
  PointPairs out{Mat(Eigen::Index(n), d), Mat(Eigen::Index(n), d)};
  for (std::size_t k = 0; k < n; ++k) {
    const auto& e = sampler.draw(rng);
    out.x0.row(Eigen::Index(k)) = coupling.batch0.points().row(e.i);
    out.x1.row(Eigen::Index(k)) = coupling.batch1.points().row(e.j);
  }
  return out;
}

}  // namespace bridgekit
