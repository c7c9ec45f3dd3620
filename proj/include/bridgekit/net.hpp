#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bridgekit/core.hpp"
#include "bridgekit/error.hpp"
#include "bridgekit/rng.hpp"
#include "bridgekit/types.hpp"

namespace bridgekit {

enum class Activation { tanh, silu };

inline std::string_view to_string(Activation a) { return a == Activation::tanh ? "tanh" : "silu"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "silu") return Activation::silu;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

// Per-layer weight matrices (out x in) and bias vectors. Also used for
// gradients and optimizer moments, which mirror the parameter shapes.
struct MlpParams {
  std::vector<Eigen::MatrixXd> W;
  std::vector<Vec> b;

  MlpParams zeros_like() const {
    MlpParams z;
    for (const auto& w : W) z.W.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    for (const auto& v : b) z.b.push_back(Vec::Zero(v.size()));
    return z;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& w : W) n += std::size_t(w.size());
    for (const auto& v : b) n += std::size_t(v.size());
    return n;
  }

  bool operator==(const MlpParams& o) const {
    if (W.size() != o.W.size() || b.size() != o.b.size()) return false;
    for (std::size_t l = 0; l < W.size(); ++l)
      if (W[l].rows() != o.W[l].rows() || W[l].cols() != o.W[l].cols() || W[l] != o.W[l]) return false;
    for (std::size_t l = 0; l < b.size(); ++l)
      if (b[l].size() != o.b[l].size() || b[l] != o.b[l]) return false;
    return true;
  }
};

/// Multilayer perceptron v(t, x): input (t, x) of length d + 1, output length d.
struct DriftNetwork {
  std::vector<int> layer_sizes;
  Activation activation = Activation::silu;
  MlpParams params;

  static inline const std::vector<int> kDefaultHidden{128, 128, 128};

  // Glorot-uniform hidden layers; the output layer starts at zero so the
  // initial model is the zero drift.
  static DriftNetwork create(int dim, const std::vector<int>& hidden, Activation act, Rng& rng) {
    if (dim <= 0) throw DomainError("network dimension must be positive");
    DriftNetwork net;
    net.activation = act;
    net.layer_sizes.push_back(dim + 1);
    for (int h : hidden) {
      if (h <= 0) throw DomainError("hidden widths must be positive");
      net.layer_sizes.push_back(h);
    }
    net.layer_sizes.push_back(dim);
    const std::size_t layers = net.layer_sizes.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
      const int in = net.layer_sizes[l], out = net.layer_sizes[l + 1];
      Eigen::MatrixXd w = Eigen::MatrixXd::Zero(out, in);
      if (l + 1 < layers) {
        const double bound = std::sqrt(6.0 / double(in + out));
        for (Eigen::Index c = 0; c < w.cols(); ++c)
          for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = rng.uniform(-bound, bound);
      }
      net.params.W.push_back(std::move(w));
      net.params.b.push_back(Vec::Zero(out));
    }
    return net;
  }

  int dim() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return params.W.size(); }
};

namespace detail {

// a = act(z); when `deriv` is given it also receives act'(z). tanh is written
// through exp so both activations use the vectorized exponential.
inline void apply_activation(Activation act, const Eigen::MatrixXd& z, Eigen::MatrixXd& a,
                             Eigen::MatrixXd* deriv = nullptr) {
  a.resize(z.rows(), z.cols());
  if (act == Activation::tanh) {
    a.array() = 1.0 - 2.0 / (1.0 + (2.0 * z.array()).exp());
    if (deriv) deriv->array() = 1.0 - a.array().square();
  } else if (deriv) {
    deriv->array() = 1.0 / (1.0 + (-z.array()).exp());
    a.array() = z.array() * deriv->array();
    deriv->array() = deriv->array() * (1.0 + z.array() * (1.0 - deriv->array()));
  } else {
    a.array() = z.array() / (1.0 + (-z.array()).exp());
  }
}

// Column-major input block: row 0 holds t, rows 1..d hold x^T.
inline Eigen::MatrixXd pack_input(const Eigen::Ref<const Vec>& t, const Eigen::Ref<const Mat>& x) {
  Eigen::MatrixXd in(x.cols() + 1, x.rows());
  in.row(0) = t.transpose();
  in.bottomRows(x.cols()) = x.transpose();
  return in;
}

struct ForwardCache {
  std::vector<Eigen::MatrixXd> pre;   // pre-activations per layer
  std::vector<Eigen::MatrixXd> post;  // post[l+1] = output of hidden layer l
  std::vector<Eigen::MatrixXd> deriv; // activation derivative per hidden layer
};

inline void check_input(const DriftNetwork& net, Eigen::Index t_size, const Eigen::Ref<const Mat>& x) {
  if (x.cols() != net.dim()) throw ShapeError("network input dimension mismatch");
  if (t_size != x.rows()) throw ShapeError("time vector length != batch size");
}

}  // namespace detail

/// Batched forward pass: row k of the result is v(t_k, x_k).
inline Mat forward_batch(const DriftNetwork& net, const Eigen::Ref<const Vec>& t, const Eigen::Ref<const Mat>& x) {
  detail::check_input(net, t.size(), x);
  Eigen::MatrixXd h = detail::pack_input(t, x);
  Eigen::MatrixXd z;
  const std::size_t layers = net.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    z.noalias() = net.params.W[l] * h;
    z.colwise() += net.params.b[l];
    if (l + 1 < layers)
      detail::apply_activation(net.activation, z, h);
    else
      h.swap(z);
  }
  return h.transpose();
}

// Same time for every row.
inline Mat forward_batch(const DriftNetwork& net, double t, const Eigen::Ref<const Mat>& x) {
  return forward_batch(net, Vec::Constant(x.rows(), t), x);
}

inline Vec forward(const DriftNetwork& net, double t, const Eigen::Ref<const Vec>& x) {
  if (x.size() != net.dim()) throw ShapeError("network input dimension mismatch");
  Mat row = x.transpose();
  return forward_batch(net, t, row).row(0).transpose();
}

struct LossAndGrad {
  double loss = 0.0;
  MlpParams grads;
};

// Buffers reused across training steps.
struct GradWorkspace {
  detail::ForwardCache cache;
  Eigen::MatrixXd input, delta, back;
};

namespace detail {

inline void pack_input_into(const Eigen::Ref<const Vec>& t, const Eigen::Ref<const Mat>& x, Eigen::MatrixXd& in) {
  in.resize(x.cols() + 1, x.rows());
  in.row(0) = t.transpose();
  in.bottomRows(x.cols()) = x.transpose();
}

}  // namespace detail

/// Mean over the batch of ||u_k - v(t_k, x_k)||^2 and its exact gradient,
/// written into `out` (whose buffers are reused when the shapes match).
inline void loss_and_grad(const DriftNetwork& net, const Eigen::Ref<const Vec>& t, const Eigen::Ref<const Mat>& x,
                          const Eigen::Ref<const Mat>& target, GradWorkspace& ws, LossAndGrad& out) {
  detail::check_input(net, t.size(), x);
  if (x.rows() == 0) throw DomainError("loss_and_grad requires a nonempty batch");
  if (target.rows() != x.rows() || target.cols() != x.cols()) throw ShapeError("target shape mismatch");
  if (!target.allFinite()) throw DataError("non-finite regression targets");

  detail::pack_input_into(t, x, ws.input);
  auto& cache = ws.cache;
  const std::size_t layers = net.num_layers();
  cache.pre.resize(layers);
  cache.post.resize(layers + 1);
  cache.deriv.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    const Eigen::MatrixXd& in = l == 0 ? ws.input : cache.post[l];
    cache.pre[l].noalias() = net.params.W[l] * in;
    cache.pre[l].colwise() += net.params.b[l];
    if (l + 1 < layers) {
      cache.deriv[l].resize(cache.pre[l].rows(), cache.pre[l].cols());
      detail::apply_activation(net.activation, cache.pre[l], cache.post[l + 1], &cache.deriv[l]);
    }
  }
  const double n = double(x.rows());
  ws.delta = cache.pre[layers - 1] - target.transpose();
  out.loss = ws.delta.squaredNorm() / n;
  ws.delta *= 2.0 / n;
  out.grads.W.resize(layers);
  out.grads.b.resize(layers);
  for (std::size_t l = layers; l-- > 0;) {
    const Eigen::MatrixXd& in = l == 0 ? ws.input : cache.post[l];
    out.grads.W[l].noalias() = ws.delta * in.transpose();
    out.grads.b[l] = ws.delta.rowwise().sum();
    if (l == 0) break;
    ws.back.noalias() = net.params.W[l].transpose() * ws.delta;
    ws.back.array() *= cache.deriv[l - 1].array();
    ws.delta.swap(ws.back);
  }
}

inline LossAndGrad loss_and_grad(const DriftNetwork& net, const Eigen::Ref<const Vec>& t,
                                 const Eigen::Ref<const Mat>& x, const Eigen::Ref<const Mat>& target) {
  GradWorkspace ws;
  LossAndGrad out;
  loss_and_grad(net, t, x, target, ws, out);
  return out;
}

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  MlpParams m;
  MlpParams v;
  long step = 0;
  double beta1 = kBeta1;
  double beta2 = kBeta2;
  double eps = kEps;

  static AdamState for_network(const DriftNetwork& net) {
    AdamState s;
    s.m = net.params.zeros_like();
    s.v = net.params.zeros_like();
    return s;
  }
};

/// Bias-corrected adaptive-moment update.
inline void optimizer_step(DriftNetwork& net, AdamState& state, const MlpParams& grads, double lr) {
  if (grads.W.size() != net.params.W.size() || state.m.W.size() != net.params.W.size())
    throw ShapeError("optimizer state does not match network");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, double(state.step));
  auto update = [&](double* p, double* m, double* v, const double* g, Eigen::Index size) {
    for (Eigen::Index k = 0; k < size; ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  };
  for (std::size_t l = 0; l < net.params.W.size(); ++l) {
    if (grads.W[l].size() != net.params.W[l].size()) throw ShapeError("gradient shape mismatch");
    update(net.params.W[l].data(), state.m.W[l].data(), state.v.W[l].data(), grads.W[l].data(),
           net.params.W[l].size());
    update(net.params.b[l].data(), state.m.b[l].data(), state.v.b[l].data(), grads.b[l].data(),
           net.params.b[l].size());
  }
}

// Fills x0 and x1 (n x d) with n coupled endpoint pairs.
using PairSource = std::function<void(std::size_t n, Rng& rng, Mat& x0, Mat& x1)>;

struct TrainOptions {
  int steps = 5000;
  int batch_size = 256;
  double lr = 1e-3;
  // Cosine decay from lr to lr_final; negative keeps lr constant.
  double lr_final = -1.0;
  // The decay spans schedule_total steps (0: this call's steps), starting
  // schedule_offset steps in, so consecutive calls can share one schedule.
  int schedule_offset = 0;
  int schedule_total = 0;
};

struct TrainingLog {
  std::vector<double> loss;
  std::size_t clipped = 0;

  double trailing_mean(std::size_t window) const {
    if (loss.empty()) return 0.0;
    const std::size_t w = std::min(window, loss.size());
    double s = 0.0;
    for (std::size_t k = loss.size() - w; k < loss.size(); ++k) s += loss[k];
    return s / double(w);
  }
};

inline double scheduled_lr(const TrainOptions& opt, int step) {
  const int total = opt.schedule_total > 0 ? opt.schedule_total : opt.steps;
  if (opt.lr_final < 0.0 || total <= 1) return opt.lr;
  const double frac = std::min(1.0, double(opt.schedule_offset + step) / double(total - 1));
  return opt.lr_final + 0.5 * (opt.lr - opt.lr_final) * (1.0 + std::cos(std::numbers::pi * frac));
}

/// Regression of the network onto conditional drift targets:
/// per step draw pairs, t ~ U[t_clip, 1 - t_clip], x_t from the pinned path,
/// target u_t(x_t | x0, x1), then one optimizer step.
inline TrainingLog train_regression(DriftNetwork& net, AdamState& state, const PairSource& pairs,
                                    const PinnedPathSpec& pinned, const ConditionalDrift& drift,
                                    const TrainOptions& opt, Rng& rng) {
  if (opt.batch_size <= 0) throw DomainError("batch_size must be positive");
  const int d = net.dim();
  const std::size_t n = std::size_t(opt.batch_size);
  const double t_lo = drift.t_clip, t_hi = 1.0 - drift.t_clip;
  TrainingLog log;
  log.loss.reserve(std::size_t(std::max(opt.steps, 0)));
  DriftDiagnostics diag;
  Mat x0, x1, xt(Eigen::Index(n), d), target(Eigen::Index(n), d);
  Vec t = Vec::Zero(Eigen::Index(n));
  GradWorkspace ws;
  LossAndGrad lg;
  for (int step = 0; step < opt.steps; ++step) {
    pairs(n, rng, x0, x1);
    if (x0.rows() != Eigen::Index(n) || x0.cols() != d || x1.rows() != x0.rows() || x1.cols() != d)
      throw ShapeError("pair source returned a batch of the wrong shape");
    for (Eigen::Index k = 0; k < Eigen::Index(n); ++k) {
      const double tk = rng.uniform(t_lo, t_hi);
      t[k] = tk;
      const MeanWeights w = pinned.weights(tk);
      const double gamma = pinned.gamma(tk);
      for (int c = 0; c < d; ++c) {
        double v = w.a * x0(k, c) + w.b * x1(k, c);
        if (gamma != 0.0) v += gamma * rng.normal();
        xt(k, c) = v;
      }
      detail::conditional_drift_raw(drift, &xt(k, 0), &x0(k, 0), &x1(k, 0), d, tk, &target(k, 0), &diag);
    }
    loss_and_grad(net, t, xt, target, ws, lg);
    log.loss.push_back(lg.loss);
    optimizer_step(net, state, lg.grads, scheduled_lr(opt, step));
  }
  log.clipped = diag.clipped;
  return log;
}

// ---------------------------------------------------------------------------
// Text serialization. Values are hexadecimal floats so a write/read cycle is
// bit-exact. Layout:
//   network <name> <activation> <n_sizes> <size_0> ... <size_L>
//   array <name>.W<l> <rows> <cols>     (row-major values, one row per line)
//   array <name>.b<l> <rows> 1
// ---------------------------------------------------------------------------

inline void write_array(std::ostream& os, const std::string& name, const Eigen::MatrixXd& m) {
  os << "array " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) os << (c ? " " : "") << format_hex(m(r, c));
    os << '\n';
  }
}

inline Eigen::MatrixXd read_array(std::istream& is, const std::string& expected_name) {
  std::string tag, name;
  Eigen::Index rows = 0, cols = 0;
  if (!(is >> tag >> name >> rows >> cols) || tag != "array")
    throw DataError("checkpoint: expected array header for " + expected_name);
  if (name != expected_name) throw DataError("checkpoint: expected " + expected_name + ", found " + name);
  if (rows < 0 || cols < 0) throw DataError("checkpoint: negative array shape");
  Eigen::MatrixXd m(rows, cols);
  std::string tok;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!(is >> tok)) throw DataError("checkpoint: truncated array " + name);
      m(r, c) = parse_hex(tok);
    }
  return m;
}

inline void write_network(std::ostream& os, const std::string& name, const DriftNetwork& net) {
  os << "network " << name << ' ' << to_string(net.activation) << ' ' << net.layer_sizes.size();
  for (int s : net.layer_sizes) os << ' ' << s;
  os << '\n';
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    write_array(os, name + ".W" + std::to_string(l), net.params.W[l]);
    write_array(os, name + ".b" + std::to_string(l), net.params.b[l]);
  }
}

inline DriftNetwork read_network(std::istream& is, const std::string& expected_name) {
  std::string tag, name, act;
  std::size_t count = 0;
  if (!(is >> tag >> name >> act >> count) || tag != "network")
    throw DataError("checkpoint: expected network header");
  if (name != expected_name) throw DataError("checkpoint: expected network " + expected_name);
  if (count < 2) throw DataError("checkpoint: network needs at least two layer sizes");
  DriftNetwork net;
  net.activation = parse_activation(act);
  net.layer_sizes.resize(count);
  for (auto& s : net.layer_sizes)
    if (!(is >> s) || s <= 0) throw DataError("checkpoint: bad layer size");
  if (net.layer_sizes.front() != net.layer_sizes.back() + 1)
    throw DataError("checkpoint: input width must be output width + 1");
  for (std::size_t l = 0; l + 1 < count; ++l) {
    Eigen::MatrixXd w = read_array(is, name + ".W" + std::to_string(l));
    Eigen::MatrixXd b = read_array(is, name + ".b" + std::to_string(l));
    if (w.rows() != net.layer_sizes[l + 1] || w.cols() != net.layer_sizes[l] || b.rows() != w.rows() ||
        b.cols() != 1)
      throw DataError("checkpoint: layer shape does not match header");
    net.params.W.push_back(std::move(w));
    net.params.b.push_back(b.col(0));
  }
  return net;
}

}  // namespace bridgekit
