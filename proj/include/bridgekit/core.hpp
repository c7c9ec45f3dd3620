#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <string_view>

#include "bridgekit/error.hpp"
#include "bridgekit/rng.hpp"
#include "bridgekit/types.hpp"

namespace bridgekit {

// Interpolation weights of the pinned mean: mu_t = a * x0 + b * x1.
struct MeanWeights {
  double a = 0.0;
  double b = 0.0;
};

struct MeanSchedule {
  std::function<MeanWeights(double)> weights;
  // Optional analytic derivative; central finite differences are used when empty.
  std::function<MeanWeights(double)> weights_dt;
};

struct StdSchedule {
  std::function<double(double)> gamma;
  std::function<double(double)> gamma_dt;
};

inline constexpr double kScheduleFdStep = 1e-6;

inline MeanWeights schedule_weights_dt(const MeanSchedule& s, double t) {
  if (s.weights_dt) return s.weights_dt(t);
  const double h = kScheduleFdStep;
  const double lo = std::max(0.0, t - h);
  const double hi = std::min(1.0, t + h);
  const MeanWeights wl = s.weights(lo), wh = s.weights(hi);
  return {(wh.a - wl.a) / (hi - lo), (wh.b - wl.b) / (hi - lo)};
}

inline double schedule_gamma_dt(const StdSchedule& s, double t) {
  if (s.gamma_dt) return s.gamma_dt(t);
  const double h = kScheduleFdStep;
  const double lo = std::max(0.0, t - h);
  const double hi = std::min(1.0, t + h);
  return (s.gamma(hi) - s.gamma(lo)) / (hi - lo);
}

inline MeanSchedule linear_mean_schedule() {
  return {[](double t) { return MeanWeights{1.0 - t, t}; },
          [](double) { return MeanWeights{-1.0, 1.0}; }};
}

inline StdSchedule constant_std_schedule(double value) {
  return {[value](double) { return value; }, [](double) { return 0.0; }};
}

// gamma_t = sigma_ref * sqrt(t (1 - t)).
inline StdSchedule brownian_bridge_std_schedule(double sigma_ref) {
  return {[sigma_ref](double t) { return sigma_ref * std::sqrt(std::max(0.0, t * (1.0 - t))); },
          [sigma_ref](double t) {
            const double s = std::sqrt(t * (1.0 - t));
            return sigma_ref * (1.0 - 2.0 * t) / (2.0 * s);
          }};
}

enum class PathKind { linear_sigma_min, brownian_bridge, custom_schedule };

inline std::string_view to_string(PathKind k) {
  switch (k) {
    case PathKind::linear_sigma_min: return "linear_sigma_min";
    case PathKind::brownian_bridge: return "brownian_bridge";
    case PathKind::custom_schedule: return "custom_schedule";
  }
  return "?";
}

inline PathKind parse_path_kind(std::string_view s) {
  if (s == "linear_sigma_min") return PathKind::linear_sigma_min;
  if (s == "brownian_bridge") return PathKind::brownian_bridge;
  if (s == "custom_schedule") return PathKind::custom_schedule;
  throw ConfigError("unknown pinned path kind '" + std::string(s) + "'");
}

/// Gaussian pinned path P_t(x | x0, x1) = N(a_t x0 + b_t x1, gamma_t^2 I).
class PinnedPathSpec {
 public:
  static constexpr double kDefaultSigmaMin = 1e-2;

  static PinnedPathSpec linear(double sigma_min = kDefaultSigmaMin) {
    if (!(sigma_min >= 0.0)) throw DomainError("sigma_min must be >= 0");
    PinnedPathSpec p;
    p.kind_ = PathKind::linear_sigma_min;
    p.sigma_min_ = sigma_min;
    p.mean_ = linear_mean_schedule();
    p.std_ = constant_std_schedule(sigma_min);
    return p;
  }

  static PinnedPathSpec brownian_bridge(double sigma_ref) {
    if (!(sigma_ref >= 0.0)) throw DomainError("sigma_ref must be >= 0");
    PinnedPathSpec p;
    p.kind_ = PathKind::brownian_bridge;
    p.sigma_ref_ = sigma_ref;
    p.mean_ = linear_mean_schedule();
    p.std_ = brownian_bridge_std_schedule(sigma_ref);
    return p;
  }

  static PinnedPathSpec custom(MeanSchedule mean, StdSchedule std_schedule) {
    if (!mean.weights || !std_schedule.gamma) throw DomainError("custom schedule needs weights and gamma");
    const MeanWeights w0 = mean.weights(0.0), w1 = mean.weights(1.0);
    constexpr double tol = 1e-12;
    if (std::abs(w0.a - 1.0) > tol || std::abs(w0.b) > tol || std::abs(w1.a) > tol ||
        std::abs(w1.b - 1.0) > tol)
      throw DomainError("custom mean schedule must satisfy a_0=1, b_0=0, a_1=0, b_1=1");
    PinnedPathSpec p;
    p.kind_ = PathKind::custom_schedule;
    p.mean_ = std::move(mean);
    p.std_ = std::move(std_schedule);
    return p;
  }

  PathKind kind() const { return kind_; }
  double sigma_min() const { return sigma_min_; }
  double sigma_ref() const { return sigma_ref_; }
  const MeanSchedule& mean_schedule() const { return mean_; }
  const StdSchedule& std_schedule() const { return std_; }

  MeanWeights weights(double t) const { return mean_.weights(t); }
  double gamma(double t) const { return std_.gamma(t); }

 private:
  PinnedPathSpec() = default;

  PathKind kind_ = PathKind::linear_sigma_min;
  double sigma_min_ = 0.0;
  double sigma_ref_ = 0.0;
  MeanSchedule mean_;
  StdSchedule std_;
};

struct PinnedMoments {
  Vec mean;
  double std = 0.0;
};

namespace detail {

inline void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("time " + std::to_string(t) + " outside [0, 1]");
}

inline void check_same_dim(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) throw ShapeError(std::string("dimension mismatch: ") + what);
}

}  // namespace detail

inline PinnedMoments pinned_mean_std(const PinnedPathSpec& spec, const Eigen::Ref<const Vec>& x0,
                                     const Eigen::Ref<const Vec>& x1, double t) {
  detail::check_time(t);
  detail::check_same_dim(x0.size(), x1.size(), "x0 vs x1");
  const MeanWeights w = spec.weights(t);
  return {w.a * x0 + w.b * x1, spec.gamma(t)};
}

// Exact draw from the pinned Gaussian; no SDE is simulated.
inline Vec sample_pinned(const PinnedPathSpec& spec, const Eigen::Ref<const Vec>& x0,
                         const Eigen::Ref<const Vec>& x1, double t, Rng& rng) {
  PinnedMoments m = pinned_mean_std(spec, x0, x1, t);
  if (m.std == 0.0) return m.mean;
  for (Eigen::Index i = 0; i < m.mean.size(); ++i) m.mean[i] += m.std * rng.normal();
  return m.mean;
}

/// Minimal-kinetic-energy conditional drift for Gaussian schedules:
///   alpha_t = dmu_t/dt + a_t (x - mu_t),
///   a_t     = (dgamma_t/dt - sigma_ref^2 / (2 gamma_t)) / gamma_t.
inline Vec kinetic_drift(const MeanSchedule& mean, const StdSchedule& std_schedule, double sigma_ref,
                         const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Vec>& x0,
                         const Eigen::Ref<const Vec>& x1, double t) {
  detail::check_time(t);
  detail::check_same_dim(x.size(), x0.size(), "x vs x0");
  detail::check_same_dim(x0.size(), x1.size(), "x0 vs x1");
  const double gamma = std_schedule.gamma(t);
  if (!(gamma > 0.0)) throw DomainError("kinetic drift requires gamma_t > 0");
  const double gamma_dt = schedule_gamma_dt(std_schedule, t);
  const double a = (gamma_dt - sigma_ref * sigma_ref / (2.0 * gamma)) / gamma;
  const MeanWeights w = mean.weights(t);
  const MeanWeights dw = schedule_weights_dt(mean, t);
  return dw.a * x0 + dw.b * x1 + a * (x - (w.a * x0 + w.b * x1));
}

enum class DriftKind { constant_line, sb_bridge, doob_forward, doob_reverse, kinetic };

inline std::string_view to_string(DriftKind k) {
  switch (k) {
    case DriftKind::constant_line: return "constant_line";
    case DriftKind::sb_bridge: return "sb_bridge";
    case DriftKind::doob_forward: return "doob_forward";
    case DriftKind::doob_reverse: return "doob_reverse";
    case DriftKind::kinetic: return "kinetic";
  }
  return "?";
}

inline DriftKind parse_drift_kind(std::string_view s) {
  if (s == "constant_line") return DriftKind::constant_line;
  if (s == "sb_bridge") return DriftKind::sb_bridge;
  if (s == "doob_forward") return DriftKind::doob_forward;
  if (s == "doob_reverse") return DriftKind::doob_reverse;
  if (s == "kinetic") return DriftKind::kinetic;
  throw ConfigError("unknown conditional drift kind '" + std::string(s) + "'");
}

// Drift kinds that only reproduce the pinned marginals with zero diffusion.
inline bool drift_requires_ode(DriftKind k) {
  return k == DriftKind::constant_line || k == DriftKind::sb_bridge;
}

struct ConditionalDrift {
  static constexpr double kDefaultTClip = 1e-3;

  DriftKind kind = DriftKind::constant_line;
  PinnedPathSpec path = PinnedPathSpec::linear();
  double sigma_ref = 1.0;
  double t_clip = kDefaultTClip;

  // Time interval on which the kind is evaluated without clamping.
  std::pair<double, double> valid_interval() const {
    switch (kind) {
      case DriftKind::constant_line: return {0.0, 1.0};
      case DriftKind::doob_forward: return {0.0, 1.0 - t_clip};
      case DriftKind::doob_reverse: return {t_clip, 1.0};
      case DriftKind::sb_bridge:
      case DriftKind::kinetic: return {t_clip, 1.0 - t_clip};
    }
    return {0.0, 1.0};
  }
};

// Counts evaluations whose time was clamped into the valid interval.
struct DriftDiagnostics {
  std::size_t clipped = 0;
};

namespace detail {

// Kernel shared by the vector API and the batched training path.
inline void conditional_drift_raw(const ConditionalDrift& drift, const double* x, const double* x0,
                                  const double* x1, int d, double t, double* out,
                                  DriftDiagnostics* diag) {
  check_time(t);
  const auto [lo, hi] = drift.valid_interval();
  if (t < lo || t > hi) {
    t = std::clamp(t, lo, hi);
    if (diag) ++diag->clipped;
  }
  switch (drift.kind) {
    case DriftKind::constant_line:
      for (int i = 0; i < d; ++i) out[i] = x1[i] - x0[i];
      break;
    case DriftKind::sb_bridge: {
      const double c = (1.0 - 2.0 * t) / (2.0 * t * (1.0 - t));
      for (int i = 0; i < d; ++i)
        out[i] = c * (x[i] - (t * x1[i] + (1.0 - t) * x0[i])) + (x1[i] - x0[i]);
      break;
    }
    case DriftKind::doob_forward:
      for (int i = 0; i < d; ++i) out[i] = (x1[i] - x[i]) / (1.0 - t);
      break;
    case DriftKind::doob_reverse:
      for (int i = 0; i < d; ++i) out[i] = (x0[i] - x[i]) / t;
      break;
    case DriftKind::kinetic: {
      const auto& path = drift.path;
      const double gamma = path.gamma(t);
      if (!(gamma > 0.0)) throw DomainError("kinetic drift requires gamma_t > 0");
      const double gamma_dt = schedule_gamma_dt(path.std_schedule(), t);
      const double a = (gamma_dt - drift.sigma_ref * drift.sigma_ref / (2.0 * gamma)) / gamma;
      const MeanWeights w = path.weights(t);
      const MeanWeights dw = schedule_weights_dt(path.mean_schedule(), t);
      for (int i = 0; i < d; ++i)
        out[i] = dw.a * x0[i] + dw.b * x1[i] + a * (x[i] - (w.a * x0[i] + w.b * x1[i]));
      break;
    }
  }
}

}  // namespace detail

/// u_t(x | x0, x1) for the selected kind. Times inside the singular guard band
/// are clamped to the valid interval (and counted in `diag` when given).
inline Vec eval_conditional_drift(const ConditionalDrift& drift, const Eigen::Ref<const Vec>& x,
                                  const Eigen::Ref<const Vec>& x0, const Eigen::Ref<const Vec>& x1,
                                  double t, DriftDiagnostics* diag = nullptr) {
  detail::check_same_dim(x.size(), x0.size(), "x vs x0");
  detail::check_same_dim(x0.size(), x1.size(), "x0 vs x1");
  Vec out(x.size());
  const Vec xe = x, x0e = x0, x1e = x1;
  detail::conditional_drift_raw(drift, xe.data(), x0e.data(), x1e.data(), int(x.size()), t, out.data(),
                                diag);
  return out;
}

}  // namespace bridgekit
