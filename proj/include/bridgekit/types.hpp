#pragma once

#include <Eigen/Dense>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <string>
#include <system_error>

#include "bridgekit/error.hpp"

namespace bridgekit {

using Vec = Eigen::VectorXd;
// Point clouds are stored one point per row.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) { return m.allFinite(); }

struct DiffusionConfig {
  double sigma = 0.0;      // diffusion of the learned SDE
  double sigma_ref = 1.0;  // reference Brownian motion
  int dim = 1;

  void validate() const {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw DomainError("sigma must be finite and >= 0");
    if (!(sigma_ref >= 0.0) || !std::isfinite(sigma_ref))
      throw DomainError("sigma_ref must be finite and >= 0");
    if (dim <= 0) throw DomainError("dim must be positive");
  }
};

/// A finite point cloud with optional probability weights (uniform when empty).
class SampleBatch {
 public:
  SampleBatch() = default;
  explicit SampleBatch(Mat points) : points_(std::move(points)) { check(); }
  SampleBatch(Mat points, Vec weights) : points_(std::move(points)), weights_(std::move(weights)) {
    check();
  }

  const Mat& points() const { return points_; }
  Mat& mutable_points() { return points_; }
  std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
  int dim() const { return static_cast<int>(points_.cols()); }
  bool empty() const { return points_.rows() == 0; }
  bool has_weights() const { return weights_.size() > 0; }

  Vec weights() const {
    if (has_weights()) return weights_;
    return Vec::Constant(points_.rows(), points_.rows() ? 1.0 / double(points_.rows()) : 0.0);
  }
  double weight(std::size_t i) const {
    return has_weights() ? weights_[Eigen::Index(i)] : 1.0 / double(points_.rows());
  }
  bool uniform() const { return !has_weights(); }

  Vec row(std::size_t i) const { return points_.row(Eigen::Index(i)).transpose(); }

 private:
  void check() const {
    if (!points_.allFinite()) throw DataError("sample batch contains non-finite entries");
    if (has_weights()) {
      if (weights_.size() != points_.rows()) throw ShapeError("weights length != number of points");
      if ((weights_.array() < 0.0).any()) throw DataError("sample weights must be nonnegative");
      if (std::abs(weights_.sum() - 1.0) > 1e-12) throw DataError("sample weights must sum to 1");
    }
  }

  Mat points_;
  Vec weights_;
};

// Locale-independent shortest-of-9-significant-digits rendering used by all CSV output.
inline std::string format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 9);
  return std::string(buf, res.ptr);
}

// Bit-exact text form (hexadecimal float).
inline std::string format_hex(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::hex);
  return std::string(buf, res.ptr);
}

inline double parse_hex(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw DataError("malformed hex float '" + std::string(s) + "'");
  return v;
}

}  // namespace bridgekit
