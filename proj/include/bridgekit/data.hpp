#pragma once

#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bridgekit/error.hpp"
#include "bridgekit/rng.hpp"
#include "bridgekit/types.hpp"

namespace bridgekit {

enum class DistKind { gaussian, gaussian_mixture, two_moons, checkerboard, point_mass, file };

inline std::string_view to_string(DistKind k) {
  switch (k) {
    case DistKind::gaussian: return "gaussian";
    case DistKind::gaussian_mixture: return "gaussian_mixture";
    case DistKind::two_moons: return "two_moons";
    case DistKind::checkerboard: return "checkerboard";
    case DistKind::point_mass: return "point_mass";
    case DistKind::file: return "file";
  }
  return "?";
}

inline DistKind parse_dist_kind(std::string_view s) {
  if (s == "gaussian") return DistKind::gaussian;
  if (s == "gaussian_mixture") return DistKind::gaussian_mixture;
  if (s == "two_moons") return DistKind::two_moons;
  if (s == "checkerboard") return DistKind::checkerboard;
  if (s == "point_mass") return DistKind::point_mass;
  if (s == "file") return DistKind::file;
  throw ConfigError("unknown distribution kind '" + std::string(s) + "'");
}

/// Reads one point per row, comma separated, no header.
inline Mat read_points_csv(std::istream& is) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const auto b = cell.find_first_not_of(" \t");
      const auto e = cell.find_last_not_of(" \t");
      if (b == std::string::npos) throw ParseError("empty field", line_no);
      const std::string tok = cell.substr(b, e - b + 1);
      double v = 0.0;
      auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v))
        throw ParseError("malformed number '" + tok + "'", line_no);
      row.push_back(v);
    }
    if (!line.empty() && line.back() == ',') throw ParseError("trailing comma", line_no);
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError("row has " + std::to_string(row.size()) + " fields, expected " +
                           std::to_string(rows.front().size()),
                       line_no);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("no data rows", line_no);
  Mat m(Eigen::Index(rows.size()), Eigen::Index(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(Eigen::Index(r), Eigen::Index(c)) = rows[r][c];
  return m;
}

inline Mat read_points_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_points_csv(in);
}

/// Seeded sampler for a toy endpoint distribution pi_0 or pi_1.
struct EndpointDistribution {
  DistKind kind = DistKind::gaussian;
  int dim = 1;
  // gaussian (one component) and gaussian_mixture: means, diagonal stds, weights.
  std::vector<Vec> means;
  std::vector<Vec> stds;
  std::vector<double> weights;
  double noise = 0.05;  // two_moons
  Vec point;            // point_mass
  std::string path;     // file

  static EndpointDistribution gaussian(Vec mean, Vec std) {
    EndpointDistribution d;
    d.kind = DistKind::gaussian;
    d.dim = int(mean.size());
    d.means = {std::move(mean)};
    d.stds = {std::move(std)};
    d.weights = {1.0};
    d.validate();
    return d;
  }

  static EndpointDistribution gaussian_1d(double mean, double std) {
    return gaussian(Vec::Constant(1, mean), Vec::Constant(1, std));
  }

  static EndpointDistribution mixture(std::vector<Vec> means, std::vector<Vec> stds, std::vector<double> weights) {
    EndpointDistribution d;
    d.kind = DistKind::gaussian_mixture;
    d.dim = means.empty() ? 0 : int(means.front().size());
    d.means = std::move(means);
    d.stds = std::move(stds);
    d.weights = std::move(weights);
    d.validate();
    return d;
  }

  // Eight components on a ring of radius 4, std 0.3 each.
  static EndpointDistribution eight_gaussians(double radius = 4.0, double std = 0.3) {
    std::vector<Vec> means, stds;
    for (int k = 0; k < 8; ++k) {
      const double a = double(k) * std::numbers::pi / 4.0;
      Vec m(2);
      m << radius * std::cos(a), radius * std::sin(a);
      means.push_back(m);
      stds.push_back(Vec::Constant(2, std));
    }
    return mixture(std::move(means), std::move(stds), std::vector<double>(8, 1.0 / 8.0));
  }

  // Unit-radius moons; the second is reflected and offset by (1, 0.5).
  static EndpointDistribution two_moons(double noise = 0.05) {
    EndpointDistribution d;
    d.kind = DistKind::two_moons;
    d.dim = 2;
    d.noise = noise;
    d.validate();
    return d;
  }

  // Alternating 2x2 cells of a 4x4 board on [-4, 4]^2.
  static EndpointDistribution checkerboard() {
    EndpointDistribution d;
    d.kind = DistKind::checkerboard;
    d.dim = 2;
    return d;
  }

  static EndpointDistribution point_mass(Vec at) {
    EndpointDistribution d;
    d.kind = DistKind::point_mass;
    d.dim = int(at.size());
    d.point = std::move(at);
    d.validate();
    return d;
  }

  static EndpointDistribution from_file(std::string path) {
    EndpointDistribution d;
    d.kind = DistKind::file;
    d.path = std::move(path);
    d.load();
    d.dim = int(d.cache_->cols());
    return d;
  }

  void validate() const {
    if (dim <= 0) throw ConfigError("distribution dimension must be positive");
    switch (kind) {
      case DistKind::gaussian:
      case DistKind::gaussian_mixture: {
        if (means.empty() || means.size() != stds.size() || means.size() != weights.size())
          throw ConfigError("gaussian components need matching means, stds and weights");
        if (kind == DistKind::gaussian && means.size() != 1) throw ConfigError("gaussian has one component");
        double total = 0.0;
        for (std::size_t k = 0; k < means.size(); ++k) {
          if (means[k].size() != dim || stds[k].size() != dim) throw ConfigError("component dimension mismatch");
          if (!((stds[k].array() > 0.0).all())) throw ConfigError("component stds must be positive");
          if (!(weights[k] >= 0.0)) throw ConfigError("mixture weights must be nonnegative");
          total += weights[k];
        }
        if (std::abs(total - 1.0) > 1e-9) throw ConfigError("mixture weights must sum to 1");
        break;
      }
      case DistKind::two_moons:
      case DistKind::checkerboard:
        if (dim != 2) throw ConfigError(std::string(to_string(kind)) + " is two-dimensional");
        if (!(noise >= 0.0)) throw ConfigError("noise must be nonnegative");
        break;
      case DistKind::point_mass:
        if (point.size() != dim) throw ConfigError("point mass dimension mismatch");
        break;
      case DistKind::file:
        if (path.empty()) throw ConfigError("file distribution needs a path");
        break;
    }
  }

  const Mat& file_points() const {
    if (!cache_) load();
    return *cache_;
  }

 private:
  void load() const { cache_ = std::make_shared<const Mat>(read_points_csv_file(path)); }

  mutable std::shared_ptr<const Mat> cache_;
};

/// n i.i.d. draws; deterministic given the stream.
inline SampleBatch sample(const EndpointDistribution& dist, std::size_t n, Rng& rng) {
  dist.validate();
  const int d = dist.dim;
  Mat out(Eigen::Index(n), d);
  for (Eigen::Index r = 0; r < Eigen::Index(n); ++r) {
    switch (dist.kind) {
      case DistKind::gaussian:
      case DistKind::gaussian_mixture: {
        std::size_t k = 0;
        if (dist.means.size() > 1) {
          double u = rng.uniform(), acc = 0.0;
          for (k = 0; k + 1 < dist.weights.size(); ++k) {
            acc += dist.weights[k];
            if (u < acc) break;
          }
        }
        for (int c = 0; c < d; ++c) out(r, c) = dist.means[k][c] + dist.stds[k][c] * rng.normal();
        break;
      }
      case DistKind::two_moons: {
        const bool upper = rng.uniform() < 0.5;
        const double theta = std::numbers::pi * rng.uniform();
        double x = std::cos(theta), y = std::sin(theta);
        if (!upper) {
          x = 1.0 - x;
          y = 0.5 - y;
        }
        out(r, 0) = x + dist.noise * rng.normal();
        out(r, 1) = y + dist.noise * rng.normal();
        break;
      }
      case DistKind::checkerboard: {
        // 8 dark cells: (ix + iy) even on the 4x4 board of 2x2 cells.
        const auto cell = rng.uniform_int(8);
        const int iy = int(cell / 2);
        const int ix = int(2 * (cell % 2) + (iy % 2));
        out(r, 0) = -4.0 + 2.0 * (double(ix) + rng.uniform());
        out(r, 1) = -4.0 + 2.0 * (double(iy) + rng.uniform());
        break;
      }
      case DistKind::point_mass:
        out.row(r) = dist.point.transpose();
        break;
      case DistKind::file: {
        const Mat& pts = dist.file_points();
        if (pts.cols() != d) throw DataError("file dimension does not match distribution dimension");
        out.row(r) = pts.row(Eigen::Index(rng.uniform_int(std::uint64_t(pts.rows()))));
        break;
      }
    }
  }
  return SampleBatch(std::move(out));
}

}  // namespace bridgekit
