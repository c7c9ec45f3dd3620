#pragma once

#include <fstream>
#include <initializer_list>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bridgekit/data.hpp"
#include "bridgekit/error.hpp"
#include "bridgekit/net.hpp"
#include "bridgekit/uba.hpp"

namespace bridgekit {

using Json = nlohmann::ordered_json;

struct OutputConfig {
  std::string dir = "out";
  std::vector<double> sample_times{1.0};
  bool export_samples = true;
  bool export_trajectories = false;
  std::size_t trajectory_n = 16;
  bool export_metrics = true;
};

/// Everything a `run` needs: the UBA configuration, both endpoint
/// distributions and the output settings.
struct RunConfig {
  UbaConfig uba;
  EndpointDistribution pi0;
  EndpointDistribution pi1;
  OutputConfig output;

  void validate() const {
    pi0.validate();
    pi1.validate();
    if (pi0.dim != pi1.dim) throw ConfigError("pi0 and pi1 must have the same dimension");
    if (uba.diffusion.dim != pi0.dim) throw ConfigError("diffusion.dim does not match the data dimension");
    uba.validate();
    for (double t : output.sample_times)
      if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("sample_times must lie in [0, 1]");
  }
};

namespace detail {

inline void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <class T>
T get_or(const Json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), Eigen::Index(v.size())); }
inline std::vector<double> from_vec(const Vec& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace detail

inline Json dist_to_json(const EndpointDistribution& d) {
  Json j;
  j["kind"] = std::string(to_string(d.kind));
  switch (d.kind) {
    case DistKind::gaussian:
      j["mean"] = detail::from_vec(d.means.at(0));
      j["std"] = detail::from_vec(d.stds.at(0));
      break;
    case DistKind::gaussian_mixture: {
      Json means = Json::array(), stds = Json::array();
      for (const auto& m : d.means) means.push_back(detail::from_vec(m));
      for (const auto& s : d.stds) stds.push_back(detail::from_vec(s));
      j["means"] = means;
      j["stds"] = stds;
      j["weights"] = d.weights;
      break;
    }
    case DistKind::two_moons: j["noise"] = d.noise; break;
    case DistKind::checkerboard: break;
    case DistKind::point_mass: j["point"] = detail::from_vec(d.point); break;
    case DistKind::file: j["path"] = d.path; break;
  }
  return j;
}

/// Besides the enum kinds, accepts the alias `eight_gaussians` (radius, std).
inline EndpointDistribution dist_from_json(const Json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("kind")) throw ConfigError(where + " needs a 'kind'");
  const std::string kind = j.at("kind").get<std::string>();
  using detail::get_or;
  if (kind == "eight_gaussians") {
    detail::check_keys(j, {"kind", "radius", "std"}, where);
    return EndpointDistribution::eight_gaussians(get_or(j, "radius", 4.0, where), get_or(j, "std", 0.3, where));
  }
  switch (parse_dist_kind(kind)) {
    case DistKind::gaussian: {
      detail::check_keys(j, {"kind", "mean", "std"}, where);
      const auto mean = get_or(j, "mean", std::vector<double>{}, where);
      const auto std = get_or(j, "std", std::vector<double>(mean.size(), 1.0), where);
      if (mean.empty()) throw ConfigError(where + ".mean is required");
      if (std.size() != mean.size()) throw ConfigError(where + ".std must match mean length");
      return EndpointDistribution::gaussian(detail::to_vec(mean), detail::to_vec(std));
    }
    case DistKind::gaussian_mixture: {
      detail::check_keys(j, {"kind", "means", "stds", "weights"}, where);
      const auto means = get_or(j, "means", std::vector<std::vector<double>>{}, where);
      const auto stds = get_or(j, "stds", std::vector<std::vector<double>>{}, where);
      const auto weights = get_or(j, "weights", std::vector<double>{}, where);
      std::vector<Vec> m, s;
      for (const auto& v : means) m.push_back(detail::to_vec(v));
      for (const auto& v : stds) s.push_back(detail::to_vec(v));
      return EndpointDistribution::mixture(std::move(m), std::move(s), weights);
    }
    case DistKind::two_moons:
      detail::check_keys(j, {"kind", "noise"}, where);
      return EndpointDistribution::two_moons(get_or(j, "noise", 0.05, where));
    case DistKind::checkerboard:
      detail::check_keys(j, {"kind"}, where);
      return EndpointDistribution::checkerboard();
    case DistKind::point_mass: {
      detail::check_keys(j, {"kind", "point"}, where);
      const auto p = get_or(j, "point", std::vector<double>{}, where);
      if (p.empty()) throw ConfigError(where + ".point is required");
      return EndpointDistribution::point_mass(detail::to_vec(p));
    }
    case DistKind::file:
      detail::check_keys(j, {"kind", "path"}, where);
      return EndpointDistribution::from_file(get_or(j, "path", std::string{}, where));
  }
  throw ConfigError("unreachable distribution kind");
}

inline Json to_json(const RunConfig& rc) {
  const UbaConfig& c = rc.uba;
  Json j;
  j["instantiation"] = std::string(to_string(c.instantiation));
  j["outer_iters"] = c.outer_iters;
  j["inner_steps"] = c.inner_steps;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["lr_final"] = c.lr_final;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["network"] = {{"hidden", c.hidden}, {"activation", std::string(to_string(c.activation))}};
  j["diffusion"] = {{"sigma", c.diffusion.sigma}, {"sigma_ref", c.diffusion.sigma_ref}, {"dim", c.diffusion.dim}};
  j["path"] = {{"kind", c.path_kind ? Json(std::string(to_string(*c.path_kind))) : Json(nullptr)},
               {"sigma_min", c.sigma_min}};
  j["drift"] = {{"kind", c.drift_kind ? Json(std::string(to_string(*c.drift_kind))) : Json(nullptr)},
                {"t_clip", c.t_clip}};
  j["coupling"] = {{"refresh", std::string(to_string(c.refresh))},
                   {"pool_n", c.pool_n},
                   {"sinkhorn_tol", c.sinkhorn_tol},
                   {"sinkhorn_max_iter", c.sinkhorn_max_iter}};
  j["sim"] = {{"train_steps", c.train_sim_steps}, {"eval_steps", c.eval_sim_steps}};
  j["eval"] = {{"n", c.eval_n}, {"every", c.eval_every}, {"baseline_repeats", c.baseline_repeats}};
  j["data"] = {{"n", c.data_n}, {"pi0", dist_to_json(rc.pi0)}, {"pi1", dist_to_json(rc.pi1)}};
  j["output"] = {{"dir", rc.output.dir},
                 {"sample_times", rc.output.sample_times},
                 {"export_samples", rc.output.export_samples},
                 {"export_trajectories", rc.output.export_trajectories},
                 {"trajectory_n", rc.output.trajectory_n},
                 {"export_metrics", rc.output.export_metrics}};
  return j;
}

/// Parses and validates a run configuration. Unknown keys are rejected;
/// omitted keys take their defaults.
inline RunConfig run_config_from_json(const Json& j) {
  using detail::get_or;
  detail::check_keys(j,
                     {"instantiation", "outer_iters", "inner_steps", "batch_size", "lr", "lr_final", "seed",
                      "threads", "network", "diffusion", "path", "drift", "coupling", "sim", "eval", "data",
                      "output"},
                     "config");
  RunConfig rc;
  UbaConfig& c = rc.uba;
  const std::string root = "config";
  if (!j.contains("instantiation")) throw ConfigError("config.instantiation is required");
  c.instantiation = parse_instantiation(j.at("instantiation").get<std::string>());
  c.outer_iters = get_or(j, "outer_iters", c.outer_iters, root);
  c.inner_steps = get_or(j, "inner_steps", c.inner_steps, root);
  c.batch_size = get_or(j, "batch_size", c.batch_size, root);
  c.lr = get_or(j, "lr", c.lr, root);
  c.lr_final = get_or(j, "lr_final", c.lr_final, root);
  c.seed = get_or(j, "seed", c.seed, root);
  c.threads = get_or(j, "threads", c.threads, root);

  const Json empty = Json::object();
  auto section = [&](const char* key, std::initializer_list<const char*> keys) -> const Json& {
    if (!j.contains(key)) return empty;
    detail::check_keys(j.at(key), keys, root + "." + key);
    return j.at(key);
  };
  const Json& net = section("network", {"hidden", "activation"});
  c.hidden = get_or(net, "hidden", c.hidden, "network");
  c.activation = parse_activation(get_or(net, "activation", std::string(to_string(c.activation)), "network"));

  const Json& dif = section("diffusion", {"sigma", "sigma_ref", "dim"});
  c.diffusion.sigma = get_or(dif, "sigma", c.diffusion.sigma, "diffusion");
  c.diffusion.sigma_ref = get_or(dif, "sigma_ref", c.diffusion.sigma_ref, "diffusion");
  const int dim = get_or(dif, "dim", 0, "diffusion");  // 0: taken from the data

  const Json& path = section("path", {"kind", "sigma_min"});
  if (path.contains("kind") && !path.at("kind").is_null())
    c.path_kind = parse_path_kind(path.at("kind").get<std::string>());
  c.sigma_min = get_or(path, "sigma_min", c.sigma_min, "path");

  const Json& drift = section("drift", {"kind", "t_clip"});
  if (drift.contains("kind") && !drift.at("kind").is_null())
    c.drift_kind = parse_drift_kind(drift.at("kind").get<std::string>());
  c.t_clip = get_or(drift, "t_clip", c.t_clip, "drift");

  const Json& cp = section("coupling", {"refresh", "pool_n", "sinkhorn_tol", "sinkhorn_max_iter"});
  c.refresh = parse_refresh(get_or(cp, "refresh", std::string(to_string(c.refresh)), "coupling"));
  c.pool_n = get_or(cp, "pool_n", c.pool_n, "coupling");
  c.sinkhorn_tol = get_or(cp, "sinkhorn_tol", c.sinkhorn_tol, "coupling");
  c.sinkhorn_max_iter = get_or(cp, "sinkhorn_max_iter", c.sinkhorn_max_iter, "coupling");

  const Json& sim = section("sim", {"train_steps", "eval_steps"});
  c.train_sim_steps = get_or(sim, "train_steps", c.train_sim_steps, "sim");
  c.eval_sim_steps = get_or(sim, "eval_steps", c.eval_sim_steps, "sim");

  const Json& ev = section("eval", {"n", "every", "baseline_repeats"});
  c.eval_n = get_or(ev, "n", c.eval_n, "eval");
  c.eval_every = get_or(ev, "every", c.eval_every, "eval");
  c.baseline_repeats = get_or(ev, "baseline_repeats", c.baseline_repeats, "eval");

  const Json& data = section("data", {"n", "pi0", "pi1"});
  c.data_n = get_or(data, "n", c.data_n, "data");
  if (!data.contains("pi0") || !data.contains("pi1")) throw ConfigError("config.data needs pi0 and pi1");
  rc.pi0 = dist_from_json(data.at("pi0"), "data.pi0");
  rc.pi1 = dist_from_json(data.at("pi1"), "data.pi1");
  c.diffusion.dim = rc.pi0.dim;
  if (dim != 0 && dim != rc.pi0.dim) throw ConfigError("diffusion.dim does not match the data dimension");

  const Json& out = section("output", {"dir", "sample_times", "export_samples", "export_trajectories",
                                       "trajectory_n", "export_metrics"});
  rc.output.dir = get_or(out, "dir", rc.output.dir, "output");
  rc.output.sample_times = get_or(out, "sample_times", rc.output.sample_times, "output");
  rc.output.export_samples = get_or(out, "export_samples", rc.output.export_samples, "output");
  rc.output.export_trajectories = get_or(out, "export_trajectories", rc.output.export_trajectories, "output");
  rc.output.trajectory_n = get_or(out, "trajectory_n", rc.output.trajectory_n, "output");
  rc.output.export_metrics = get_or(out, "export_metrics", rc.output.export_metrics, "output");

  rc.validate();
  return rc;
}

inline RunConfig parse_run_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  try {
    return run_config_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

// ---------------------------------------------------------------------------
// Checkpoint file, version 1:
//   bridgekit-checkpoint 1
//   config <single-line JSON run configuration>
//   network forward ...      (see write_network)
//   network reverse ...      (optional, dsbm)
//   end
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  DriftNetwork forward;
  std::optional<DriftNetwork> reverse;
};

inline void write_checkpoint(std::ostream& os, const Checkpoint& cp) {
  os << "bridgekit-checkpoint " << kCheckpointVersion << '\n';
  os << "config " << to_json(cp.config).dump() << '\n';
  write_network(os, "forward", cp.forward);
  if (cp.reverse) write_network(os, "reverse", *cp.reverse);
  os << "end\n";
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "bridgekit-checkpoint")
    throw DataError("not a bridgekit checkpoint");
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  std::string tag;
  if (!(is >> tag) || tag != "config") throw DataError("checkpoint: missing config line");
  std::string line;
  std::getline(is, line);
  Checkpoint cp;
  cp.config = parse_run_config(line);
  cp.forward = read_network(is, "forward");
  std::streampos pos = is.tellg();
  if (!(is >> tag)) throw DataError("checkpoint: missing end marker");
  if (tag == "network") {
    is.seekg(pos);
    cp.reverse = read_network(is, "reverse");
    if (!(is >> tag)) throw DataError("checkpoint: missing end marker");
  }
  if (tag != "end") throw DataError("checkpoint: expected end marker, found '" + tag + "'");
  if (cp.forward.dim() != cp.config.uba.diffusion.dim) throw DataError("checkpoint: network dimension mismatch");
  return cp;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& cp) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  write_checkpoint(out, cp);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace bridgekit
