// bridgekit command-line front end: run, sample, check, datasets.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "bridgekit/acceptance.hpp"
#include "bridgekit/bridgekit.hpp"

namespace fs = std::filesystem;
using namespace bridgekit;

namespace {

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("BRIDGEKIT_SEED");
  if (!s || !*s) return std::nullopt;
  std::uint64_t v = 0;
  const char* end = s + std::char_traits<char>::length(s);
  auto res = std::from_chars(s, end, v);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError("BRIDGEKIT_SEED must be an unsigned integer");
  return v;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write '" + p.string() + "'");
  return out;
}

void write_points_csv(std::ostream& os, const Mat& pts, int dim) {
  for (int c = 0; c < dim; ++c) os << (c ? "," : "") << "x_" << c;
  os << '\n';
  for (Eigen::Index r = 0; r < pts.rows(); ++r) {
    for (Eigen::Index c = 0; c < pts.cols(); ++c) os << (c ? "," : "") << format_real(pts(r, c));
    os << '\n';
  }
}

int cmd_run(const std::string& config_path, std::optional<int> threads, const std::string& out_override) {
  RunConfig rc = load_run_config(config_path);
  if (auto s = env_seed()) rc.uba.seed = *s;
  if (threads) rc.uba.threads = *threads;
  if (!out_override.empty()) rc.output.dir = out_override;
  rc.validate();

  const fs::path dir(rc.output.dir);
  fs::create_directories(dir);
  const UbaRunResult res = run(rc.uba, rc.pi0, rc.pi1);

  if (rc.output.export_metrics) {
    auto out = open_out(dir / "metrics.csv");
    write_metrics_csv(out, res.history);
  }
  const UbaConfig& c = rc.uba;
  const Rng root(c.seed);
  if (rc.output.export_samples && !rc.output.sample_times.empty()) {
    Rng rng = root.substream(11);
    const SampleBatch src = sample(rc.pi0, c.eval_n, rng);
    SimOptions so;
    so.threads = c.threads;
    for (double t : rc.output.sample_times) so.snapshot_steps.push_back(int(std::lround(t * c.eval_sim_steps)));
    const SimResult sim = simulate_batch(network_drift(res.state.forward), src, c.diffusion.sigma,
                                         TimeGrid::forward(c.eval_sim_steps), rng, so);
    for (std::size_t k = 0; k < rc.output.sample_times.size(); ++k) {
      auto out = open_out(dir / ("samples_t" + format_real(rc.output.sample_times[k]) + ".csv"));
      write_points_csv(out, sim.snapshots[k], c.diffusion.dim);
    }
  }
  if (rc.output.export_trajectories && rc.output.trajectory_n > 0) {
    Rng rng = root.substream(12);
    const SampleBatch src = sample(rc.pi0, rc.output.trajectory_n, rng);
    SimOptions so;
    so.keep_trajectories = true;
    const SimResult sim = simulate_batch(network_drift(res.state.forward), src, c.diffusion.sigma,
                                         TimeGrid::forward(c.eval_sim_steps), rng, so);
    auto out = open_out(dir / "trajectories.csv");
    write_trajectories_csv(out, sim.trajectories);
  }
  save_checkpoint((dir / "checkpoint").string(), Checkpoint{rc, res.state.forward, res.state.reverse});
  std::cout << "wrote results to " << dir.string() << '\n';
  return 0;
}

int cmd_sample(const std::string& path, std::size_t n, const std::string& direction, const std::string& out_path,
               const std::string& source_path, int threads) {
  const Checkpoint cp = load_checkpoint(path);
  const UbaConfig& c = cp.config.uba;
  Direction dir;
  if (direction == "fwd") {
    dir = Direction::forward;
  } else if (direction == "rev") {
    dir = Direction::reverse;
  } else {
    throw ConfigError("direction must be fwd or rev");
  }
  if (dir == Direction::reverse && !cp.reverse)
    throw ConfigError("checkpoint has no reverse network (only dsbm runs train one)");
  const DriftNetwork& net = dir == Direction::forward ? cp.forward : *cp.reverse;
  Rng rng = Rng(env_seed().value_or(c.seed)).substream(13);

  Mat result(0, c.diffusion.dim);
  if (n > 0) {
    SampleBatch src;
    if (!source_path.empty()) {
      Mat pts = read_points_csv_file(source_path);
      if (pts.cols() != c.diffusion.dim) throw DataError("source dimension does not match the checkpoint");
      if (std::size_t(pts.rows()) < n) throw DataError("source file has fewer than n rows");
      src = SampleBatch(Mat(pts.topRows(Eigen::Index(n))));
    } else {
      src = sample(dir == Direction::forward ? cp.config.pi0 : cp.config.pi1, n, rng);
    }
    const TimeGrid grid = dir == Direction::forward ? TimeGrid::forward(c.eval_sim_steps)
                                                    : TimeGrid::reverse(c.eval_sim_steps);
    SimOptions so;
    so.threads = threads;
    result = simulate_batch(network_drift(net), src, c.diffusion.sigma, grid, rng, so).terminal.points();
  }
  auto out = open_out(out_path);
  write_points_csv(out, result, c.diffusion.dim);
  return 0;
}

int cmd_check(bool fast, const std::vector<int>& only, int threads) {
  acceptance::SuiteOptions opt;
  opt.fast = fast;
  opt.only = only;
  opt.threads = threads;
  const auto results = acceptance::run_suite(opt, std::cout);
  for (const auto& r : results)
    if (!r.passed) return 1;
  return 0;
}

int cmd_datasets(const std::string& kind, std::size_t n, const std::string& out_path, std::uint64_t seed) {
  EndpointDistribution dist;
  if (kind == "eight_gaussians") {
    dist = EndpointDistribution::eight_gaussians();
  } else if (kind == "two_moons") {
    dist = EndpointDistribution::two_moons();
  } else if (kind == "checkerboard") {
    dist = EndpointDistribution::checkerboard();
  } else if (kind == "gaussian") {
    dist = EndpointDistribution::gaussian(Vec::Zero(2), Vec::Ones(2));
  } else {
    throw ConfigError("unknown dataset kind '" + kind + "' (eight_gaussians, two_moons, checkerboard, gaussian)");
  }
  Rng rng(env_seed().value_or(seed));
  Mat pts(0, dist.dim);
  if (n > 0) pts = sample(dist, n, rng).points();
  auto out = open_out(out_path);
  write_points_csv(out, pts, dist.dim);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bridgekit: diffusion bridge matching toolkit"};
  app.require_subcommand(1);

  std::optional<int> threads;

  auto* run_cmd = app.add_subcommand("run", "train a bridge from a JSON config");
  std::string config_path, out_dir;
  run_cmd->add_option("config", config_path, "config file")->required();
  run_cmd->add_option("--out", out_dir, "output directory (overrides output.dir)");

  auto* sample_cmd = app.add_subcommand("sample", "generate endpoint samples from a checkpoint");
  std::string checkpoint, direction = "fwd", out_path, source_path;
  std::size_t n = 0;
  sample_cmd->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  sample_cmd->add_option("--n", n, "number of samples")->required();
  sample_cmd->add_option("--direction", direction, "fwd or rev")->check(CLI::IsMember({"fwd", "rev"}));
  sample_cmd->add_option("--out", out_path, "output CSV")->required();
  sample_cmd->add_option("--source", source_path, "CSV of source points (default: sample the source endpoint)");

  auto* check_cmd = app.add_subcommand("check", "run the acceptance suite");
  bool fast = false;
  std::vector<int> only;
  check_cmd->add_flag("--fast", fast, "fast subset only");
  check_cmd->add_option("--only", only, "run only these criteria");

  auto* data_cmd = app.add_subcommand("datasets", "write samples of a toy dataset");
  std::string kind, data_out;
  std::size_t data_n = 0;
  std::uint64_t data_seed = 0;
  data_cmd->add_option("--kind", kind, "eight_gaussians, two_moons, checkerboard, gaussian")->required();
  data_cmd->add_option("--n", data_n, "number of samples")->required();
  data_cmd->add_option("--out", data_out, "output CSV")->required();
  data_cmd->add_option("--seed", data_seed, "seed (BRIDGEKIT_SEED overrides)");

  for (auto* sub : {run_cmd, sample_cmd, check_cmd, data_cmd})
    sub->add_option("--threads", threads, "worker threads (default 1)")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*run_cmd) return cmd_run(config_path, threads, out_dir);
    if (*sample_cmd) return cmd_sample(checkpoint, n, direction, out_path, source_path, threads.value_or(1));
    if (*check_cmd) return cmd_check(fast, only, threads.value_or(1));
    if (*data_cmd) return cmd_datasets(kind, data_n, data_out, data_seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
