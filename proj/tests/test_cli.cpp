// Drives the bridgekit executable end to end.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "bridgekit/data.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("bridgekit_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  void write(const std::string& name, const std::string& text) const { std::ofstream(path(name)) << text; }

  Result run(const std::string& args, const std::string& env = "") const {
    const std::string cmd = env + " " + BRIDGEKIT_CLI + std::string(" ") + args + " > " + path("stdout").string() +
                            " 2> " + path("stderr").string();
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(path("stdout"));
    r.err = slurp(path("stderr"));
    return r;
  }

  std::string config(const std::string& instantiation, double sigma, int outer_iters = 1) const {
    std::ostringstream os;
    os << R"({"instantiation": ")" << instantiation << R"(", "outer_iters": )" << outer_iters << R"(, "inner_steps": 50, "batch_size": 32,)"
       << R"( "seed": 5, "network": {"hidden": [8]}, "diffusion": {"sigma": )" << sigma << R"(, "sigma_ref": 1},)"
       << R"( "coupling": {"pool_n": 64}, "sim": {"train_steps": 10, "eval_steps": 20},)"
       << R"( "eval": {"n": 64, "baseline_repeats": 2},)"
       << R"( "data": {"n": 200, "pi0": {"kind": "point_mass", "point": [0, 0]},)"
       << R"( "pi1": {"kind": "point_mass", "point": [0, 0]}}})";
    return os.str();
  }

  fs::path dir_;
};

std::size_t count_lines(const std::string& s) { return std::size_t(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_F(Cli, RunPointMassWritesOutputs) {
  write("c.json", config("imf", 1.0));
  const Result r = run("run " + path("c.json").string() + " --out " + path("out").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string metrics = slurp(path("out") / "metrics.csv");
  EXPECT_EQ(metrics.rfind("iteration,name,value,std_error\n", 0), 0u);
  EXPECT_GT(count_lines(metrics), 1u);
  EXPECT_TRUE(fs::exists(path("out") / "checkpoint"));
  EXPECT_EQ(count_lines(slurp(path("out") / "samples_t1.csv")), 65u);
}

TEST_F(Cli, RunIsDeterministic) {
  write("c.json", config("dsbm", 1.0, 2));
  // Same output dir both times: the checkpoint echoes it in its config line.
  const std::string cmd = "run " + path("c.json").string() + " --threads 1 --out " + path("out").string();
  ASSERT_EQ(run(cmd).code, 0);
  const std::string metrics = slurp(path("out") / "metrics.csv"), ckpt = slurp(path("out") / "checkpoint");
  EXPECT_FALSE(metrics.empty());
  ASSERT_EQ(run(cmd).code, 0);
  EXPECT_EQ(metrics, slurp(path("out") / "metrics.csv"));
  EXPECT_EQ(ckpt, slurp(path("out") / "checkpoint"));
}

TEST_F(Cli, SigmaConsistencyIsAConfigError) {
  write("c.json", config("imf", 0.0));
  const Result r = run("run " + path("c.json").string() + " --out " + path("out").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("sigma-consistency rule"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(path("out") / "metrics.csv"));
}

TEST_F(Cli, BadInvocations) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("run").code, 2);
  EXPECT_EQ(run("run " + path("missing.json").string()).code, 2);
  write("c.json", "{ not json");
  EXPECT_EQ(run("run " + path("c.json").string()).code, 2);
  EXPECT_EQ(run("sample " + path("nope").string() + " --n 3 --out x.csv").code, 1);
}

TEST_F(Cli, SampleEdgeCases) {
  // outer_iters = 0 leaves the zero network; with sigma = 0 sampling is the identity.
  write("c.json", config("ot_cfm", 0.0, 0));
  ASSERT_EQ(run("run " + path("c.json").string() + " --out " + path("out").string()).code, 0);
  const std::string ckpt = (path("out") / "checkpoint").string();

  ASSERT_EQ(run("sample " + ckpt + " --n 0 --out " + path("empty.csv").string()).code, 0);
  EXPECT_EQ(slurp(path("empty.csv")), "x_0,x_1\n");

  write("src.csv", "0.5,-1\n2.25,3\n-7,0.125\n");
  ASSERT_EQ(run("sample " + ckpt + " --n 3 --source " + path("src.csv").string() + " --out " + path("s.csv").string()).code,
            0);
  EXPECT_EQ(slurp(path("s.csv")), "x_0,x_1\n0.5,-1\n2.25,3\n-7,0.125\n");

  const Result rev = run("sample " + ckpt + " --n 3 --direction rev --out " + path("r.csv").string());
  EXPECT_EQ(rev.code, 2);
  EXPECT_NE(rev.err.find("reverse"), std::string::npos);
}

TEST_F(Cli, SampleFromTrainedCheckpoint) {
  write("c.json", config("dsbm", 1.0, 2));
  ASSERT_EQ(run("run " + path("c.json").string() + " --out " + path("out").string()).code, 0);
  const std::string ckpt = (path("out") / "checkpoint").string();
  for (const char* dir : {"fwd", "rev"}) {
    const fs::path out = path(std::string(dir) + ".csv");
    ASSERT_EQ(run("sample " + ckpt + " --n 25 --direction " + dir + " --out " + out.string()).code, 0);
    std::ifstream in(out);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "x_0,x_1");
    const bridgekit::Mat pts = bridgekit::read_points_csv(in);
    EXPECT_EQ(pts.rows(), 25);
    EXPECT_TRUE(pts.allFinite());
  }
}

TEST_F(Cli, Datasets) {
  ASSERT_EQ(run("datasets --kind two_moons --n 40 --out " + path("m.csv").string()).code, 0);
  EXPECT_EQ(count_lines(slurp(path("m.csv"))), 41u);
  ASSERT_EQ(run("datasets --kind eight_gaussians --n 10 --seed 3 --out " + path("a.csv").string()).code, 0);
  ASSERT_EQ(run("datasets --kind eight_gaussians --n 10 --seed 4 --out " + path("b.csv").string(), "BRIDGEKIT_SEED=3")
                .code,
            0);
  EXPECT_EQ(slurp(path("a.csv")), slurp(path("b.csv")));
  EXPECT_EQ(run("datasets --kind spiral --n 10 --out " + path("c.csv").string()).code, 2);
}

TEST_F(Cli, CheckOnlyRunsSelectedCriteria) {
  const Result r = run("check --only 1 5");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("criterion  1"), std::string::npos);
  EXPECT_NE(r.out.find("criterion  5"), std::string::npos);
  EXPECT_EQ(r.out.find("criterion  2"), std::string::npos);
  EXPECT_NE(r.out.find("2/2 criteria passed"), std::string::npos);
}
