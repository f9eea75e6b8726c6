#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "ssn/serialize.hpp"

namespace fs = std::filesystem;
using namespace ssn;

namespace {

struct Run {
  int code;
  std::string output;
};

Run run_cli(const std::string& args) {
  const fs::path log = fs::path(::testing::TempDir()) / "cli_log.txt";
  const std::string cmd = std::string(SSN_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::path(::testing::TempDir()) / ("ssn_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    std::ostringstream csv;
    csv << "a,b,z,y\n";
    for (int i = 0; i < 300; ++i) {
      const double a = nd(rng), b = nd(rng), z = nd(rng);
      csv << a << ',' << b << ',' << z << ',' << 2 * a + std::sin(2 * b) + z * z + 0.3 * nd(rng) << '\n';
    }
    write_file(dir / "data.csv", csv.str());
    write_file(dir / "run.ini", config());
  }

  std::string config(const std::string& target = "y", const std::string& extra = "") const {
    return "[data]\npath = data.csv\ntarget = " + target +
           "\n\n[terms]\n(Intercept) = intercept\na = linear(a)\ns(b) = bspline(b, 7)\n\n"
           "[network]\nhidden = 8, 4\ndropout = 0.1\n\n[train]\nmax_epochs = 15\npatience = 5\nseed = 3\n" +
           extra;
  }

  std::string ini() const { return (dir / "run.ini").string(); }
  std::string out(const std::string& name) const { return (dir / name).string(); }

  fs::path dir;
};

DenseVector beta_tilde(const fs::path& pho_file) {
  std::ifstream in(pho_file);
  return read_pho(in).beta_tilde;
}

}  // namespace

TEST_F(Cli, TrainWritesModelAndHistory) {
  const auto r = run_cli("train --config " + ini() + " --out " + out("o"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto model = load_model(out("o") + "/model.txt");
  std::ostringstream os;
  write_model(os, model);
  EXPECT_EQ(os.str(), slurp(dir / "o" / "model.txt"));
  EXPECT_EQ(model.target, "y");
  EXPECT_EQ(model.z_columns, (std::vector<std::string>{"a", "b", "z"}));
  // one history row per epoch run
  const auto hist = slurp(dir / "o" / "history.csv");
  const auto rows = std::count(hist.begin(), hist.end(), '\n') - 1;
  const auto pos = r.output.find("model: ");
  ASSERT_NE(pos, std::string::npos);
  EXPECT_EQ(rows, std::stol(r.output.substr(pos + 7)));
}

TEST_F(Cli, ConfigErrorsExitTwoWithKeyName) {
  write_file(dir / "bad_target.ini", config("nope"));
  auto r = run_cli("train --config " + out("bad_target.ini") + " --out " + out("o"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("data.target"), std::string::npos) << r.output;

  write_file(dir / "bad_key.ini", config("y", "learning_rat = 0.1\n"));
  r = run_cli("train --config " + out("bad_key.ini") + " --out " + out("o"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("train.learning_rat"), std::string::npos) << r.output;

  EXPECT_EQ(run_cli("train --out " + out("o")).code, 2);
  EXPECT_EQ(run_cli("frobnicate").code, 2);
  EXPECT_EQ(run_cli("experiment nope --out " + out("o")).code, 2);
  EXPECT_EQ(run_cli("experiment benchmark --out " + out("o")).code, 2);
}

TEST_F(Cli, PhoIsIdempotentAndPhogamZeroMatches) {
  ASSERT_EQ(run_cli("train --config " + ini() + " --out " + out("o")).code, 0);
  ASSERT_EQ(run_cli("pho --config " + ini() + " --out " + out("o")).code, 0);
  ASSERT_EQ(run_cli("pho --config " + ini() + " --out " + out("again") + " --model " + out("o") + "/model_pho.txt").code, 0);
  const DenseVector first = beta_tilde(dir / "o" / "pho.txt");
  const DenseVector second = beta_tilde(dir / "again" / "pho.txt");
  EXPECT_LE((first - second).cwiseAbs().maxCoeff(), 1e-9);

  const auto r = run_cli("pho --config " + ini() + " --out " + out("gam") + " --model " + out("o") +
                         "/model.txt --mode phogam --lambda 0");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_LE((beta_tilde(dir / "gam" / "pho.txt") - first).cwiseAbs().maxCoeff(), 1e-9);
  ASSERT_EQ(run_cli("pho --config " + ini() + " --out " + out("auto") + " --model " + out("o") +
                    "/model.txt --mode phogam --lambda auto").code,
            0);
}

TEST_F(Cli, MinibatchPathMatchesFull) {
  ASSERT_EQ(run_cli("train --config " + ini() + " --out " + out("o")).code, 0);
  ASSERT_EQ(run_cli("pho --config " + ini() + " --out " + out("o")).code, 0);
  write_file(dir / "mb.ini", config("y", "\n[pho]\nminibatch_threshold = 10\nbatch_size = 7\n"));
  const auto r = run_cli("pho --config " + out("mb.ini") + " --out " + out("mb") + " --model " + out("o") + "/model.txt");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("minibatch"), std::string::npos);
  EXPECT_LE((beta_tilde(dir / "mb" / "pho.txt") - beta_tilde(dir / "o" / "pho.txt")).cwiseAbs().maxCoeff(), 1e-8);
}

TEST_F(Cli, DecomposeAndImportance) {
  ASSERT_EQ(run_cli("train --config " + ini() + " --out " + out("o")).code, 0);
  ASSERT_EQ(run_cli("pho --config " + ini() + " --out " + out("o")).code, 0);
  ASSERT_EQ(run_cli("decompose --config " + ini() + " --out " + out("o")).code, 0);
  EXPECT_EQ(slurp(dir / "o" / "decomposition.csv"), slurp(dir / "o" / "contributions.csv"));
  ASSERT_EQ(run_cli("importance --config " + ini() + " --out " + out("o")).code, 0);
  const auto imp = slurp(dir / "o" / "importance.csv");
  EXPECT_NE(imp.find("mcfadden_r2,s(b),"), std::string::npos);

  // data without a structured column cannot be decomposed
  write_file(dir / "short.csv", "a,z,y\n1,2,3\n2,3,4\n");
  EXPECT_EQ(run_cli("decompose --config " + ini() + " --out " + out("o") + " --data " + out("short.csv")).code, 3);
}

TEST_F(Cli, ExperimentOutputIsDeterministic) {
  write_file(dir / "er.ini",
             "[experiment]\nn = 400\nbatch_sizes = 1, 10, 100, 200\n\n[train]\nmax_epochs = 5\n");
  ASSERT_EQ(run_cli("experiment error-rate --config " + out("er.ini") + " --out " + out("e1")).code, 0);
  ASSERT_EQ(run_cli("experiment error-rate --config " + out("er.ini") + " --out " + out("e2")).code, 0);
  const auto a = slurp(dir / "e1" / "error-rate.csv");
  EXPECT_EQ(a, slurp(dir / "e2" / "error-rate.csv"));
  EXPECT_NE(a.find(",slope,"), std::string::npos);
  ASSERT_EQ(run_cli("experiment error-rate --config " + out("er.ini") + " --out " + out("e3") + " --seed 9").code, 0);
  EXPECT_NE(a, slurp(dir / "e3" / "error-rate.csv"));
}
