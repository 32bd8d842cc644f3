#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

int salab(const std::string& args) {
  std::string cmd = std::string(SALAB_CLI) + " " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

fs::path scratch() {
  fs::path p = fs::temp_directory_path() / "salab_cli_test";
  fs::create_directories(p);
  return p;
}

fs::path write(const std::string& name, const std::string& text) {
  fs::path p = scratch() / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST(Cli, Validate) {
  EXPECT_EQ(salab("validate " + write("ok.cfg", "experiment = mse_curve\n").string()), 0);
  EXPECT_EQ(salab("validate " + write("typo.cfg", "experiment = mse_curve\nalpha0 = 1\n").string()), 1);
  EXPECT_EQ(salab("validate " + (scratch() / "missing.cfg").string()), 1);
  EXPECT_EQ(salab("frobnicate"), 1);
}

TEST(Cli, MdpGenAndRun) {
  fs::path mdp = scratch() / "gen.mdp";
  fs::remove(mdp);
  EXPECT_EQ(salab("mdp gen --seed 3 --states 3 --actions 2 --branching 2 -o " + mdp.string()), 0);
  ASSERT_TRUE(fs::exists(mdp));
  fs::path out = scratch() / "run_out";
  auto cfg = write("run.cfg", "experiment = mse_curve\nruns = 3\nhorizon = 500\nmdp.file = " + mdp.string() +
                                  "\noutput_dir = " + out.string() + "\n");
  EXPECT_EQ(salab("run -q " + cfg.string()), 0);
  EXPECT_TRUE(fs::exists(out / "summary.json"));
  EXPECT_TRUE(fs::exists(out / "mse.csv"));
}

TEST(Cli, BoundsTable) {
  EXPECT_EQ(salab("bounds q_learning --states 3 --actions 2 --branching 2 --horizon 1000"), 0);
  EXPECT_EQ(salab("bounds nstep_td --n 3 --horizon 1000"), 0);
  EXPECT_EQ(salab("bounds q_learning --alpha 0.5"), 2);
  EXPECT_EQ(salab("bounds sarsa"), 1);
}

TEST(Cli, AssumptionViolationExitCode) {
  fs::path out = scratch() / "env_out";
  auto cfg = write("env.cfg", "experiment = bound_envelope\nruns = 2\nhorizon = 100\nstepsize.alpha = 0.5\noutput_dir = " +
                                  out.string() + "\n");
  EXPECT_EQ(salab("run -q " + cfg.string()), 2);
}
