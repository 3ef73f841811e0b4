#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "mef/io.hpp"

namespace fs = std::filesystem;
using namespace mef;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(MEF_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe)) r.output += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::size_t count_files(const fs::path& dir, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "mef_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    io::write_text(root_ / "small.json", R"({"grid": {"width": 12, "height": 12}, "frames": 3})");
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }
  static std::string p(const std::string& name) { return (root_ / name).string(); }

  static fs::path root_;
};

fs::path CliTest::root_;

}  // namespace

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("bogus").code, 1);
  EXPECT_EQ(run("filter").code, 1);
  EXPECT_EQ(run("simulate --frames 0").code, 1);
  EXPECT_EQ(run("simulate --beta").code, 1);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(CliTest, DataErrors) {
  EXPECT_EQ(run("filter " + p("does_not_exist")).code, 2);
  EXPECT_EQ(run("simulate --config " + p("missing.json")).code, 2);
  io::write_text(root_ / "unknown.json", R"({"grid": {"width": 12, "hieght": 12}})");
  const RunResult r = run("simulate --config " + p("unknown.json") + " --out " + p("x"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("hieght"), std::string::npos);
  io::write_text(root_ / "broken.json", "{");
  EXPECT_EQ(run("simulate --config " + p("broken.json")).code, 2);
}

TEST_F(CliTest, SimulateFilterEval) {
  ASSERT_EQ(run("simulate --config " + p("small.json") + " --out " + p("sim")).code, 0);
  EXPECT_EQ(count_files(root_ / "sim" / "flow", ".flo"), 3u);
  EXPECT_EQ(count_files(root_ / "sim" / "flow" / "backward", ".flo"), 3u);
  EXPECT_EQ(count_files(root_ / "sim" / "gt", ".pfm"), 3u);
  EXPECT_EQ(count_files(root_ / "sim" / "gt" / "disp_occ", ".png"), 3u);
  EXPECT_EQ(count_files(root_ / "sim" / "gt" / "disp_noc", ".png"), 3u);
  EXPECT_TRUE(fs::exists(root_ / "sim" / "gt" / "poses.json"));

  ASSERT_EQ(run("filter " + p("sim") + " --out " + p("est")).code, 0);
  EXPECT_EQ(count_files(root_ / "est" / "disparity", ".pfm"), 3u);
  EXPECT_EQ(count_files(root_ / "est" / "disparity", ".png"), 3u);
  const std::string diag = bytes(root_ / "est" / "diagnostics.jsonl");
  EXPECT_EQ(std::count(diag.begin(), diag.end(), '\n'), 3);
  EXPECT_EQ(io::read_poses(root_ / "est" / "poses.json").size(), 3u);

  const RunResult ev = run("eval " + p("est") + " " + p("sim/gt"));
  ASSERT_EQ(ev.code, 0) << ev.output;
  EXPECT_TRUE(fs::exists(root_ / "est" / "report.json"));
  EXPECT_TRUE(fs::exists(root_ / "est" / "report.csv"));

  EXPECT_EQ(run("filter " + p("sim") + " --frames 9 --out " + p("est9")).code, 2);
  EXPECT_EQ(run("eval " + p("est") + " " + p("nowhere")).code, 2);
}

TEST_F(CliTest, SeededRunsAreByteIdentical) {
  for (const char* d : {"a", "b"}) {
    ASSERT_EQ(run("simulate --config " + p("small.json") + " --seed 5 --out " + p(std::string("s") + d)).code, 0);
    ASSERT_EQ(run("filter " + p(std::string("s") + d) + " --out " + p(std::string("e") + d)).code, 0);
  }
  for (const char* f : {"flow/flow_0001.flo", "gt/disparity_0002.pfm", "config.json"}) {
    EXPECT_EQ(bytes(root_ / "sa" / f), bytes(root_ / "sb" / f)) << f;
  }
  for (const char* f : {"disparity/disparity_0002.pfm", "poses.json", "diagnostics.jsonl"}) {
    EXPECT_EQ(bytes(root_ / "ea" / f), bytes(root_ / "eb" / f)) << f;
  }
}

TEST_F(CliTest, EvalOfGroundTruthIsExact) {
  ASSERT_EQ(run("simulate --config " + p("small.json") + " --out " + p("gsim")).code, 0);
  const PixelGrid grid = PixelGrid::with_default_intrinsics(12, 12);
  for (double factor : {1.0, 0.5}) {
    const fs::path est = root_ / (factor == 1.0 ? "gt_est" : "gt_est_far");
    fs::create_directories(est / "disparity");
    fs::copy_file(root_ / "gsim" / "config.json", est / "config.json");
    fs::copy_file(root_ / "gsim" / "gt" / "poses.json", est / "poses.json");
    for (int k = 0; k < 3; ++k) {
      const std::string name = io::frame_name("disparity", k, ".pfm");
      const Eigen::VectorXd d = io::disparity_from_image(io::read_pfm(root_ / "gsim" / "gt" / name), grid);
      io::write_pfm(est / "disparity" / name, io::disparity_to_image(factor * d, grid));
    }
    const RunResult r = run("eval " + est.string() + " " + p("gsim/gt"));
    ASSERT_EQ(r.code, 0) << r.output;
    const auto report = nlohmann::json::parse(bytes(est / "report.json"));
    EXPECT_LT(report.at("mean").at("median_rel_depth_err").get<double>(), 1e-4) << factor;
    EXPECT_EQ(report.at("mean").at("p3px_occ").get<double>(), 0.0);
    EXPECT_LT(report.at("mean").at("rotation_err_deg").get<double>(), 1e-4);
  }
}

TEST_F(CliTest, Gradcheck) {
  const RunResult r = run("gradcheck");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(r.output.find("FAIL"), std::string::npos);
}

TEST_F(CliTest, Selftest) {
  const RunResult r = run("selftest");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("0 of"), std::string::npos);
}
