#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "mef/config.hpp"
#include "mef/errors.hpp"
#include "mef/io.hpp"

using namespace mef;
namespace fs = std::filesystem;

namespace {

class IoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("mef_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path path(const std::string& name) const { return dir_ / name; }

  fs::path dir_;
};

std::vector<float> random_floats(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-50.0f, 50.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_F(IoTest, FloRoundTripIsBitExact) {
  io::FlowImage img{7, 5, random_floats(70, 1)};
  img.uv[3] = io::kUnknownFlow;
  io::write_flo(path("a.flo"), img);
  EXPECT_EQ(io::read_flo(path("a.flo")), img);
  const std::string b = bytes(path("a.flo"));
  ASSERT_EQ(b.size(), 12u + 70u * 4u);
  float magic;
  std::memcpy(&magic, b.data(), 4);
  EXPECT_EQ(magic, 202021.25f);
  std::int32_t w;
  std::memcpy(&w, b.data() + 4, 4);
  EXPECT_EQ(w, 7);
}

TEST_F(IoTest, FloRejectsBadInput) {
  io::write_text(path("bad.flo"), "PIEH");
  EXPECT_THROW(io::read_flo(path("bad.flo")), DataError);
  EXPECT_THROW(io::read_flo(path("missing.flo")), DataError);
  io::FlowImage img{4, 4, random_floats(32, 2)};
  io::write_flo(path("t.flo"), img);
  fs::resize_file(path("t.flo"), 12 + 20);
  EXPECT_THROW(io::read_flo(path("t.flo")), DataError);
}

TEST_F(IoTest, PfmRoundTripAndLayout) {
  io::FloatImage img{3, 2, {1, 2, 3, 4, 5, 6}};
  io::write_pfm(path("a.pfm"), img);
  EXPECT_EQ(io::read_pfm(path("a.pfm")), img);
  const std::string b = bytes(path("a.pfm"));
  const std::string header = "Pf\n3 2\n-1\n";
  ASSERT_EQ(b.substr(0, header.size()), header);
  float first;
  std::memcpy(&first, b.data() + header.size(), 4);
  EXPECT_EQ(first, 4.0f);  // bottom row first
  io::FloatImage big{9, 4, random_floats(36, 3)};
  io::write_pfm(path("b.pfm"), big);
  EXPECT_EQ(io::read_pfm(path("b.pfm")), big);
}

TEST_F(IoTest, PfmRejectsBigEndianAndColor) {
  io::write_text(path("be.pfm"), std::string("Pf\n1 1\n1\n") + std::string(4, '\0'));
  EXPECT_THROW(io::read_pfm(path("be.pfm")), DataError);
  io::write_text(path("pf.pfm"), std::string("PF\n1 1\n-1\n") + std::string(12, '\0'));
  EXPECT_THROW(io::read_pfm(path("pf.pfm")), DataError);
}

TEST_F(IoTest, Png16RoundTrip) {
  io::Image16 img{5, 3, {}};
  for (int i = 0; i < 15; ++i) img.data.push_back(static_cast<std::uint16_t>(i * 4369));
  io::write_png16(path("a.png"), img);
  EXPECT_EQ(io::read_png16(path("a.png")), img);
  io::write_text(path("junk.png"), "not a png");
  EXPECT_THROW(io::read_png16(path("junk.png")), DataError);
}

TEST_F(IoTest, DisparityPngWithinQuantization) {
  const PixelGrid g = PixelGrid::with_default_intrinsics(8, 6);
  Eigen::VectorXd d(g.size());
  for (Eigen::Index i = 0; i < g.size(); ++i) d(i) = 0.15 + 0.004 * static_cast<double>(i);
  Mask valid(static_cast<std::size_t>(g.size()), 1);
  valid[5] = 0;
  const double scale = 8.0;
  io::write_png16(path("d.png"), io::disparity_to_png16(d, valid, scale, g));
  Mask back_valid;
  const Eigen::VectorXd back = io::disparity_from_png16(io::read_png16(path("d.png")), scale, &back_valid);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    if (i == 5) {
      EXPECT_EQ(back_valid[5], 0);
      continue;
    }
    EXPECT_EQ(back_valid[static_cast<std::size_t>(i)], 1);
    EXPECT_LE(std::abs(back(i) - d(i)) * scale, 1.0 / 256.0);
  }
}

TEST_F(IoTest, KittiFlowRoundTrip) {
  io::FlowImage img{4, 3, {}};
  for (int i = 0; i < 12; ++i) {
    img.uv.push_back(static_cast<float>(i) / 64.0f - 0.5f);
    img.uv.push_back(-static_cast<float>(i) / 32.0f);
  }
  img.uv[4] = img.uv[5] = io::kUnknownFlow;
  io::write_kitti_flow(path("k.png"), img);
  EXPECT_EQ(io::read_kitti_flow(path("k.png")), img);
}

TEST_F(IoTest, FlowFieldConversionsInvertEachOther) {
  const PixelGrid g = PixelGrid::with_default_intrinsics(6, 4);
  FlowField f = FlowField::zeros(g.size());
  for (Eigen::Index i = 0; i < g.size(); ++i) f.vectors.col(i) = Vec2(0.01 * i, -0.02 * i);
  f.valid[2] = 0;
  const io::FlowImage img = io::flow_to_image(f, g);
  EXPECT_FLOAT_EQ(img.uv[2 * 3], 0.03f * 6.0f);
  EXPECT_EQ(img.uv[4], io::kUnknownFlow);
  const FlowField back = io::flow_from_image(img, g);
  EXPECT_EQ(back.valid, f.valid);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    if (f.is_valid(i)) {
      EXPECT_LT((back.vectors.col(i) - f.vectors.col(i)).norm(), 1e-7);
    }
  }
}

TEST_F(IoTest, PosesRoundTrip) {
  std::vector<io::PoseRecord> poses;
  for (int k = 0; k < 3; ++k) {
    lie::Vec6 xi;
    xi << 0.01 * k, -0.02, 0.03, 0.1, 0.2 * k, -0.3;
    poses.push_back({k, lie::SE3::exp(xi), xi});
  }
  io::write_poses(path("p.json"), poses);
  const auto back = io::read_poses(path("p.json"));
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(back[k].frame, poses[k].frame);
    EXPECT_EQ(back[k].motion.matrix(), poses[k].motion.matrix());
    EXPECT_EQ(back[k].twist, poses[k].twist);
  }
  EXPECT_THROW(io::se3_from_json(nlohmann::json::parse(R"({"R": [[2,0,0],[0,1,0],[0,0,1]], "t": [0,0,0]})")),
               DataError);
}

TEST_F(IoTest, ReportRoundTrip) {
  EvalReport r;
  r.p3px_occ = 1.25;
  r.median_rel_depth_err = 0.1 + 0.2;
  r.rotation_err_deg = 1e-17;
  EXPECT_EQ(io::report_from_json(io::report_to_json(r)), r);
  const auto j = io::diagnostics_to_json(Diagnostics{3, 1.5, 0.1, 0.05, 2.0, 0.1, 0, 4, 12});
  EXPECT_EQ(j.at("frame"), 3);
  EXPECT_EQ(j.at("substeps"), 12);
}

TEST_F(IoTest, FrameNames) {
  EXPECT_EQ(io::frame_name("flow", 3, ".flo"), "flow_0003.flo");
  EXPECT_EQ(io::frame_name("disparity", 12345, ".pfm"), "disparity_12345.pfm");
}

TEST(Config, DefaultsRoundTrip) {
  const RunConfig c;
  const RunConfig back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(back.frames, 20);
  EXPECT_EQ(back.grid.width, 32);
  EXPECT_EQ(back.filter.R_cc, c.filter.R_cc);
}

TEST(Config, PartialAndNested) {
  const auto j = nlohmann::json::parse(R"({
    "grid": {"width": 16, "height": 12},
    "filter": {"beta": 0.7, "R0_cc": 0.5, "substeps": 8},
    "noise": {"outlier_fraction": 0.1},
    "seed": 42
  })");
  const RunConfig c = config_from_json(j);
  EXPECT_EQ(c.grid.width, 16);
  EXPECT_EQ(c.grid.height, 12);
  EXPECT_DOUBLE_EQ(c.filter.penalty.beta, 0.7);
  EXPECT_EQ(c.filter.R0_cc, Mat12::Identity() * 0.5);
  EXPECT_EQ(c.filter.substeps, 8);
  EXPECT_DOUBLE_EQ(c.noise.outlier_fraction, 0.1);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.frames, 20);
  const PixelGrid g = make_grid(c.grid);
  EXPECT_EQ(g.intrinsics()(0, 0), 16.0);
  EXPECT_EQ(g.intrinsics()(1, 2), 5.5);
}

TEST(Config, EpipoleRadiusDefaultsToExclusionRadius) {
  RunConfig c;
  const PixelGrid g = make_grid(c.grid);
  EXPECT_DOUBLE_EQ(filter_config(c, g).epipole_rho, default_exclusion_px(32) / 32.0);
  c = config_from_json(nlohmann::json::parse(R"({"filter": {"epipole_radius_px": 0}})"));
  EXPECT_EQ(filter_config(c, g).epipole_rho, 0.0);
  c = config_from_json(nlohmann::json::parse(R"({"eval": {"exclusion_px": 4}})"));
  EXPECT_DOUBLE_EQ(filter_config(c, g).epipole_rho, 4.0 / 32.0);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"filter": {"epipole_radius_px": -1}})")), DataError);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"frame": 3})")), DataError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"filter": {"betta": 0.5}})")), DataError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"filter": {"hessian": "bfgs"}})")), DataError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"filter": {"metric": "left"}})")), DataError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"frames": "ten"})")), DataError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"filter": {"R_cc": [1, 2]}})")), DataError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"([1, 2])")), DataError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"filter": {"substeps": 0}})")), DataError);
  RunConfig c;
  c.frames = 0;
  EXPECT_THROW(c.validate(), DataError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), DataError);
}
