#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mef/filter.hpp"
#include "mef/harness.hpp"
#include "mef/lie.hpp"
#include "mef/observation.hpp"

namespace mef::io {

namespace fs = std::filesystem;

/// Raw flow image in pixel units, row-major (u, v) pairs.
struct FlowImage {
  int width = 0;
  int height = 0;
  std::vector<float> uv;
  bool operator==(const FlowImage&) const = default;
};

/// Single-channel float image, row-major, top row first.
struct FloatImage {
  int width = 0;
  int height = 0;
  std::vector<float> data;
  bool operator==(const FloatImage&) const = default;
};

/// Single-channel 16-bit image, row-major, top row first.
struct Image16 {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> data;
  bool operator==(const Image16&) const = default;
};

// Middlebury convention for unknown flow.
inline constexpr float kUnknownFlow = 1e10f;
inline constexpr float kUnknownFlowThreshold = 1e9f;

/// .flo: float 202021.25, int32 width, int32 height, row-major float32 (u, v).
void write_flo(const fs::path& path, const FlowImage& img);
FlowImage read_flo(const fs::path& path);

/// PFM grayscale ("Pf"), little-endian (negative scale), bottom-up rows.
void write_pfm(const fs::path& path, const FloatImage& img);
FloatImage read_pfm(const fs::path& path);

/// 16-bit grayscale PNG.
void write_png16(const fs::path& path, const Image16& img);
Image16 read_png16(const fs::path& path);

/// KITTI flow PNG: 16-bit RGB, u = (R - 2^15) / 64, v = (G - 2^15) / 64,
/// valid = B. Invalid pixels are flagged with kUnknownFlow.
FlowImage read_kitti_flow(const fs::path& path);
void write_kitti_flow(const fs::path& path, const FlowImage& img);

// Conversions between images (pixel units) and grid fields (normalized units).
FlowImage flow_to_image(const FlowField& flow, const PixelGrid& grid);
FlowField flow_from_image(const FlowImage& img, const PixelGrid& grid);

/// Disparity maps are stored as inverse depth in float PFM.
FloatImage disparity_to_image(const Eigen::VectorXd& d, const PixelGrid& grid);
Eigen::VectorXd disparity_from_image(const FloatImage& img, const PixelGrid& grid);

/// KITTI disparity PNG: value = round(d * pixel_scale * 256), 0 = invalid.
Image16 disparity_to_png16(const Eigen::VectorXd& d, const Mask& valid, double pixel_scale,
                           const PixelGrid& grid);
Eigen::VectorXd disparity_from_png16(const Image16& img, double pixel_scale, Mask* valid = nullptr);

// JSON helpers.
nlohmann::json se3_to_json(const lie::SE3& E);
lie::SE3 se3_from_json(const nlohmann::json& j);

struct PoseRecord {
  int frame = 0;
  lie::SE3 motion;  // relative motion frame k -> k + 1
  lie::Vec6 twist = lie::Vec6::Zero();
};

void write_poses(const fs::path& path, const std::vector<PoseRecord>& poses);
std::vector<PoseRecord> read_poses(const fs::path& path);

nlohmann::json diagnostics_to_json(const Diagnostics& d);
nlohmann::json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

/// Writes text exactly; throws DataError with the path on failure.
void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

/// Frame file name with a zero-padded index, e.g. frame_name("flow", 3, ".flo").
std::string frame_name(const std::string& stem, int index, const std::string& ext);

}  // namespace mef::io
