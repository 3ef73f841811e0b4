#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "mef/filter.hpp"
#include "mef/harness.hpp"

namespace mef {

/// Image size and intrinsics. Unset intrinsics default to focal = width and a
/// centred principal point.
struct GridSettings {
  int width = 32;
  int height = 32;
  std::optional<double> fx, fy, cx, cy;
  double skew = 0.0;
};

struct SceneSettings {
  Surface surface{Surface::Kind::SinusoidalRelief, 5.0, 0.0, 0.0, 1.0, 3.0};
  std::vector<lie::Vec6> twists{default_twist()};  // one entry = constant twist

  static lie::Vec6 default_twist();
};

/// Corruption of the synthetic forward flow.
struct NoiseSettings {
  double sigma_px = 0.0;           // Gaussian noise on forward and backward flow
  double outlier_fraction = 0.0;   // replaced forward vectors per frame
  double outlier_scale = 10.0;     // outlier length in multiples of the median flow
  double fb_tau_px = 1.0;          // forward/backward threshold; <= 0 disables the check
};

struct EvalSettings {
  std::optional<double> exclusion_px;  // default scales 50 px at width 1242
  std::optional<double> pixel_scale;   // normalized -> pixel disparity; default focal
};

struct RunConfig {
  GridSettings grid;
  SceneSettings scene;
  NoiseSettings noise;
  FilterConfig filter;
  double observation_sigma_px = 1.0;  // W = (focal / sigma)^2 I in normalized units
  std::optional<double> epipole_radius_px;  // epipole attenuation; default = exclusion radius, 0 disables
  EvalSettings eval;
  int frames = 20;
  std::uint64_t seed = 1;

  /// Throws DataError on inconsistent settings (and DomainError from the
  /// filter config).
  void validate() const;
};

/// Strict parse: unknown keys and wrong types throw DataError. Missing keys
/// keep their defaults.
RunConfig config_from_json(const nlohmann::json& j);
/// Full tree with every default written out.
nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig load_config(const std::filesystem::path& path);

PixelGrid make_grid(const GridSettings& g);
SyntheticScene make_scene(const RunConfig& cfg);
/// Filter settings with grid-dependent defaults resolved (epipole radius in
/// normalized units).
FilterConfig filter_config(const RunConfig& cfg, const PixelGrid& grid);
WeightField make_weight(const RunConfig& cfg, const PixelGrid& grid);
double exclusion_px(const RunConfig& cfg, const PixelGrid& grid);
double pixel_scale(const RunConfig& cfg, const PixelGrid& grid);

}  // namespace mef
