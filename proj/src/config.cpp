#include "mef/config.hpp"

#include <cmath>
#include <set>
#include <string>

#include "mef/errors.hpp"
#include "mef/io.hpp"

namespace mef {

using nlohmann::json;

lie::Vec6 SceneSettings::default_twist() {
  lie::Vec6 v;
  v << 0.002, -0.003, 0.001, 0.05, 0.01, -0.02;
  return v;
}

namespace {

// Reads an object key by key and rejects whatever was not consumed.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw DataError(where_ + ": expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!has(key)) return;
    try {
      out = raw(key).template get<T>();
    } catch (const json::exception&) {
      throw DataError(where_ + "." + key + ": wrong type");
    }
  }

  template <class T>
  void get(const char* key, std::optional<T>& out) {
    if (!has(key)) return;
    if (raw(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }

  std::string name(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw DataError(where_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

// number -> s I, 12 numbers -> diagonal, 12 x 12 nested -> full.
Mat12 mat12_from_json(const json& j, const std::string& where) {
  Mat12 M = Mat12::Zero();
  try {
    if (j.is_number()) {
      M.diagonal().setConstant(j.get<double>());
    } else if (j.is_array() && j.size() == 12 && j[0].is_number()) {
      for (int i = 0; i < 12; ++i) M(i, i) = j[static_cast<std::size_t>(i)].get<double>();
    } else if (j.is_array() && j.size() == 12) {
      for (int r = 0; r < 12; ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || row.size() != 12) throw DataError(where + ": rows must have 12 entries");
        for (int c = 0; c < 12; ++c) M(r, c) = row[static_cast<std::size_t>(c)].get<double>();
      }
    } else {
      throw DataError(where + ": expected a number, 12 diagonal entries or a 12x12 matrix");
    }
  } catch (const json::exception&) {
    throw DataError(where + ": wrong type");
  }
  return M;
}

json mat12_to_json(const Mat12& M) {
  const bool diagonal = (M - Mat12(M.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0;
  json out = json::array();
  if (diagonal) {
    for (int i = 0; i < 12; ++i) out.push_back(M(i, i));
    return out;
  }
  for (int r = 0; r < 12; ++r) {
    json row = json::array();
    for (int c = 0; c < 12; ++c) row.push_back(M(r, c));
    out.push_back(row);
  }
  return out;
}

template <class E>
E enum_from(const std::string& s, const std::vector<std::pair<const char*, E>>& table,
            const std::string& where) {
  std::string choices;
  for (const auto& [name, value] : table) {
    if (s == name) return value;
    choices += std::string(choices.empty() ? "" : ", ") + name;
  }
  throw DataError(where + ": '" + s + "' is not one of " + choices);
}

template <class E>
std::string enum_to(E e, const std::vector<std::pair<const char*, E>>& table) {
  for (const auto& [name, value] : table) {
    if (value == e) return name;
  }
  return "?";
}

const std::vector<std::pair<const char*, Surface::Kind>> kSurfaceKinds = {
    {"plane", Surface::Kind::Plane},
    {"slanted_plane", Surface::Kind::SlantedPlane},
    {"sinusoidal_relief", Surface::Kind::SinusoidalRelief}};
const std::vector<std::pair<const char*, HessianMode>> kHessianModes = {
    {"gauss_newton", HessianMode::GaussNewton}, {"exact", HessianMode::Exact}};
const std::vector<std::pair<const char*, OutlierMode>> kOutlierModes = {
    {"scale_model_noise", OutlierMode::ScaleModelNoise},
    {"scale_observation", OutlierMode::ScaleObservation}};
const std::vector<std::pair<const char*, Penalty::Kind>> kPenalties = {
    {"charbonnier", Penalty::Kind::Charbonnier}, {"quadratic", Penalty::Kind::Quadratic}};

// Only the coordinate metric on se3 is implemented; the key documents it.
constexpr const char* kMetric = "coordinate";

lie::Vec6 vec6_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 6) throw DataError(where + ": expected 6 numbers");
  lie::Vec6 v;
  try {
    for (int i = 0; i < 6; ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
  } catch (const json::exception&) {
    throw DataError(where + ": wrong type");
  }
  return v;
}

void read_grid(const json& j, GridSettings& g) {
  Reader r(j, "grid");
  r.get("width", g.width);
  r.get("height", g.height);
  r.get("fx", g.fx);
  r.get("fy", g.fy);
  r.get("cx", g.cx);
  r.get("cy", g.cy);
  r.get("skew", g.skew);
  r.finish();
}

void read_scene(const json& j, SceneSettings& s) {
  Reader r(j, "scene");
  if (r.has("surface")) {
    Reader q(r.raw("surface"), "scene.surface");
    std::string kind = enum_to(s.surface.kind, kSurfaceKinds);
    q.get("kind", kind);
    s.surface.kind = enum_from(kind, kSurfaceKinds, q.name("kind"));
    q.get("depth", s.surface.depth);
    q.get("slope_x", s.surface.slope_x);
    q.get("slope_y", s.surface.slope_y);
    q.get("amplitude", s.surface.amplitude);
    q.get("wavelength", s.surface.wavelength);
    q.finish();
  }
  if (r.has("twists")) {
    const json& t = r.raw("twists");
    if (!t.is_array() || t.empty()) throw DataError("scene.twists: expected a non-empty list");
    s.twists.clear();
    for (std::size_t k = 0; k < t.size(); ++k) {
      s.twists.push_back(vec6_from_json(t[k], "scene.twists[" + std::to_string(k) + "]"));
    }
  }
  r.finish();
}

void read_noise(const json& j, NoiseSettings& n) {
  Reader r(j, "noise");
  r.get("sigma_px", n.sigma_px);
  r.get("outlier_fraction", n.outlier_fraction);
  r.get("outlier_scale", n.outlier_scale);
  r.get("fb_tau_px", n.fb_tau_px);
  r.finish();
}

void read_filter(const json& j, RunConfig& cfg) {
  FilterConfig& f = cfg.filter;
  Reader r(j, "filter");
  if (r.has("R_cc")) f.R_cc = mat12_from_json(r.raw("R_cc"), "filter.R_cc");
  if (r.has("R0_cc")) f.R0_cc = mat12_from_json(r.raw("R0_cc"), "filter.R0_cc");
  r.get("r_dd", f.r_dd);
  r.get("r0_dd", f.r0_dd);

  std::string penalty = enum_to(f.penalty.kind, kPenalties);
  r.get("penalty", penalty);
  f.penalty.kind = enum_from(penalty, kPenalties, r.name("penalty"));
  r.get("nu", f.penalty.nu);
  r.get("beta", f.penalty.beta);

  std::string hessian = enum_to(f.hessian, kHessianModes);
  r.get("hessian", hessian);
  f.hessian = enum_from(hessian, kHessianModes, r.name("hessian"));

  std::string metric = kMetric;
  r.get("metric", metric);
  if (metric != kMetric) throw DataError("filter.metric: only 'coordinate' is supported");

  r.get("substeps", f.substeps);
  r.get("frame_interval", f.frame_interval);
  r.get("stiffness_limit", f.stiffness_limit);
  r.get("max_substeps", f.max_substeps);
  r.get("epipole_weighting", f.epipole_weighting);
  r.get("epipole_radius_px", cfg.epipole_radius_px);

  std::string outlier = enum_to(f.outlier_mode, kOutlierModes);
  r.get("outlier_mode", outlier);
  f.outlier_mode = enum_from(outlier, kOutlierModes, r.name("outlier_mode"));
  r.get("outlier_factor", f.outlier_factor);

  r.get("propagate_disparity", f.propagate_disparity);
  r.get("propagate_gain", f.propagate_gain);
  r.get("disocclusion_gain_factor", f.disocclusion_gain_factor);
  r.get("sparsify", f.sparsify);
  r.get("observation_sigma_px", cfg.observation_sigma_px);
  r.finish();
}

void read_eval(const json& j, EvalSettings& e) {
  Reader r(j, "eval");
  r.get("exclusion_px", e.exclusion_px);
  r.get("pixel_scale", e.pixel_scale);
  r.finish();
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

void RunConfig::validate() const {
  if (grid.width < 2 || grid.height < 2) throw DataError("grid: width and height must be >= 2");
  for (const auto* v : {&grid.fx, &grid.fy}) {
    if (*v && !(**v > 0.0)) throw DataError("grid: focal lengths must be positive");
  }
  if (scene.twists.empty()) throw DataError("scene.twists: empty");
  if (!(scene.surface.depth > 1.0)) throw DataError("scene.surface.depth must exceed 1");
  if (!(scene.surface.wavelength > 0.0)) throw DataError("scene.surface.wavelength must be positive");
  if (!(noise.sigma_px >= 0.0)) throw DataError("noise.sigma_px must be >= 0");
  if (!(noise.outlier_fraction >= 0.0 && noise.outlier_fraction <= 1.0)) {
    throw DataError("noise.outlier_fraction must lie in [0, 1]");
  }
  if (!(noise.outlier_scale >= 0.0)) throw DataError("noise.outlier_scale must be >= 0");
  if (!(observation_sigma_px > 0.0)) throw DataError("filter.observation_sigma_px must be positive");
  if (epipole_radius_px && !(*epipole_radius_px >= 0.0)) throw DataError("filter.epipole_radius_px must be >= 0");
  if (eval.exclusion_px && !(*eval.exclusion_px >= 0.0)) throw DataError("eval.exclusion_px must be >= 0");
  if (eval.pixel_scale && !(*eval.pixel_scale > 0.0)) throw DataError("eval.pixel_scale must be positive");
  if (frames < 1) throw DataError("frames must be >= 1");
  if (filter.penalty.kind == Penalty::Kind::Charbonnier &&
      !(filter.penalty.nu > 0.0 && filter.penalty.beta > 0.0 && filter.penalty.beta <= 1.0)) {
    throw DataError("filter: Charbonnier needs nu > 0 and beta in (0, 1]");
  }
  try {
    filter.validate();
  } catch (const DomainError& e) {
    throw DataError(std::string("filter: ") + e.what());
  }
}

RunConfig config_from_json(const json& j) {
  RunConfig cfg;
  Reader r(j, "config");
  if (r.has("grid")) read_grid(r.raw("grid"), cfg.grid);
  if (r.has("scene")) read_scene(r.raw("scene"), cfg.scene);
  if (r.has("noise")) read_noise(r.raw("noise"), cfg.noise);
  if (r.has("filter")) read_filter(r.raw("filter"), cfg);
  if (r.has("eval")) read_eval(r.raw("eval"), cfg.eval);
  r.get("frames", cfg.frames);
  r.get("seed", cfg.seed);
  r.finish();
  cfg.validate();
  return cfg;
}

json config_to_json(const RunConfig& cfg) {
  const auto& s = cfg.scene.surface;
  json twists = json::array();
  for (const auto& t : cfg.scene.twists) twists.push_back(std::vector<double>(t.data(), t.data() + 6));
  const auto& f = cfg.filter;
  return json{
      {"grid",
       {{"width", cfg.grid.width},
        {"height", cfg.grid.height},
        {"fx", optional_json(cfg.grid.fx)},
        {"fy", optional_json(cfg.grid.fy)},
        {"cx", optional_json(cfg.grid.cx)},
        {"cy", optional_json(cfg.grid.cy)},
        {"skew", cfg.grid.skew}}},
      {"scene",
       {{"surface",
         {{"kind", enum_to(s.kind, kSurfaceKinds)},
          {"depth", s.depth},
          {"slope_x", s.slope_x},
          {"slope_y", s.slope_y},
          {"amplitude", s.amplitude},
          {"wavelength", s.wavelength}}},
        {"twists", twists}}},
      {"noise",
       {{"sigma_px", cfg.noise.sigma_px},
        {"outlier_fraction", cfg.noise.outlier_fraction},
        {"outlier_scale", cfg.noise.outlier_scale},
        {"fb_tau_px", cfg.noise.fb_tau_px}}},
      {"filter",
       {{"R_cc", mat12_to_json(f.R_cc)},
        {"r_dd", f.r_dd},
        {"R0_cc", mat12_to_json(f.R0_cc)},
        {"r0_dd", f.r0_dd},
        {"penalty", enum_to(f.penalty.kind, kPenalties)},
        {"nu", f.penalty.nu},
        {"beta", f.penalty.beta},
        {"hessian", enum_to(f.hessian, kHessianModes)},
        {"metric", kMetric},
        {"substeps", f.substeps},
        {"frame_interval", f.frame_interval},
        {"stiffness_limit", f.stiffness_limit},
        {"max_substeps", f.max_substeps},
        {"epipole_weighting", f.epipole_weighting},
        {"epipole_radius_px", optional_json(cfg.epipole_radius_px)},
        {"outlier_mode", enum_to(f.outlier_mode, kOutlierModes)},
        {"outlier_factor", f.outlier_factor},
        {"propagate_disparity", f.propagate_disparity},
        {"propagate_gain", f.propagate_gain},
        {"disocclusion_gain_factor", f.disocclusion_gain_factor},
        {"sparsify", f.sparsify},
        {"observation_sigma_px", cfg.observation_sigma_px}}},
      {"eval",
       {{"exclusion_px", optional_json(cfg.eval.exclusion_px)},
        {"pixel_scale", optional_json(cfg.eval.pixel_scale)}}},
      {"frames", cfg.frames},
      {"seed", cfg.seed}};
}

RunConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

PixelGrid make_grid(const GridSettings& g) {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  K(0, 0) = g.fx.value_or(static_cast<double>(g.width));
  K(1, 1) = g.fy.value_or(static_cast<double>(g.width));
  K(0, 1) = g.skew;
  K(0, 2) = g.cx.value_or(0.5 * (g.width - 1));
  K(1, 2) = g.cy.value_or(0.5 * (g.height - 1));
  return PixelGrid(g.width, g.height, K);
}

SyntheticScene make_scene(const RunConfig& cfg) {
  SyntheticScene s;
  s.surface = cfg.scene.surface;
  s.twists = cfg.scene.twists;
  s.grid = make_grid(cfg.grid);
  s.seed = cfg.seed;
  return s;
}

FilterConfig filter_config(const RunConfig& cfg, const PixelGrid& grid) {
  FilterConfig f = cfg.filter;
  f.epipole_rho = cfg.epipole_radius_px.value_or(exclusion_px(cfg, grid)) / grid.focal();
  return f;
}

WeightField make_weight(const RunConfig& cfg, const PixelGrid& grid) {
  const double w = grid.focal() / cfg.observation_sigma_px;
  return WeightField::uniform(grid.size(), Mat2::Identity() * (w * w));
}

double exclusion_px(const RunConfig& cfg, const PixelGrid& grid) {
  return cfg.eval.exclusion_px.value_or(default_exclusion_px(grid.width()));
}

double pixel_scale(const RunConfig& cfg, const PixelGrid& grid) {
  return cfg.eval.pixel_scale.value_or(grid.focal());
}

}  // namespace mef
