#include "mef/io.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mef/errors.hpp"

namespace mef::io {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "binary I/O assumes a little-endian host");

namespace {

constexpr float kFloMagic = 202021.25f;

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  return f;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  return f;
}

template <class T>
void put(std::ostream& o, const T& v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const fs::path& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError(path.string() + ": unexpected end of file");
  return v;
}

void check_size(int w, int h, std::size_t n, std::size_t channels, const std::string& what) {
  if (w <= 0 || h <= 0) throw DataError(what + ": non-positive image size");
  if (n != static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * channels) {
    throw DataError(what + ": buffer size does not match the image size");
  }
}

Eigen::Matrix2d linear_intrinsics(const PixelGrid& grid) {
  return grid.intrinsics().topLeftCorner<2, 2>();
}

void check_grid(int w, int h, const PixelGrid& grid, const std::string& what) {
  if (w != grid.width() || h != grid.height()) {
    throw DataError(what + ": image is " + std::to_string(w) + "x" + std::to_string(h) +
                    ", expected " + std::to_string(grid.width()) + "x" +
                    std::to_string(grid.height()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// .flo

void write_flo(const fs::path& path, const FlowImage& img) {
  check_size(img.width, img.height, img.uv.size(), 2, path.string());
  auto f = open_out(path);
  put(f, kFloMagic);
  put(f, static_cast<std::int32_t>(img.width));
  put(f, static_cast<std::int32_t>(img.height));
  f.write(reinterpret_cast<const char*>(img.uv.data()),
          static_cast<std::streamsize>(img.uv.size() * sizeof(float)));
  if (!f) throw DataError("write failed: " + path.string());
}

FlowImage read_flo(const fs::path& path) {
  auto f = open_in(path);
  const auto magic = get<float>(f, path);
  if (magic != kFloMagic) throw DataError(path.string() + ": not a .flo file (bad magic)");
  FlowImage img;
  img.width = get<std::int32_t>(f, path);
  img.height = get<std::int32_t>(f, path);
  if (img.width <= 0 || img.height <= 0 || img.width > (1 << 16) || img.height > (1 << 16)) {
    throw DataError(path.string() + ": implausible size");
  }
  img.uv.resize(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) * 2);
  f.read(reinterpret_cast<char*>(img.uv.data()),
         static_cast<std::streamsize>(img.uv.size() * sizeof(float)));
  if (!f) throw DataError(path.string() + ": truncated flow data");
  return img;
}

// ---------------------------------------------------------------------------
// PFM

void write_pfm(const fs::path& path, const FloatImage& img) {
  check_size(img.width, img.height, img.data.size(), 1, path.string());
  auto f = open_out(path);
  f << "Pf\n" << img.width << " " << img.height << "\n-1\n";
  const auto w = static_cast<std::size_t>(img.width);
  for (int r = img.height - 1; r >= 0; --r) {
    f.write(reinterpret_cast<const char*>(img.data.data() + static_cast<std::size_t>(r) * w),
            static_cast<std::streamsize>(w * sizeof(float)));
  }
  if (!f) throw DataError("write failed: " + path.string());
}

FloatImage read_pfm(const fs::path& path) {
  auto f = open_in(path);
  std::string magic;
  FloatImage img;
  double scale = 0.0;
  f >> magic >> img.width >> img.height >> scale;
  if (!f || magic != "Pf") throw DataError(path.string() + ": not a grayscale PFM file");
  if (img.width <= 0 || img.height <= 0) throw DataError(path.string() + ": bad PFM size");
  if (scale >= 0.0) throw DataError(path.string() + ": big-endian PFM is not supported");
  f.get();  // single whitespace after the header
  const auto w = static_cast<std::size_t>(img.width);
  img.data.resize(w * static_cast<std::size_t>(img.height));
  for (int r = img.height - 1; r >= 0; --r) {
    f.read(reinterpret_cast<char*>(img.data.data() + static_cast<std::size_t>(r) * w),
           static_cast<std::streamsize>(w * sizeof(float)));
  }
  if (!f) throw DataError(path.string() + ": truncated PFM data");
  return img;
}

// ---------------------------------------------------------------------------
// PNG

namespace {

struct PngFile {
  std::FILE* fp = nullptr;
  ~PngFile() {
    if (fp) std::fclose(fp);
  }
};

[[noreturn]] void png_fail(png_structp, png_const_charp msg) { throw DataError(std::string("libpng: ") + msg); }
void png_warn(png_structp, png_const_charp) {}

void write_png(const fs::path& path, int width, int height, int channels,
               const std::vector<std::uint16_t>& data) {
  check_size(width, height, data.size(), static_cast<std::size_t>(channels), path.string());
  PngFile file{std::fopen(path.c_str(), "wb")};
  if (!file.fp) throw DataError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw DataError("libpng initialisation failed");
  try {
    png_init_io(png, file.fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 16,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<std::size_t>(width * channels) * 2);
    for (int r = 0; r < height; ++r) {
      for (std::size_t k = 0; k < static_cast<std::size_t>(width * channels); ++k) {
        const std::uint16_t v = data[static_cast<std::size_t>(r * width * channels) + k];
        row[2 * k] = static_cast<png_byte>(v >> 8);  // PNG stores big-endian samples
        row[2 * k + 1] = static_cast<png_byte>(v & 0xff);
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
}

std::vector<std::uint16_t> read_png(const fs::path& path, int& width, int& height, int channels) {
  PngFile file{std::fopen(path.c_str(), "rb")};
  if (!file.fp) throw DataError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw DataError("libpng initialisation failed");
  std::vector<std::uint16_t> out;
  try {
    png_init_io(png, file.fp);
    png_read_info(png, info);
    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    const int want = channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    if (depth != 16 || color != want) {
      throw DataError(path.string() + ": expected a 16-bit " +
                      std::string(channels == 1 ? "grayscale" : "RGB") + " PNG");
    }
    const std::size_t row_len = static_cast<std::size_t>(width * channels);
    std::vector<png_byte> row(row_len * 2);
    out.resize(row_len * static_cast<std::size_t>(height));
    for (int r = 0; r < height; ++r) {
      png_read_row(png, row.data(), nullptr);
      for (std::size_t k = 0; k < row_len; ++k) {
        out[static_cast<std::size_t>(r) * row_len + k] =
            static_cast<std::uint16_t>((row[2 * k] << 8) | row[2 * k + 1]);
      }
    }
  } catch (const DataError& e) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path.string() + ": " + e.what());
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace

void write_png16(const fs::path& path, const Image16& img) {
  write_png(path, img.width, img.height, 1, img.data);
}

Image16 read_png16(const fs::path& path) {
  Image16 img;
  img.data = read_png(path, img.width, img.height, 1);
  return img;
}

FlowImage read_kitti_flow(const fs::path& path) {
  int w = 0, h = 0;
  const auto raw = read_png(path, w, h, 3);
  FlowImage img{w, h, std::vector<float>(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 2)};
  for (std::size_t i = 0; i < img.uv.size() / 2; ++i) {
    const bool valid = raw[3 * i + 2] != 0;
    img.uv[2 * i] = valid ? (static_cast<float>(raw[3 * i]) - 32768.0f) / 64.0f : kUnknownFlow;
    img.uv[2 * i + 1] = valid ? (static_cast<float>(raw[3 * i + 1]) - 32768.0f) / 64.0f : kUnknownFlow;
  }
  return img;
}

void write_kitti_flow(const fs::path& path, const FlowImage& img) {
  check_size(img.width, img.height, img.uv.size(), 2, path.string());
  std::vector<std::uint16_t> raw(img.uv.size() / 2 * 3, 0);
  auto enc = [](float u) {
    const double v = std::round(static_cast<double>(u) * 64.0 + 32768.0);
    return static_cast<std::uint16_t>(std::clamp(v, 0.0, 65535.0));
  };
  for (std::size_t i = 0; i < img.uv.size() / 2; ++i) {
    const float u = img.uv[2 * i], v = img.uv[2 * i + 1];
    if (std::abs(u) > kUnknownFlowThreshold || std::abs(v) > kUnknownFlowThreshold) continue;
    raw[3 * i] = enc(u);
    raw[3 * i + 1] = enc(v);
    raw[3 * i + 2] = 1;
  }
  write_png(path, img.width, img.height, 3, raw);
}

// ---------------------------------------------------------------------------
// Conversions

FlowImage flow_to_image(const FlowField& flow, const PixelGrid& grid) {
  if (flow.size() != grid.size()) throw DataError("flow does not match the grid");
  const Eigen::Matrix2d K = linear_intrinsics(grid);
  FlowImage img{grid.width(), grid.height(), std::vector<float>(static_cast<std::size_t>(grid.size()) * 2)};
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (!flow.is_valid(i)) {
      img.uv[2 * k] = img.uv[2 * k + 1] = kUnknownFlow;
      continue;
    }
    const Vec2 px = K * flow.vectors.col(i);
    img.uv[2 * k] = static_cast<float>(px.x());
    img.uv[2 * k + 1] = static_cast<float>(px.y());
  }
  return img;
}

FlowField flow_from_image(const FlowImage& img, const PixelGrid& grid) {
  check_grid(img.width, img.height, grid, "flow");
  const Eigen::Matrix2d Kinv = linear_intrinsics(grid).inverse();
  FlowField flow = FlowField::zeros(grid.size());
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    const float u = img.uv[2 * k], v = img.uv[2 * k + 1];
    if (!std::isfinite(u) || !std::isfinite(v) || std::abs(u) > kUnknownFlowThreshold ||
        std::abs(v) > kUnknownFlowThreshold) {
      flow.valid[k] = 0;
      continue;
    }
    flow.vectors.col(i) = Kinv * Vec2(u, v);
  }
  return flow;
}

FloatImage disparity_to_image(const Eigen::VectorXd& d, const PixelGrid& grid) {
  if (d.size() != grid.size()) throw DataError("disparity does not match the grid");
  FloatImage img{grid.width(), grid.height(), std::vector<float>(static_cast<std::size_t>(d.size()))};
  for (Eigen::Index i = 0; i < d.size(); ++i) img.data[static_cast<std::size_t>(i)] = static_cast<float>(d[i]);
  return img;
}

Eigen::VectorXd disparity_from_image(const FloatImage& img, const PixelGrid& grid) {
  check_grid(img.width, img.height, grid, "disparity");
  Eigen::VectorXd d(grid.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = img.data[static_cast<std::size_t>(i)];
  return d;
}

Image16 disparity_to_png16(const Eigen::VectorXd& d, const Mask& valid, double pixel_scale,
                           const PixelGrid& grid) {
  if (d.size() != grid.size()) throw DataError("disparity does not match the grid");
  Image16 img{grid.width(), grid.height(), std::vector<std::uint16_t>(static_cast<std::size_t>(d.size()), 0)};
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (!valid.empty() && !valid[k]) continue;
    const double v = std::round(d[i] * pixel_scale * 256.0);
    img.data[k] = static_cast<std::uint16_t>(std::clamp(v, 1.0, 65535.0));
  }
  return img;
}

Eigen::VectorXd disparity_from_png16(const Image16& img, double pixel_scale, Mask* valid) {
  Eigen::VectorXd d(static_cast<Eigen::Index>(img.data.size()));
  if (valid) valid->assign(img.data.size(), 0);
  for (std::size_t k = 0; k < img.data.size(); ++k) {
    d[static_cast<Eigen::Index>(k)] = static_cast<double>(img.data[k]) / 256.0 / pixel_scale;
    if (valid) (*valid)[k] = img.data[k] != 0;
  }
  return d;
}

// ---------------------------------------------------------------------------
// JSON

json se3_to_json(const lie::SE3& E) {
  json R = json::array();
  const auto& M = E.rotation().matrix();
  for (int r = 0; r < 3; ++r) R.push_back({M(r, 0), M(r, 1), M(r, 2)});
  const auto& t = E.translation();
  return json{{"R", R}, {"t", {t.x(), t.y(), t.z()}}};
}

lie::SE3 se3_from_json(const json& j) {
  try {
    lie::Mat3 R;
    lie::Vec3 t;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) R(r, c) = j.at("R").at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
      t[r] = j.at("t").at(static_cast<std::size_t>(r)).get<double>();
    }
    if ((R.transpose() * R - lie::Mat3::Identity()).norm() > 1e-6 || R.determinant() < 0.0) {
      throw DataError("pose rotation is not orthonormal");
    }
    return lie::SE3(lie::SO3(R), t);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed pose: ") + e.what());
  }
}

void write_poses(const fs::path& path, const std::vector<PoseRecord>& poses) {
  json arr = json::array();
  for (const auto& p : poses) {
    json j = se3_to_json(p.motion);
    j["frame"] = p.frame;
    j["twist"] = std::vector<double>(p.twist.data(), p.twist.data() + 6);
    arr.push_back(j);
  }
  write_text(path, json{{"poses", arr}}.dump(2) + "\n");
}

std::vector<PoseRecord> read_poses(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  std::vector<PoseRecord> out;
  try {
    for (const auto& p : j.at("poses")) {
      PoseRecord r;
      r.frame = p.at("frame").get<int>();
      r.motion = se3_from_json(p);
      if (p.contains("twist")) {
        for (int k = 0; k < 6; ++k) r.twist[k] = p.at("twist").at(static_cast<std::size_t>(k)).get<double>();
      }
      out.push_back(r);
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return out;
}

json diagnostics_to_json(const Diagnostics& d) {
  return json{{"frame", d.frame},
              {"energy", d.energy},
              {"mean_residual_px", d.mean_residual},
              {"median_residual_px", d.median_residual},
              {"gain_trace", d.gain_trace},
              {"outlier_fraction", d.outlier_fraction},
              {"clamped_gains", d.clamped_gains},
              {"disoccluded", d.disoccluded},
              {"substeps", d.substeps}};
}

json report_to_json(const EvalReport& r) {
  return json{{"p3px_occ", r.p3px_occ},
              {"p5px_occ", r.p5px_occ},
              {"p3px_noc", r.p3px_noc},
              {"p5px_noc", r.p5px_noc},
              {"median_rel_depth_err", r.median_rel_depth_err},
              {"rotation_err_deg", r.rotation_err_deg},
              {"translation_err_deg", r.translation_err_deg},
              {"scale", r.scale}};
}

EvalReport report_from_json(const json& j) {
  try {
    EvalReport r;
    r.p3px_occ = j.at("p3px_occ").get<double>();
    r.p5px_occ = j.at("p5px_occ").get<double>();
    r.p3px_noc = j.at("p3px_noc").get<double>();
    r.p5px_noc = j.at("p5px_noc").get<double>();
    r.median_rel_depth_err = j.at("median_rel_depth_err").get<double>();
    r.rotation_err_deg = j.at("rotation_err_deg").get<double>();
    r.translation_err_deg = j.at("translation_err_deg").get<double>();
    r.scale = j.at("scale").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  auto f = open_out(path);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw DataError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  auto f = open_in(path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string frame_name(const std::string& stem, int index, const std::string& ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "_%04d", index);
  return stem + buf + ext;
}

}  // namespace mef::io
