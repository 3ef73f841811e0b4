// mef: simulate | filter | eval | gradcheck | selftest

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mef/checks.hpp"
#include "mef/config.hpp"
#include "mef/errors.hpp"
#include "mef/io.hpp"
#include "mef/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kNumericalFailure = 3 };

struct Overrides {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> frames;
  std::optional<double> beta;
  std::optional<double> nu;
  std::optional<int> substeps;
  bool quadratic = false;
  bool no_propagate_gain = false;
};

void add_common(CLI::App* cmd, Overrides& o, bool filter_flags) {
  cmd->add_option("--config", o.config, "JSON run config");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--frames", o.frames, "number of frames")->check(CLI::PositiveNumber);
  if (!filter_flags) return;
  cmd->add_option("--beta", o.beta, "Charbonnier exponent");
  cmd->add_option("--nu", o.nu, "Charbonnier scale");
  cmd->add_option("--substeps", o.substeps, "integrator substeps per frame")->check(CLI::PositiveNumber);
  cmd->add_flag("--quadratic", o.quadratic, "quadratic energy (beta = 1 path)");
  cmd->add_flag("--no-propagate-gain", o.no_propagate_gain, "do not warp the disparity gain");
}

mef::RunConfig resolve_config(const Overrides& o, const fs::path& fallback = {}) {
  mef::RunConfig cfg;
  if (!o.config.empty()) {
    cfg = mef::load_config(o.config);
  } else if (!fallback.empty() && fs::exists(fallback)) {
    cfg = mef::load_config(fallback);
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.frames) cfg.frames = *o.frames;
  if (o.beta) cfg.filter.penalty.beta = *o.beta;
  if (o.nu) cfg.filter.penalty.nu = *o.nu;
  if (o.quadratic) cfg.filter.penalty = mef::Penalty::quadratic();
  if (o.substeps) {
    cfg.filter.substeps = *o.substeps;
    cfg.filter.max_substeps = std::max(cfg.filter.max_substeps, *o.substeps);
  }
  if (o.no_propagate_gain) cfg.filter.propagate_gain = false;
  cfg.validate();
  return cfg;
}

fs::path make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw mef::DataError("cannot create " + p.string() + ": " + ec.message());
  return p;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::vector<mef::io::PoseRecord> pose_records(const std::vector<mef::lie::SE3>& motion,
                                              const std::vector<mef::lie::Vec6>& twists) {
  std::vector<mef::io::PoseRecord> out;
  for (std::size_t k = 0; k < motion.size(); ++k) out.push_back({static_cast<int>(k), motion[k], twists[k]});
  return out;
}

// ---------------------------------------------------------------------------
// simulate

int cmd_simulate(const Overrides& o) {
  const mef::RunConfig cfg = resolve_config(o);
  const fs::path out = make_dir(o.out.empty() ? "sim" : o.out);
  const mef::SyntheticScene scene = mef::make_scene(cfg);
  const mef::PixelGrid& grid = scene.grid;
  const mef::Sequence seq = mef::generate_sequence(scene, cfg.frames);
  const mef::Observations obs = mef::observe(seq, cfg);
  const double px = mef::pixel_scale(cfg, grid);

  const fs::path flow_dir = make_dir(out / "flow");
  const fs::path back_dir = make_dir(flow_dir / "backward");
  const fs::path gt_dir = make_dir(out / "gt");
  const fs::path occ_dir = make_dir(gt_dir / "disp_occ");
  const fs::path noc_dir = make_dir(gt_dir / "disp_noc");
  mef::io::write_text(out / "config.json", dump(mef::config_to_json(cfg)));

  std::vector<mef::lie::Vec6> twists;
  for (int k = 0; k < cfg.frames; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    mef::io::write_flo(flow_dir / mef::io::frame_name("flow", k, ".flo"),
                       mef::io::flow_to_image(obs.forward[kk], grid));
    mef::io::write_flo(back_dir / mef::io::frame_name("flow", k, ".flo"),
                       mef::io::flow_to_image(obs.backward[kk], grid));
    const std::string dname = mef::io::frame_name("disparity", k, "");
    mef::io::write_pfm(gt_dir / (dname + ".pfm"), mef::io::disparity_to_image(seq.disparity[kk], grid));
    const mef::GroundTruthMasks m = mef::ground_truth_masks(seq, k, cfg);
    mef::io::write_png16(occ_dir / (dname + ".png"),
                         mef::io::disparity_to_png16(seq.disparity[kk], m.occ, px, grid));
    mef::io::write_png16(noc_dir / (dname + ".png"),
                         mef::io::disparity_to_png16(seq.disparity[kk], m.noc, px, grid));
    twists.push_back(cfg.scene.twists.size() == 1 ? cfg.scene.twists[0]
                                                  : cfg.scene.twists[kk % cfg.scene.twists.size()]);
  }
  std::vector<mef::lie::SE3> motion(seq.motion.begin(), seq.motion.begin() + cfg.frames);
  mef::io::write_poses(gt_dir / "poses.json", pose_records(motion, twists));
  std::printf("simulate: %d frames, %dx%d, written to %s\n", cfg.frames, grid.width(), grid.height(),
              out.string().c_str());
  return kOk;
}

// ---------------------------------------------------------------------------
// filter

mef::FlowField read_flow(const fs::path& stem, const mef::PixelGrid& grid) {
  const fs::path flo = fs::path(stem).replace_extension(".flo");
  if (fs::exists(flo)) return mef::io::flow_from_image(mef::io::read_flo(flo), grid);
  return mef::io::flow_from_image(mef::io::read_kitti_flow(fs::path(stem).replace_extension(".png")), grid);
}

bool flow_exists(const fs::path& stem) {
  return fs::exists(fs::path(stem).replace_extension(".flo")) ||
         fs::exists(fs::path(stem).replace_extension(".png"));
}

int cmd_filter(const Overrides& o, const std::string& input) {
  const fs::path in(input);
  if (!fs::is_directory(in / "flow")) throw mef::DataError(input + ": no flow/ directory");
  mef::RunConfig cfg = resolve_config(o, in / "config.json");
  const mef::PixelGrid grid = mef::make_grid(cfg.grid);

  int available = 0;
  while (flow_exists(in / "flow" / mef::io::frame_name("flow", available, ""))) ++available;
  if (available == 0) throw mef::DataError(input + ": no flow frames found");
  int n = std::min(available, cfg.frames);
  if (o.frames) {
    if (*o.frames > available) {
      throw mef::DataError(input + ": " + std::to_string(*o.frames) + " frames requested, " +
                           std::to_string(available) + " available");
    }
    n = *o.frames;
  }
  cfg.frames = n;

  std::vector<mef::FlowField> forward, backward;
  bool have_backward = true;
  for (int k = 0; k < n; ++k) {
    const std::string name = mef::io::frame_name("flow", k, "");
    try {
      forward.push_back(read_flow(in / "flow" / name, grid));
    } catch (const mef::DataError& e) {
      throw mef::DataError("frame " + std::to_string(k) + ": " + e.what());
    }
    if (have_backward && flow_exists(in / "flow" / "backward" / name)) {
      backward.push_back(read_flow(in / "flow" / "backward" / name, grid));
    } else {
      have_backward = false;
    }
  }
  if (!have_backward) backward.clear();

  const fs::path out = make_dir(o.out.empty() ? "result" : o.out);
  const fs::path disp_dir = make_dir(out / "disparity");
  mef::io::write_text(out / "config.json", dump(mef::config_to_json(cfg)));
  const double px = mef::pixel_scale(cfg, grid);

  std::ostringstream diagnostics;
  std::vector<mef::lie::SE3> motion;
  std::vector<mef::lie::Vec6> twists;
  const mef::Mask all(static_cast<std::size_t>(grid.size()), 1);
  mef::run_filter(cfg, grid, forward, backward, [&](const mef::FrameEstimate& e) {
    const int k = e.diagnostics.frame;
    const std::string dname = mef::io::frame_name("disparity", k, "");
    mef::io::write_pfm(disp_dir / (dname + ".pfm"), mef::io::disparity_to_image(e.disparity, grid));
    mef::io::write_png16(disp_dir / (dname + ".png"), mef::io::disparity_to_png16(e.disparity, all, px, grid));
    diagnostics << mef::io::diagnostics_to_json(e.diagnostics).dump() << "\n";
    motion.push_back(e.motion);
    twists.push_back(e.twist);
  });
  mef::io::write_text(out / "diagnostics.jsonl", diagnostics.str());
  mef::io::write_poses(out / "poses.json", pose_records(motion, twists));
  std::printf("filter: %d frames processed, written to %s\n", n, out.string().c_str());
  return kOk;
}

// ---------------------------------------------------------------------------
// eval

const char* kCsvHeader =
    "frames,p3px_occ,p5px_occ,p3px_noc,p5px_noc,median_rel_depth_err,rotation_err_deg,"
    "translation_err_deg,scale";

std::string csv_row(int frames, const mef::EvalReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", frames, r.p3px_occ,
                r.p5px_occ, r.p3px_noc, r.p5px_noc, r.median_rel_depth_err, r.rotation_err_deg,
                r.translation_err_deg, r.scale);
  return buf;
}

mef::Mask mask_from_png(const fs::path& p, const mef::PixelGrid& grid) {
  const mef::io::Image16 img = mef::io::read_png16(p);
  if (img.width != grid.width() || img.height != grid.height()) {
    throw mef::DataError(p.string() + ": size does not match the grid");
  }
  mef::Mask m;
  mef::io::disparity_from_png16(img, 1.0, &m);
  return m;
}

int cmd_eval(const Overrides& o, const std::string& est_dir, const std::string& gt_dir) {
  const fs::path est(est_dir), gt(gt_dir);
  const mef::RunConfig cfg = resolve_config(o, est / "config.json");
  const mef::PixelGrid grid = mef::make_grid(cfg.grid);

  const auto est_poses = mef::io::read_poses(est / "poses.json");
  const auto gt_poses = mef::io::read_poses(gt / "poses.json");
  int n = static_cast<int>(est_poses.size());
  if (o.frames) n = std::min(n, *o.frames);

  std::vector<std::string> missing;
  for (int k = 0; k < n; ++k) {
    const std::string dname = mef::io::frame_name("disparity", k, "");
    for (const fs::path& p : {est / "disparity" / (dname + ".pfm"), gt / (dname + ".pfm"),
                              gt / "disp_occ" / (dname + ".png"), gt / "disp_noc" / (dname + ".png")}) {
      if (!fs::exists(p)) missing.push_back(p.string());
    }
    if (k >= static_cast<int>(gt_poses.size())) missing.push_back(gt.string() + "/poses.json frame " + std::to_string(k));
  }
  if (!missing.empty()) {
    std::string msg = "missing frames:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw mef::DataError(msg);
  }

  std::vector<mef::FrameEstimate> estimates;
  std::vector<Eigen::VectorXd> gt_disp;
  std::vector<mef::lie::SE3> gt_motion;
  std::vector<mef::GroundTruthMasks> masks;
  for (int k = 0; k < n; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    const std::string dname = mef::io::frame_name("disparity", k, "");
    mef::FrameEstimate e;
    e.disparity = mef::io::disparity_from_image(mef::io::read_pfm(est / "disparity" / (dname + ".pfm")), grid);
    e.motion = est_poses[kk].motion;
    estimates.push_back(std::move(e));
    gt_disp.push_back(mef::io::disparity_from_image(mef::io::read_pfm(gt / (dname + ".pfm")), grid));
    gt_motion.push_back(gt_poses[kk].motion);
    masks.push_back({mask_from_png(gt / "disp_occ" / (dname + ".png"), grid),
                     mask_from_png(gt / "disp_noc" / (dname + ".png"), grid)});
  }
  const mef::SequenceReport rep = mef::evaluate_sequence(estimates, gt_disp, gt_motion, masks, cfg, grid);

  json frames = json::array();
  for (const auto& r : rep.frames) frames.push_back(mef::io::report_to_json(r));
  const json report{{"frames", frames},
                    {"mean", mef::io::report_to_json(rep.mean)},
                    {"final", rep.frames.empty() ? json(nullptr) : mef::io::report_to_json(rep.frames.back())},
                    {"exclusion_px", mef::exclusion_px(cfg, grid)},
                    {"pixel_scale", mef::pixel_scale(cfg, grid)}};
  const fs::path out = make_dir(o.out.empty() ? est : fs::path(o.out));
  const std::string row = csv_row(n, rep.mean);
  mef::io::write_text(out / "report.json", dump(report));
  mef::io::write_text(out / "report.csv", std::string(kCsvHeader) + "\n" + row + "\n");
  std::printf("%s\n%s\n", kCsvHeader, row.c_str());
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck / selftest

int report_checks(const std::vector<mef::checks::CheckResult>& results) {
  int failed = 0;
  for (const auto& c : results) {
    std::printf("%s %-48s error %.3e tol %.0e\n", c.pass() ? "PASS" : "FAIL", c.name.c_str(), c.error,
                c.tolerance);
    failed += !c.pass();
  }
  std::printf("%d of %zu checks failed\n", failed, results.size());
  return failed == 0 ? kOk : kNumericalFailure;
}

int cmd_gradcheck(const Overrides& o) {
  const mef::RunConfig cfg = resolve_config(o);
  return report_checks(mef::checks::run_all(cfg.seed));
}

int cmd_selftest(const Overrides& o) {
  mef::RunConfig cfg = resolve_config(o);
  std::vector<mef::checks::CheckResult> results = mef::checks::lie_checks(cfg.seed, 100);
  for (auto& c : mef::checks::connection_checks(cfg.seed + 1, 20)) results.push_back(c);
  results.push_back(mef::checks::gradient_check(cfg.seed + 2, 3, 6));
  results.push_back(mef::checks::hessian_check(cfg.seed + 3, 1, 4));
  results.push_back(mef::checks::dense_check(cfg.seed + 4, mef::HessianMode::GaussNewton, 2));
  for (auto& c : mef::checks::riccati_checks()) results.push_back(c);

  // Short noiseless run end to end.
  cfg.grid.width = cfg.grid.height = 16;
  cfg.frames = o.frames.value_or(8);
  cfg.noise = mef::NoiseSettings{};
  const mef::SyntheticScene scene = mef::make_scene(cfg);
  const mef::Sequence seq = mef::generate_sequence(scene, cfg.frames);
  const auto est = mef::run_filter(cfg, scene.grid, seq.forward, seq.backward);
  std::vector<mef::GroundTruthMasks> masks;
  for (int k = 0; k < cfg.frames; ++k) masks.push_back(mef::ground_truth_masks(seq, k, cfg));
  const auto rep = mef::evaluate_sequence(est, seq.disparity, seq.motion, masks, cfg, scene.grid);
  const auto& first = rep.frames.front();
  const auto& last = rep.frames.back();
  results.push_back({"end-to-end depth error decreases", last.median_rel_depth_err / first.median_rel_depth_err, 0.5});
  results.push_back({"end-to-end final depth error (%)", last.median_rel_depth_err, 5.0});

  // Flow file round trip through a temporary directory.
  const fs::path tmp = make_dir(fs::temp_directory_path() / ("mef_selftest_" + std::to_string(cfg.seed)));
  const auto img = mef::io::flow_to_image(seq.forward[0], scene.grid);
  mef::io::write_flo(tmp / "flow.flo", img);
  results.push_back({".flo round trip", mef::io::read_flo(tmp / "flow.flo") == img ? 0.0 : 1.0, 0.0});
  fs::remove_all(tmp);
  return report_checks(results);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Second-order minimum energy filter for camera motion and disparity"};
  app.require_subcommand(1);
  Overrides o;
  std::string input, est_dir, gt_dir;

  auto* sim = app.add_subcommand("simulate", "write a synthetic flow sequence and its ground truth");
  add_common(sim, o, false);
  auto* filt = app.add_subcommand("filter", "run the filter over a flow sequence");
  filt->add_option("input", input, "directory with flow/ (output of simulate)")->required();
  add_common(filt, o, true);
  auto* ev = app.add_subcommand("eval", "score estimates against ground truth");
  ev->add_option("estimate", est_dir, "filter output directory")->required();
  ev->add_option("ground_truth", gt_dir, "ground-truth directory (simulate's gt/)")->required();
  add_common(ev, o, false);
  auto* grad = app.add_subcommand("gradcheck", "derivative, connection and dense-reference checks");
  add_common(grad, o, false);
  auto* self = app.add_subcommand("selftest", "quick end-to-end sanity run");
  add_common(self, o, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (sim->parsed()) return cmd_simulate(o);
    if (filt->parsed()) return cmd_filter(o, input);
    if (ev->parsed()) return cmd_eval(o, est_dir, gt_dir);
    if (grad->parsed()) return cmd_gradcheck(o);
    if (self->parsed()) return cmd_selftest(o);
  } catch (const mef::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kDataError;
  } catch (const json::exception& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kDataError;
  } catch (const mef::NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumericalFailure;
  } catch (const mef::DomainError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumericalFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDataError;
  }
  return kUsage;
}
