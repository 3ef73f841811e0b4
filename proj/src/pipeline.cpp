#include "mef/pipeline.hpp"

#include <string>

#include "mef/errors.hpp"

namespace mef {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t frame) {
  // splitmix64 finalizer over a combined key.
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + stream * 0xBF58476D1CE4E5B9ULL + frame + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

enum Stream : std::uint64_t { kForwardNoise = 1, kBackwardNoise = 2, kOutliers = 3 };

}  // namespace

Observations observe(const Sequence& seq, const RunConfig& cfg) {
  const PixelGrid grid = make_grid(cfg.grid);
  const double sigma = cfg.noise.sigma_px / grid.focal();
  Observations obs;
  for (std::size_t k = 0; k < seq.forward.size(); ++k) {
    FlowField f = seq.forward[k];
    FlowField b = seq.backward[k];
    if (sigma > 0.0) {
      f = add_noise(f, sigma, derive_seed(cfg.seed, kForwardNoise, k));
      b = add_noise(b, sigma, derive_seed(cfg.seed, kBackwardNoise, k));
    }
    if (cfg.noise.outlier_fraction > 0.0) {
      const double mag = cfg.noise.outlier_scale * median_flow_magnitude(seq.forward[k]);
      f = inject_outliers(f, cfg.noise.outlier_fraction, mag, derive_seed(cfg.seed, kOutliers, k));
    }
    obs.forward.push_back(std::move(f));
    obs.backward.push_back(std::move(b));
  }
  return obs;
}

Mask consistency_mask(const FlowField& forward, const FlowField* backward, const RunConfig& cfg,
                      const PixelGrid& grid) {
  if (!backward || cfg.noise.fb_tau_px <= 0.0) return {};
  return fb_consistency_mask(forward, *backward, grid, cfg.noise.fb_tau_px / grid.focal());
}

std::vector<FrameEstimate> run_filter(const RunConfig& cfg, const PixelGrid& grid,
                                      const std::vector<FlowField>& forward,
                                      const std::vector<FlowField>& backward,
                                      const FrameCallback& on_frame) {
  if (!backward.empty() && backward.size() != forward.size()) {
    throw DataError("backward flow count differs from forward flow count");
  }
  MinimumEnergyFilter filter(grid, filter_config(cfg, grid));
  const WeightField W = make_weight(cfg, grid);
  std::vector<FrameEstimate> out;
  for (std::size_t k = 0; k < forward.size(); ++k) {
    if (forward[k].size() != grid.size()) {
      throw DataError("frame " + std::to_string(k) + ": flow does not match the grid");
    }
    const FlowField* b = backward.empty() ? nullptr : &backward[k];
    Frame frame{forward[k], W, consistency_mask(forward[k], b, cfg, grid)};
    const FrameResult& r = filter.process(frame);
    FrameEstimate e{r.updated_disparity, r.state.E, r.state.v, r.diagnostics};
    if (on_frame) on_frame(e);
    out.push_back(std::move(e));
  }
  return out;
}

GroundTruthMasks ground_truth_masks(const Sequence& seq, int k, const RunConfig& cfg) {
  const PixelGrid grid = make_grid(cfg.grid);
  const auto n = static_cast<std::size_t>(grid.size());
  GroundTruthMasks m{Mask(n, 1), Mask(n, 1)};
  const auto kk = static_cast<std::size_t>(k);
  const double tau = (cfg.noise.fb_tau_px > 0.0 ? cfg.noise.fb_tau_px : 1.0) / grid.focal();
  const Mask c = fb_consistency_mask(seq.forward[kk], seq.backward[kk], grid, tau);
  for (std::size_t i = 0; i < n; ++i) m.noc[i] = m.occ[i] && c[i];
  return m;
}

SequenceReport evaluate_sequence(const std::vector<FrameEstimate>& est,
                                 const std::vector<Eigen::VectorXd>& gt_disparity,
                                 const std::vector<lie::SE3>& gt_motion,
                                 const std::vector<GroundTruthMasks>& masks, const RunConfig& cfg,
                                 const PixelGrid& grid) {
  if (gt_disparity.size() < est.size() || gt_motion.size() < est.size() || masks.size() < est.size()) {
    throw DataError("ground truth has fewer frames than the estimate");
  }
  SequenceReport rep;
  const double excl = exclusion_px(cfg, grid);
  const double scale = pixel_scale(cfg, grid);
  for (std::size_t k = 0; k < est.size(); ++k) {
    rep.frames.push_back(evaluate_frame(est[k].disparity, gt_disparity[k], est[k].motion,
                                        gt_motion[k], grid, masks[k].occ, masks[k].noc, excl, scale));
  }
  if (rep.frames.empty()) return rep;
  EvalReport& m = rep.mean;
  m.scale = 0.0;
  for (const auto& r : rep.frames) {
    m.p3px_occ += r.p3px_occ;
    m.p5px_occ += r.p5px_occ;
    m.p3px_noc += r.p3px_noc;
    m.p5px_noc += r.p5px_noc;
    m.median_rel_depth_err += r.median_rel_depth_err;
    m.rotation_err_deg += r.rotation_err_deg;
    m.translation_err_deg += r.translation_err_deg;
    m.scale += r.scale;
  }
  const double inv = 1.0 / static_cast<double>(rep.frames.size());
  m.p3px_occ *= inv;
  m.p5px_occ *= inv;
  m.p3px_noc *= inv;
  m.p5px_noc *= inv;
  m.median_rel_depth_err *= inv;
  m.rotation_err_deg *= inv;
  m.translation_err_deg *= inv;
  m.scale *= inv;
  return rep;
}

}  // namespace mef
