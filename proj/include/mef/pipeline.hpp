#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mef/config.hpp"
#include "mef/filter.hpp"
#include "mef/harness.hpp"

namespace mef {

/// Decorrelated per-frame seed for one random stream of a run.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t frame);

/// Flow observations as handed to the filter.
struct Observations {
  std::vector<FlowField> forward;
  std::vector<FlowField> backward;
};

/// Applies the configured Gaussian noise (both directions) and forward-flow
/// outliers to an exact sequence.
Observations observe(const Sequence& seq, const RunConfig& cfg);

/// Forward/backward consistency mask; empty when the check is disabled or the
/// backward flow is missing.
Mask consistency_mask(const FlowField& forward, const FlowField* backward, const RunConfig& cfg,
                      const PixelGrid& grid);

struct FrameEstimate {
  Eigen::VectorXd disparity;  // updated disparity of frame k
  lie::SE3 motion;            // estimated relative motion k -> k + 1
  lie::Vec6 twist = lie::Vec6::Zero();
  Diagnostics diagnostics;
};

using FrameCallback = std::function<void(const FrameEstimate&)>;

/// Runs the filter over all forward flows. `backward` may be empty.
std::vector<FrameEstimate> run_filter(const RunConfig& cfg, const PixelGrid& grid,
                                      const std::vector<FlowField>& forward,
                                      const std::vector<FlowField>& backward,
                                      const FrameCallback& on_frame = {});

/// Evaluation masks of one ground-truth frame: occ = every pixel (the
/// synthetic ground truth is dense), noc = forward/backward-consistent pixels.
struct GroundTruthMasks {
  Mask occ;
  Mask noc;
};

GroundTruthMasks ground_truth_masks(const Sequence& seq, int k, const RunConfig& cfg);

struct SequenceReport {
  std::vector<EvalReport> frames;
  EvalReport mean;
};

SequenceReport evaluate_sequence(const std::vector<FrameEstimate>& est,
                                 const std::vector<Eigen::VectorXd>& gt_disparity,
                                 const std::vector<lie::SE3>& gt_motion,
                                 const std::vector<GroundTruthMasks>& masks, const RunConfig& cfg,
                                 const PixelGrid& grid);

}  // namespace mef
