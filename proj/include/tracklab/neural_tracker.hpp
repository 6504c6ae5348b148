// SPDX-License-Identifier: Apache-2.0
//
// The tiny learnable iterative-refinement tracker shared by teacher and
// student. Each refinement iteration correlates a fixed 7x7 template
// (intensity + gradients) against a 9x9 offset grid around the current
// estimate and feeds the 81 correlation values, the previous update, and the
// iteration index through a one-hidden-layer tanh MLP that emits a clamped
// position update. Gradients are hand-written reverse mode: they flow
// through all iterations within a frame and stop across frames.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "tracklab/core.hpp"

namespace tracklab::nt {

struct NeuralTrackerParams {
  // Architecture constants; changing any of them changes the checkpoint
  // format and the parameter count below.
  static constexpr int kPatch = 7;    // template side, 49 cells
  static constexpr int kRadius = 4;   // correlation offsets in [-4, 4]^2
  static constexpr int kIters = 4;    // refinement iterations per frame
  static constexpr int kHidden = 32;
  static constexpr int kCorr = (2 * kRadius + 1) * (2 * kRadius + 1);  // 81
  static constexpr int kInput = kCorr + 3;                             // + last dx, dy, k/K
  static constexpr int kFeat = 3 * kPatch * kPatch;  // intensity, gx, gy = 147
  static constexpr double kClampPx = 4.0;            // |update| bound per iteration
  static constexpr int kParamCount = kInput * kHidden + kHidden + kHidden * 2 + 2;  // 2786

  std::vector<double> w;  // flat parameter vector, layout below

  NeuralTrackerParams() : w(kParamCount, 0.0) {}

  static constexpr int w1_off() { return 0; }
  static constexpr int b1_off() { return kInput * kHidden; }
  static constexpr int w2_off() { return b1_off() + kHidden; }
  static constexpr int b2_off() { return w2_off() + kHidden * 2; }

  bool operator==(const NeuralTrackerParams& o) const { return w == o.w; }
};

/// W1 uniform(+-sqrt(6/(in+hidden))), zero biases, zero output layer: a
/// fresh tracker predicts the identity trajectory.
NeuralTrackerParams init_params(Rng& rng);

/// FNV-1a over the raw parameter bytes.
uint64_t params_hash(const NeuralTrackerParams& p);

/// Per-query, per-refined-frame, per-iteration position estimates.
struct PredictionStack {
  int n_queries = 0;
  int refined_frames = 0;  // window length - 1
  int iters = 0;
  std::vector<Vec2> data;  // [query][frame][iter]

  Vec2& at(int q, int t, int k) {
    return data[(static_cast<size_t>(q) * refined_frames + t) * iters + k];
  }
  const Vec2& at(int q, int t, int k) const {
    return data[(static_cast<size_t>(q) * refined_frames + t) * iters + k];
  }
};

struct NtForwardResult {
  std::vector<Trajectory> trajs;
  PredictionStack stack;
  /// [query][window frame]; peak correlation at the final estimate, 1.0 on
  /// the anchored first frame. visible in trajs is (confidence > 0.5).
  std::vector<std::vector<double>> confidence;
};

/// Tracks queries (anchored on frame_order[0]) along frame_order. Frame t's
/// refinement starts from frame t-1's final estimate.
NtForwardResult nt_forward(const NeuralTrackerParams& params, const Video& video,
                           std::span<const int> frame_order,
                           std::span<const QueryPoint> queries);

NtForwardResult nt_forward(const NeuralTrackerParams& params, const Video& video,
                           const TrackWindow& window, std::span<const QueryPoint> queries);

/// Forward pass with every frame's refinement initialized at a caller-pinned
/// position instead of the previous frame's estimate: inits[q][t-1] seeds
/// frame_order[t] for query q. With inits taken from a baseline nt_forward,
/// this is exactly the objective nt_backward differentiates (the chain
/// initialization is a constant there), which is what finite-difference
/// gradient checks must perturb.
NtForwardResult nt_forward_pinned(const NeuralTrackerParams& params, const Video& video,
                                  std::span<const int> frame_order,
                                  std::span<const QueryPoint> queries,
                                  const std::vector<std::vector<Vec2>>& inits);

struct LossWeights {
  double huber_delta = 6.0;
  double occluded_weight = 0.2;
  double gamma = 0.8;
};

/// Huber penalty on the Euclidean residual: a^2/2 below delta, linear above.
double huber(double a, double delta);

/// Discounted tracking loss: mean over (query, refined frame) of
/// sum_k gamma^(K-k) * w * huber(|p^(k) - label|), where w is 1 for
/// label-visible points and occluded_weight otherwise. The anchored first
/// frame is excluded. Labels must align with the stack in query order.
double track_loss(const PredictionStack& stack, std::span<const Trajectory> labels,
                  const LossWeights& weights);

struct NtBackwardResult {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d params, same layout as params.w
};

/// Loss and analytic gradient of track_loss for the given supervision.
/// Throws if any gradient entry comes out non-finite, naming query and frame.
NtBackwardResult nt_backward(const NeuralTrackerParams& params, const Video& video,
                             std::span<const int> frame_order,
                             std::span<const QueryPoint> queries,
                             std::span<const Trajectory> labels, const LossWeights& weights);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double base_lr = 5e-5;
  long total_steps = 20000;  // cosine schedule horizon
};

struct AdamState {
  AdamConfig cfg;
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;

  explicit AdamState(const AdamConfig& c)
      : cfg(c),
        m(NeuralTrackerParams::kParamCount, 0.0),
        v(NeuralTrackerParams::kParamCount, 0.0) {}
};

/// base_lr * (1 + cos(pi * i / total_steps)) / 2.
double cosine_lr(const AdamConfig& cfg, long i);

/// One bias-corrected Adam update at the scheduled rate for state.step.
/// Throws on non-finite gradient.
void adam_step(AdamState& state, NeuralTrackerParams& params, std::span<const double> grad);

struct CheckpointMeta {
  long step = 0;
  uint64_t seed = 0;
};

/// One JSON header line (architecture constants, step, seed) followed by the
/// raw little-endian double parameter vector.
void save_checkpoint(const NeuralTrackerParams& params, const CheckpointMeta& meta,
                     const std::filesystem::path& path);
std::pair<NeuralTrackerParams, CheckpointMeta> load_checkpoint(const std::filesystem::path& path);

}  // namespace tracklab::nt
