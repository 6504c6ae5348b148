// SPDX-License-Identifier: Apache-2.0
//
// Classical pyramidal coarse-to-fine least-squares tracker. Serves as the
// non-learned baseline and as an alternate teacher; visibility comes from a
// per-step forward-backward check.

#pragma once

#include <span>
#include <vector>

#include "tracklab/core.hpp"

namespace tracklab::lk {

struct LkConfig {
  int pyramid_levels = 3;
  int window_radius = 7;  // px, window is (2r+1)^2
  int max_iters_per_level = 20;
  double convergence_eps = 0.01;      // px
  double min_eigen_threshold = 1e-4;  // on the area-normalized structure tensor
  double forward_backward_vis_eps = 2.0;  // px
  double divergence_cap = 8.0;            // px total step per frame pair
};

struct LkResult {
  Vec2 pos;
  double confidence = 0.0;  // in [0, 1]; 0 when flat or diverged
};

/// Tracks point p from `prev` into `next`. Divergence (total step beyond the
/// cap) returns the last stable estimate with confidence 0.
LkResult lk_track_pair(const Frame& prev, const Frame& next, const Vec2& p, const LkConfig& cfg);

/// Chains lk_track_pair along `frame_order` (indices into video.frames;
/// queries sit on frame_order[0]). visible[t] requires positive confidence
/// and the backward re-track landing within forward_backward_vis_eps.
std::vector<Trajectory> track_frames(const Video& video, std::span<const int> frame_order,
                                     std::span<const QueryPoint> queries, const LkConfig& cfg);

/// track_frames over a strided window.
std::vector<Trajectory> lk_track_window(const Video& video, const TrackWindow& window,
                                        std::span<const QueryPoint> queries, const LkConfig& cfg);

}  // namespace tracklab::lk
