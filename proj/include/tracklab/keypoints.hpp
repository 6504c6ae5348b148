// SPDX-License-Identifier: Apache-2.0
//
// Corner detection for query selection. Picks locations that are actually
// trackable and enforces the minimum-keypoint exclusion rule for windows
// with too little structure.

#pragma once

#include <optional>
#include <vector>

#include "tracklab/core.hpp"

namespace tracklab::keypoints {

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double score = 0.0;  // corner response, >= detection threshold
};

/// Harris corners: Sobel gradients, 3x3 Gaussian-weighted structure tensor,
/// k = 0.04, threshold 0.01 * max response, greedy non-max suppression with
/// 5 px radius, quadratic subpixel refinement (offset clamped to +-0.5 px).
/// Returned score-descending, truncated to max_n. Requires frame >= 16x16.
std::vector<Keypoint> detect(const Frame& frame, int max_n);

struct QuerySample {
  std::vector<QueryPoint> queries;
  /// Parallel to queries: false for uniform-random top-up points added when
  /// fewer than n corners were detected.
  std::vector<uint8_t> from_detector;
};

/// Samples n query points on `frame` (stamped with frame index t0). Returns
/// std::nullopt — the Excluded marker, not an error — when fewer than
/// min_required corners are detected. If detections are fewer than n, all of
/// them are used and the remainder is uniform-random image points.
std::optional<QuerySample> sample_queries(const Frame& frame, int n, int min_required, Rng& rng,
                                          int t0);

}  // namespace tracklab::keypoints
