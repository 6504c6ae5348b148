// SPDX-License-Identifier: Apache-2.0

#include "tracklab/keypoints.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tracklab::keypoints {

namespace {

constexpr double kHarrisK = 0.04;
constexpr double kThresholdRatio = 0.01;
constexpr double kNmsRadius = 5.0;
constexpr int kBorder = 3;

// 3x3 Gaussian-weighted sum of `src` around (x, y); weights [1 2 1]^T [1 2 1] / 16.
inline double gauss3(const Frame& src, int x, int y) {
  const double* p0 = &src.pixels[static_cast<size_t>(y - 1) * src.width + x - 1];
  const double* p1 = p0 + src.width;
  const double* p2 = p1 + src.width;
  return (p0[0] + 2.0 * p0[1] + p0[2] + 2.0 * (p1[0] + 2.0 * p1[1] + p1[2]) + p2[0] +
          2.0 * p2[1] + p2[2]) /
         16.0;
}

}  // namespace

std::vector<Keypoint> detect(const Frame& frame, int max_n) {
  if (frame.width < 16 || frame.height < 16)
    throw std::invalid_argument("detect: frame must be at least 16x16");
  if (max_n < 0) max_n = 0;

  const int w = frame.width;
  const int h = frame.height;

  Frame gx, gy;
  sobel_gradients(frame, gx, gy);

  Frame ixx(w, h), iyy(w, h), ixy(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dx = gx.at(x, y);
      const double dy = gy.at(x, y);
      ixx.at(x, y) = dx * dx;
      iyy.at(x, y) = dy * dy;
      ixy.at(x, y) = dx * dy;
    }

  Frame resp(w, h);
  double max_resp = 0.0;
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x) {
      const double a = gauss3(ixx, x, y);
      const double b = gauss3(ixy, x, y);
      const double c = gauss3(iyy, x, y);
      const double r = (a * c - b * b) - kHarrisK * (a + c) * (a + c);
      resp.at(x, y) = r;
      if (r > max_resp) max_resp = r;
    }
  if (max_resp <= 0.0) return {};

  const double threshold = kThresholdRatio * max_resp;

  // Local 3x3 maxima above threshold; plateau ties resolve to the first
  // pixel in raster order.
  std::vector<Keypoint> cands;
  for (int y = kBorder; y < h - kBorder; ++y)
    for (int x = kBorder; x < w - kBorder; ++x) {
      const double r = resp.at(x, y);
      if (r < threshold) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const double n = resp.at(x + dx, y + dy);
          const bool earlier = dy < 0 || (dy == 0 && dx < 0);
          if (earlier ? (n >= r) : (n > r)) {
            is_max = false;
            break;
          }
        }
      if (is_max) cands.push_back({static_cast<double>(x), static_cast<double>(y), r});
    }

  std::sort(cands.begin(), cands.end(), [](const Keypoint& a, const Keypoint& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });

  // Quadratic subpixel refinement of each candidate peak, so that the
  // suppression guarantee below holds for the positions actually returned.
  for (Keypoint& kp : cands) {
    const int x = static_cast<int>(kp.x);
    const int y = static_cast<int>(kp.y);
    const double gx_ = (resp.at(x + 1, y) - resp.at(x - 1, y)) / 2.0;
    const double gy_ = (resp.at(x, y + 1) - resp.at(x, y - 1)) / 2.0;
    const double hxx = resp.at(x + 1, y) - 2.0 * resp.at(x, y) + resp.at(x - 1, y);
    const double hyy = resp.at(x, y + 1) - 2.0 * resp.at(x, y) + resp.at(x, y - 1);
    const double hxy = (resp.at(x + 1, y + 1) - resp.at(x - 1, y + 1) - resp.at(x + 1, y - 1) +
                        resp.at(x - 1, y - 1)) /
                       4.0;
    const double det = hxx * hyy - hxy * hxy;
    if (std::abs(det) > 1e-18) {
      double ox = -(hyy * gx_ - hxy * gy_) / det;
      double oy = -(hxx * gy_ - hxy * gx_) / det;
      ox = std::clamp(ox, -0.5, 0.5);
      oy = std::clamp(oy, -0.5, 0.5);
      kp.x += ox;
      kp.y += oy;
    }
  }

  std::vector<Keypoint> picked;
  for (const Keypoint& c : cands) {
    bool clear = true;
    for (const Keypoint& p : picked) {
      const double dx = c.x - p.x;
      const double dy = c.y - p.y;
      if (dx * dx + dy * dy <= kNmsRadius * kNmsRadius) {
        clear = false;
        break;
      }
    }
    if (!clear) continue;
    picked.push_back(c);
    if (static_cast<int>(picked.size()) >= max_n) break;
  }
  return picked;
}

std::optional<QuerySample> sample_queries(const Frame& frame, int n, int min_required, Rng& rng,
                                          int t0) {
  if (n < 1) throw std::invalid_argument("sample_queries: n must be >= 1");
  if (min_required > n) throw std::invalid_argument("sample_queries: min_required must be <= n");

  std::vector<Keypoint> kps = detect(frame, std::max(n * 16, 1024));
  if (static_cast<int>(kps.size()) < min_required) return std::nullopt;  // Excluded

  QuerySample out;
  if (static_cast<int>(kps.size()) >= n) {
    // Partial Fisher-Yates: uniform sample of n distinct detections.
    std::vector<int> idx(kps.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    for (int i = 0; i < n; ++i) {
      const int j = i + rng.uniform_int(static_cast<int>(idx.size()) - i);
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
      const Keypoint& kp = kps[static_cast<size_t>(idx[static_cast<size_t>(i)])];
      out.queries.push_back({kp.x, kp.y, t0});
      out.from_detector.push_back(1);
    }
  } else {
    for (const Keypoint& kp : kps) {
      out.queries.push_back({kp.x, kp.y, t0});
      out.from_detector.push_back(1);
    }
    while (static_cast<int>(out.queries.size()) < n) {
      out.queries.push_back(
          {rng.uniform(0.0, frame.width - 1.0), rng.uniform(0.0, frame.height - 1.0), t0});
      out.from_detector.push_back(0);
    }
  }
  return out;
}

}  // namespace tracklab::keypoints
