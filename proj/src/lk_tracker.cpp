// SPDX-License-Identifier: Apache-2.0

#include "tracklab/lk_tracker.hpp"

#include <cmath>
#include <stdexcept>

namespace tracklab::lk {

namespace {

struct Level {
  Frame image;
  Frame gx;
  Frame gy;
};

using Pyramid = std::vector<Level>;

Frame downsample2(const Frame& in) {
  const int w = in.width / 2;
  const int h = in.height / 2;
  Frame out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out.at(x, y) = 0.25 * (in.at(2 * x, 2 * y) + in.at(2 * x + 1, 2 * y) +
                             in.at(2 * x, 2 * y + 1) + in.at(2 * x + 1, 2 * y + 1));
  return out;
}

int usable_levels(const Frame& f, const LkConfig& cfg) {
  const int min_dim = 2 * cfg.window_radius + 3;
  int levels = 1;
  int w = f.width, h = f.height;
  while (levels < cfg.pyramid_levels && (w / 2) >= min_dim && (h / 2) >= min_dim) {
    w /= 2;
    h /= 2;
    ++levels;
  }
  return levels;
}

Pyramid build_pyramid(const Frame& f, int levels) {
  Pyramid pyr(static_cast<size_t>(levels));
  pyr[0].image = f;
  for (int l = 1; l < levels; ++l) pyr[static_cast<size_t>(l)].image = downsample2(pyr[static_cast<size_t>(l - 1)].image);
  for (Level& lvl : pyr) sobel_gradients(lvl.image, lvl.gx, lvl.gy);
  return pyr;
}

struct WindowTemplate {
  std::vector<double> val;
  std::vector<double> gx;
  std::vector<double> gy;
  double g11 = 0.0, g12 = 0.0, g22 = 0.0;  // structure tensor over the window
};

void sample_template(const Level& lvl, const Vec2& c, int radius, WindowTemplate& t) {
  const int n = 2 * radius + 1;
  t.val.resize(static_cast<size_t>(n) * n);
  t.gx.resize(t.val.size());
  t.gy.resize(t.val.size());
  t.g11 = t.g12 = t.g22 = 0.0;
  size_t i = 0;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx, ++i) {
      const double x = c.x + dx;
      const double y = c.y + dy;
      t.val[i] = bilinear_sample(lvl.image, x, y);
      const double gx = bilinear_sample(lvl.gx, x, y);
      const double gy = bilinear_sample(lvl.gy, x, y);
      t.gx[i] = gx;
      t.gy[i] = gy;
      t.g11 += gx * gx;
      t.g12 += gx * gy;
      t.g22 += gy * gy;
    }
}

double min_eigenvalue(double a, double b, double c) {
  const double half_tr = 0.5 * (a + c);
  const double half_diff = 0.5 * (a - c);
  return half_tr - std::sqrt(half_diff * half_diff + b * b);
}

LkResult track_pair_pyr(const Pyramid& prev, const Pyramid& next, const Vec2& p,
                        const LkConfig& cfg) {
  const int radius = cfg.window_radius;
  const int n_px = (2 * radius + 1) * (2 * radius + 1);

  // Texture confidence from the full-resolution template window.
  WindowTemplate t0;
  sample_template(prev[0], p, radius, t0);
  const double lmin_norm = min_eigenvalue(t0.g11, t0.g12, t0.g22) / n_px;
  if (lmin_norm < 1e-14) return {p, 0.0};
  const double confidence = std::min(1.0, lmin_norm / cfg.min_eigen_threshold);

  const int levels = static_cast<int>(prev.size());
  Vec2 disp{0.0, 0.0};  // full-resolution displacement
  bool diverged = false;
  WindowTemplate t;

  for (int l = levels - 1; l >= 0 && !diverged; --l) {
    const double scale = static_cast<double>(1 << l);
    const Vec2 c{p.x / scale, p.y / scale};
    const WindowTemplate& tmpl = (l == 0) ? t0 : (sample_template(prev[static_cast<size_t>(l)], c, radius, t), t);

    const double det = tmpl.g11 * tmpl.g22 - tmpl.g12 * tmpl.g12;
    if (!(det > 1e-22)) continue;  // unsolvable at this level, keep the guess
    const double inv11 = tmpl.g22 / det;
    const double inv12 = -tmpl.g12 / det;
    const double inv22 = tmpl.g11 / det;

    Vec2 v{disp.x / scale, disp.y / scale};
    for (int iter = 0; iter < cfg.max_iters_per_level; ++iter) {
      double b1 = 0.0, b2 = 0.0;
      size_t i = 0;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx, ++i) {
          const double diff =
              bilinear_sample(next[static_cast<size_t>(l)].image, c.x + v.x + dx, c.y + v.y + dy) - tmpl.val[i];
          b1 += diff * tmpl.gx[i];
          b2 += diff * tmpl.gy[i];
        }
      const Vec2 step{inv11 * b1 + inv12 * b2, inv12 * b1 + inv22 * b2};
      const Vec2 cand{v.x - step.x, v.y - step.y};
      if (std::hypot(cand.x, cand.y) * scale > cfg.divergence_cap) {
        diverged = true;  // keep the last stable iterate
        break;
      }
      v = cand;
      if (std::hypot(step.x, step.y) < cfg.convergence_eps) break;
    }
    disp = {v.x * scale, v.y * scale};
  }

  return {{p.x + disp.x, p.y + disp.y}, diverged ? 0.0 : confidence};
}

}  // namespace

LkResult lk_track_pair(const Frame& prev, const Frame& next, const Vec2& p, const LkConfig& cfg) {
  const int levels = std::min(usable_levels(prev, cfg), usable_levels(next, cfg));
  return track_pair_pyr(build_pyramid(prev, levels), build_pyramid(next, levels), p, cfg);
}

std::vector<Trajectory> track_frames(const Video& video, std::span<const int> frame_order,
                                     std::span<const QueryPoint> queries, const LkConfig& cfg) {
  if (frame_order.empty()) throw std::invalid_argument("track_frames: empty frame order");
  for (const QueryPoint& q : queries)
    if (q.t0 != frame_order[0])
      throw std::invalid_argument("track_frames: query not anchored on the first frame");

  const int L = static_cast<int>(frame_order.size());
  int levels = cfg.pyramid_levels;
  for (int i = 0; i < L; ++i)
    levels = std::min(levels, usable_levels(video.frames[static_cast<size_t>(frame_order[static_cast<size_t>(i)])], cfg));

  std::vector<Pyramid> pyrs(static_cast<size_t>(L));
  parallel_for(L, [&](int i) {
    pyrs[static_cast<size_t>(i)] = build_pyramid(video.frames[static_cast<size_t>(frame_order[static_cast<size_t>(i)])], levels);
  });

  std::vector<Trajectory> trajs(queries.size());
  parallel_for(static_cast<int>(queries.size()), [&](int qi) {
    const QueryPoint& q = queries[static_cast<size_t>(qi)];
    Trajectory traj;
    traj.query = q;
    traj.points.resize(static_cast<size_t>(L));
    traj.visible.resize(static_cast<size_t>(L));
    traj.points[0] = q.pos();
    traj.visible[0] = 1;
    Vec2 pos = q.pos();
    for (int i = 1; i < L; ++i) {
      const Pyramid& a = pyrs[static_cast<size_t>(i - 1)];
      const Pyramid& b = pyrs[static_cast<size_t>(i)];
      const LkResult fwd = track_pair_pyr(a, b, pos, cfg);
      bool vis = fwd.confidence > 0.0;
      if (vis) {
        const LkResult back = track_pair_pyr(b, a, fwd.pos, cfg);
        vis = back.confidence > 0.0 &&
              euclid(back.pos, pos) <= cfg.forward_backward_vis_eps;
      }
      traj.points[static_cast<size_t>(i)] = fwd.pos;
      traj.visible[static_cast<size_t>(i)] = vis ? 1 : 0;
      pos = fwd.pos;
    }
    trajs[static_cast<size_t>(qi)] = std::move(traj);
  });
  return trajs;
}

std::vector<Trajectory> lk_track_window(const Video& video, const TrackWindow& window,
                                        std::span<const QueryPoint> queries,
                                        const LkConfig& cfg) {
  if (!window.fits(video.frame_count()))
    throw std::invalid_argument("lk_track_window: window does not fit the video");
  const std::vector<int> order = window.frames();
  return track_frames(video, order, queries, cfg);
}

}  // namespace tracklab::lk
