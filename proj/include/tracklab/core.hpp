// SPDX-License-Identifier: Apache-2.0
//
// Core domain types shared by every module: frames, videos, query points,
// trajectories, bilinear sampling with analytic derivatives, and a
// counter-based deterministic random number generator.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace tracklab {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2() = default;
  Vec2(double px, double py) : x(px), y(py) {}

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2& operator+=(const Vec2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  bool operator==(const Vec2& o) const { return x == o.x && y == o.y; }
};

/// Euclidean distance in pixels.
double euclid(const Vec2& p, const Vec2& q);

/// One grayscale image, row-major, luminance values in [0, 1].
struct Frame {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  Frame() = default;
  Frame(int w, int h, double fill = 0.0)
      : width(w), height(h), pixels(static_cast<size_t>(w) * h, fill) {}

  double at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
  double& at(int x, int y) { return pixels[static_cast<size_t>(y) * width + x]; }
  bool empty() const { return width <= 0 || height <= 0; }
};

/// Ordered grayscale frame sequence. All frames share one size.
struct Video {
  std::string id;
  int width = 0;
  int height = 0;
  std::vector<Frame> frames;

  int frame_count() const { return static_cast<int>(frames.size()); }

  /// Throws std::runtime_error if any structural invariant is broken
  /// (mismatched frame sizes, pixels outside [0,1], fewer than 2 frames).
  void validate() const;
};

/// (x, y, t0) anchor whose trajectory is to be estimated. t0 is a frame
/// index in the owning video; (x, y) are subpixel coordinates on that frame.
struct QueryPoint {
  double x = 0.0;
  double y = 0.0;
  int t0 = 0;

  Vec2 pos() const { return {x, y}; }
};

/// Per-frame positions plus visibility flags for one query point over a
/// tracked window. points[0] is the query position on the window's first
/// frame.
struct Trajectory {
  QueryPoint query;
  std::vector<Vec2> points;
  std::vector<uint8_t> visible;

  int length() const { return static_cast<int>(points.size()); }
};

/// A strided window of frame indices: start, start+stride, ...,
/// start+(length-1)*stride.
struct TrackWindow {
  int start = 0;
  int stride = 1;
  int length = 0;

  std::vector<int> frames() const;
  std::vector<int> reversed_frames() const;
  int last_frame() const { return start + (length - 1) * stride; }
  bool fits(int frame_count) const {
    return start >= 0 && length >= 1 && stride >= 1 && last_frame() < frame_count;
  }
};

/// Samples the bilinear interpolation of frame luminance at subpixel (x, y).
/// Coordinates outside [0, w-1] x [0, h-1] are clamped to the border.
double bilinear_sample(const Frame& f, double x, double y);

struct SampleGrad {
  double value = 0.0;
  double dx = 0.0;
  double dy = 0.0;
};

/// Value plus spatial partial derivatives of bilinear_sample. At integer
/// coordinates the right-continuous cell is used; in the clamped region the
/// derivative along the clamped axis is 0.
SampleGrad bilinear_sample_grad(const Frame& f, double x, double y);

/// 3x3 Sobel derivatives scaled to luminance-per-pixel units (kernel / 8),
/// border rows/columns replicated.
void sobel_gradients(const Frame& f, Frame& gx, Frame& gy);

/// Deterministic counter-based generator: the stream is a pure function of
/// (seed, stream id, draw index), so parallel workers seeded with distinct
/// stream ids reproduce bit-identically in any schedule.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0);

  uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n). Requires n >= 1.
  int uniform_int(int n);
  /// Standard normal via Box-Muller (two draws per call).
  double normal();

  /// Independent child stream; deterministic function of this stream's
  /// identity and `stream`, not of its draw position.
  Rng fork(uint64_t stream) const;

 private:
  Rng() = default;
  uint64_t key_ = 0;
  uint64_t counter_ = 0;
};

/// Runs fn(0..n-1) on the process-wide worker pool and blocks until done.
/// Worker count comes from TRACKLAB_WORKERS or hardware concurrency. Results
/// must be written to per-index slots; callers reduce in index order, so the
/// outcome is independent of the worker count.
void parallel_for(int n, const std::function<void(int)>& fn);

/// Number of workers parallel_for will use.
int worker_count();

}  // namespace tracklab
