// SPDX-License-Identifier: Apache-2.0
//
// Synthetic two-domain video generator. Motion is a closed-form warp from
// canonical (frame-0) coordinates, so ground-truth trajectories are exact:
// no integration, no drift, no tolerance anywhere downstream.

#pragma once

#include <optional>
#include <utility>

#include "tracklab/core.hpp"
#include "tracklab/dataio.hpp"

namespace tracklab::synthgen {

/// Localized nonrigid displacement: a Gaussian-enveloped oscillation around
/// `center`, zero at t=0 regardless of phase.
struct Bump {
  Vec2 center;
  Vec2 amp;            // px, peak displacement direction
  double sigma = 1.0;  // px, spatial extent (> 0)
  double freq = 0.0;   // cycles per frame
  double phase = 0.0;  // radians
};

/// Per-frame affine about `center` plus bump displacements, identity at t=0.
struct WarpSpec {
  Vec2 center;
  Vec2 velocity;          // px per frame
  Vec2 sway_amp;          // sinusoidal translation component
  double sway_freq = 0.0;
  double sway_phase = 0.0;
  double rot_rate = 0.0;   // radians per frame
  double scale_amp = 0.0;  // log-scale oscillation amplitude
  double scale_freq = 0.0;
  std::vector<Bump> bumps;
};

struct Mat2 {
  double a = 1.0, b = 0.0, c = 0.0, d = 1.0;  // row-major [a b; c d]
  Vec2 apply(const Vec2& v) const { return {a * v.x + b * v.y, c * v.x + d * v.y}; }
  double det() const { return a * d - b * c; }
  Mat2 inverse() const;
};

Mat2 affine_at(const WarpSpec& spec, int t);
Vec2 translation_at(const WarpSpec& spec, int t);

/// Exact warped position of a canonical point at frame t.
Vec2 warp_point(const WarpSpec& spec, const Vec2& canonical, int t);

/// Procedural multi-octave value noise, defined for all real coordinates.
struct TextureSpec {
  struct Octave {
    double scale = 16.0;  // feature size in px
    double amp = 0.2;
  };
  uint64_t seed = 0;
  double bias = 0.5;
  std::vector<Octave> octaves;
};

double texture_value(const TextureSpec& tex, const Vec2& p);

struct SpecularSpec {
  Vec2 start;
  Vec2 velocity;  // px per frame
  double intensity = 0.4;
  double sigma = 10.0;
};

struct LightingSpec {
  double gain_base = 1.0;
  double gain_amp = 0.0;  // gain(t) = base + amp * sin(2*pi*freq*t + phase)
  double gain_freq = 0.0;
  double gain_phase = 0.0;
  std::optional<SpecularSpec> specular;

  double gain_at(int t) const;
};

/// Opaque axis-aligned ellipse moving on a straight path, painted over the
/// rendered frame.
struct OccluderSpec {
  Vec2 start;
  Vec2 velocity;
  double rx = 10.0;
  double ry = 10.0;
  double fill = 0.1;

  Vec2 center_at(int t) const { return start + velocity * static_cast<double>(t); }
  /// Hard geometric test; drives ground-truth visibility.
  bool contains(const Vec2& p, int t) const;
  /// Rendering opacity in [0,1] with an anti-aliased rim.
  double coverage(const Vec2& p, int t) const;
};

struct SceneSpec {
  TextureSpec texture;
  LightingSpec lighting;
  std::optional<OccluderSpec> occluder;
};

struct GroundTruthPoint {
  Vec2 canonical;
  std::vector<Vec2> pos;         // one entry per frame, exact
  std::vector<uint8_t> visible;  // false iff occluded or out of bounds
};

struct GroundTruth {
  std::vector<GroundTruthPoint> points;
};

/// Renders T frames of `scene` through `warp` and produces exact ground
/// truth for a stride-8 canonical grid plus the corner points detected on
/// frame 0. Throws on a degenerate affine (|det| < 1e-6).
std::pair<Video, GroundTruth> render(const SceneSpec& scene, const WarpSpec& warp, int width,
                                     int height, int T, const std::string& id);

enum class Domain { kSource, kTarget };
enum class MotionPreset { kDefault, kTranslation };

/// Randomized per-video specs for one domain. Source: high-contrast texture,
/// affine-dominant motion, steady lighting, no occluder. Target: low-contrast
/// texture, flicker, specular highlight, occluder, nonrigid bumps.
struct VideoSpec {
  SceneSpec scene;
  WarpSpec warp;
};

VideoSpec random_video_spec(Domain domain, int width, int height, int frames, Rng& rng,
                            MotionPreset preset = MotionPreset::kDefault);

struct CorpusOptions {
  Domain domain = Domain::kSource;
  int n_videos = 0;  // 0 selects the domain default (40 source / 80 target)
  int width = 128;
  int height = 128;
  int frames = 48;
  uint64_t seed = 1;
  MotionPreset preset = MotionPreset::kDefault;
};

/// Writes a full DatasetLayout (frames, ground truth, manifest) under `root`,
/// which must not already contain a manifest. Deterministic in `seed`.
void make_domain_corpus(const CorpusOptions& opt, const std::filesystem::path& root);

}  // namespace tracklab::synthgen
