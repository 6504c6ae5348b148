// SPDX-License-Identifier: Apache-2.0

#include "tracklab/synthgen.hpp"

#include <cmath>
#include <stdexcept>

#include "tracklab/keypoints.hpp"

namespace tracklab::synthgen {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

constexpr uint64_t kHashA = 0x9E3779B97F4A7C15ull;
constexpr uint64_t kHashB = 0xC2B2AE3D27D4EB4Full;

inline uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline double lattice_value(int64_t ix, int64_t iy, uint64_t seed) {
  const uint64_t h =
      mix64(seed ^ (static_cast<uint64_t>(ix) * kHashA) ^ (static_cast<uint64_t>(iy) * kHashB));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

}  // namespace

Mat2 Mat2::inverse() const {
  const double det_ = det();
  const double inv = 1.0 / det_;
  return {d * inv, -b * inv, -c * inv, a * inv};
}

Mat2 affine_at(const WarpSpec& spec, int t) {
  const double angle = spec.rot_rate * t;
  const double scale = std::exp(spec.scale_amp * std::sin(kTwoPi * spec.scale_freq * t));
  const double ca = std::cos(angle) * scale;
  const double sa = std::sin(angle) * scale;
  return {ca, -sa, sa, ca};
}

Vec2 translation_at(const WarpSpec& spec, int t) {
  const Mat2 a = affine_at(spec, t);
  const double s = std::sin(kTwoPi * spec.sway_freq * t + spec.sway_phase) - std::sin(spec.sway_phase);
  const Vec2 sway = spec.sway_amp * s;
  const Vec2 drift = spec.velocity * static_cast<double>(t);
  // (I - A) * center keeps the rotation/scale pivot fixed at `center`.
  const Vec2 pivot = {spec.center.x - a.apply(spec.center).x,
                      spec.center.y - a.apply(spec.center).y};
  return drift + sway + pivot;
}

namespace {

Vec2 bump_displacement(const WarpSpec& spec, const Vec2& canonical, int t) {
  Vec2 d;
  for (const Bump& b : spec.bumps) {
    const double g = std::sin(kTwoPi * b.freq * t + b.phase) - std::sin(b.phase);
    const double dx = canonical.x - b.center.x;
    const double dy = canonical.y - b.center.y;
    const double env = std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
    d += b.amp * (g * env);
  }
  return d;
}

}  // namespace

Vec2 warp_point(const WarpSpec& spec, const Vec2& canonical, int t) {
  for (const Bump& b : spec.bumps)
    if (!(b.sigma > 0.0)) throw std::invalid_argument("warp_point: bump sigma must be > 0");
  const Mat2 a = affine_at(spec, t);
  return a.apply(canonical) + translation_at(spec, t) + bump_displacement(spec, canonical, t);
}

double texture_value(const TextureSpec& tex, const Vec2& p) {
  double v = tex.bias;
  for (size_t o = 0; o < tex.octaves.size(); ++o) {
    const TextureSpec::Octave& oc = tex.octaves[o];
    const uint64_t oseed = mix64(tex.seed + (o + 1) * kHashA);
    const double gx = p.x / oc.scale;
    const double gy = p.y / oc.scale;
    const double fx = std::floor(gx);
    const double fy = std::floor(gy);
    const int64_t ix = static_cast<int64_t>(fx);
    const int64_t iy = static_cast<int64_t>(fy);
    const double tx = fade(gx - fx);
    const double ty = fade(gy - fy);
    const double v00 = lattice_value(ix, iy, oseed);
    const double v10 = lattice_value(ix + 1, iy, oseed);
    const double v01 = lattice_value(ix, iy + 1, oseed);
    const double v11 = lattice_value(ix + 1, iy + 1, oseed);
    const double top = v00 + tx * (v10 - v00);
    const double bot = v01 + tx * (v11 - v01);
    v += oc.amp * (2.0 * (top + ty * (bot - top)) - 1.0);
  }
  return v;
}

double LightingSpec::gain_at(int t) const {
  return gain_base + gain_amp * std::sin(kTwoPi * gain_freq * t + gain_phase);
}

bool OccluderSpec::contains(const Vec2& p, int t) const {
  const Vec2 c = center_at(t);
  const double nx = (p.x - c.x) / rx;
  const double ny = (p.y - c.y) / ry;
  return nx * nx + ny * ny <= 1.0;
}

double OccluderSpec::coverage(const Vec2& p, int t) const {
  const Vec2 c = center_at(t);
  const double nx = (p.x - c.x) / rx;
  const double ny = (p.y - c.y) / ry;
  const double d = std::sqrt(nx * nx + ny * ny);
  // ~1.5 px anti-aliased rim so the boundary reads like a defocused edge
  // instead of a razor step.
  const double hw = 0.75 / std::min(rx, ry);
  if (d <= 1.0 - hw) return 1.0;
  if (d >= 1.0 + hw) return 0.0;
  const double u = (1.0 + hw - d) / (2.0 * hw);
  return u * u * (3.0 - 2.0 * u);
}

namespace {

// Inverse of the warp at frame t: fixed-point iteration on the bump term,
// seeded at the pure-affine inverse. Contractive while bump amplitudes stay
// below ~0.2 * sigma.
Vec2 invert_warp(const WarpSpec& spec, const Mat2& inv_a, const Vec2& trans, const Vec2& y,
                 int t) {
  Vec2 x = inv_a.apply(y - trans);
  if (spec.bumps.empty()) return x;
  for (int it = 0; it < 20; ++it) {
    const Vec2 next = inv_a.apply(y - trans - bump_displacement(spec, x, t));
    const double step = euclid(next, x);
    x = next;
    if (step < 1e-9) break;
  }
  return x;
}

}  // namespace

std::pair<Video, GroundTruth> render(const SceneSpec& scene, const WarpSpec& warp, int width,
                                     int height, int T, const std::string& id) {
  if (width < 64 || height < 64) throw std::invalid_argument("render: dims must be >= 64x64");
  if (T < 2) throw std::invalid_argument("render: need at least 2 frames");

  Video video;
  video.id = id;
  video.width = width;
  video.height = height;
  video.frames.reserve(static_cast<size_t>(T));

  for (int t = 0; t < T; ++t) {
    const Mat2 a = affine_at(warp, t);
    if (std::abs(a.det()) < 1e-6)
      throw std::runtime_error("render: degenerate affine at frame " + std::to_string(t));
    const Mat2 inv_a = a.inverse();
    const Vec2 trans = translation_at(warp, t);
    const double gain = scene.lighting.gain_at(t);

    Frame f(width, height);
    for (int py = 0; py < height; ++py) {
      for (int px = 0; px < width; ++px) {
        const Vec2 y{static_cast<double>(px), static_cast<double>(py)};
        const Vec2 canon = invert_warp(warp, inv_a, trans, y, t);
        double v = texture_value(scene.texture, canon) * gain;
        if (scene.lighting.specular) {
          const SpecularSpec& sp = *scene.lighting.specular;
          const Vec2 c = sp.start + sp.velocity * static_cast<double>(t);
          const double dx = y.x - c.x;
          const double dy = y.y - c.y;
          v += sp.intensity * std::exp(-(dx * dx + dy * dy) / (2.0 * sp.sigma * sp.sigma));
        }
        if (scene.occluder) {
          const double cov = scene.occluder->coverage(y, t);
          if (cov > 0.0) v = cov * scene.occluder->fill + (1.0 - cov) * v;
        }
        f.at(px, py) = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      }
    }
    video.frames.push_back(std::move(f));
  }

  GroundTruth gt;
  std::vector<Vec2> canon_points;
  for (int gy = 8; gy <= height - 9; gy += 8)
    for (int gx = 8; gx <= width - 9; gx += 8)
      canon_points.emplace_back(static_cast<double>(gx), static_cast<double>(gy));
  // Corner points of frame 0 are trackable by construction; frame 0 is the
  // canonical chart, so detected coordinates are canonical coordinates.
  for (const keypoints::Keypoint& kp : keypoints::detect(video.frames[0], 96))
    canon_points.emplace_back(kp.x, kp.y);

  gt.points.reserve(canon_points.size());
  for (const Vec2& c : canon_points) {
    GroundTruthPoint p;
    p.canonical = c;
    p.pos.reserve(static_cast<size_t>(T));
    p.visible.reserve(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) {
      const Vec2 w = warp_point(warp, c, t);
      const bool in_bounds =
          w.x >= 0.0 && w.x <= width - 1.0 && w.y >= 0.0 && w.y <= height - 1.0;
      const bool occluded = scene.occluder && scene.occluder->contains(w, t);
      p.pos.push_back(w);
      p.visible.push_back(in_bounds && !occluded ? 1 : 0);
    }
    gt.points.push_back(std::move(p));
  }
  return {std::move(video), std::move(gt)};
}

VideoSpec random_video_spec(Domain domain, int width, int height, int frames, Rng& rng,
                            MotionPreset preset) {
  VideoSpec spec;
  const Vec2 mid{(width - 1) / 2.0, (height - 1) / 2.0};

  spec.scene.texture.seed = rng.next_u64();
  if (domain == Domain::kSource) {
    spec.scene.texture.bias = 0.5;
    spec.scene.texture.octaves = {{36.0, 0.22}, {15.0, 0.13}, {7.0, 0.072}, {3.2, 0.038}};
  } else {
    spec.scene.texture.bias = 0.55;
    spec.scene.texture.octaves = {{40.0, 0.10}, {18.0, 0.07}, {8.0, 0.05}, {4.0, 0.035}};
  }

  const double angle = rng.uniform(0.0, kTwoPi);
  const double speed = (preset == MotionPreset::kTranslation)
                           ? rng.uniform(0.5, 2.0)
                           : (domain == Domain::kSource ? rng.uniform(0.15, 1.0)
                                                        : rng.uniform(0.3, 1.0));
  spec.warp.velocity = {speed * std::cos(angle), speed * std::sin(angle)};
  spec.warp.center = {mid.x + rng.uniform(-10.0, 10.0), mid.y + rng.uniform(-10.0, 10.0)};

  if (preset == MotionPreset::kDefault) {
    if (domain == Domain::kSource) {
      spec.warp.sway_amp = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
      spec.warp.sway_freq = rng.uniform(0.02, 0.08);
    } else {
      // rapid motion with direction reversals but bounded excursion: large
      // oscillation amplitude at a frequency that peaks near the tracker's
      // per-iteration reach
      auto amp = [&] {
        const double a = rng.uniform(4.0, 12.0);
        return rng.uniform(0.0, 1.0) < 0.5 ? a : -a;
      };
      spec.warp.sway_amp = {amp(), amp()};
      spec.warp.sway_freq = rng.uniform(0.05, 0.13);
    }
    spec.warp.sway_phase = rng.uniform(0.0, kTwoPi);
    if (domain == Domain::kSource) {
      spec.warp.rot_rate = rng.uniform(-0.006, 0.006);
      spec.warp.scale_amp = rng.uniform(0.0, 0.004);
      spec.warp.scale_freq = rng.uniform(0.02, 0.08);
    } else {
      // rotation and scale wobble age the first-frame template quickly,
      // the dominant shift axis between the domains
      const double rot = rng.uniform(0.007, 0.015);
      spec.warp.rot_rate = rng.uniform(0.0, 1.0) < 0.5 ? rot : -rot;
      spec.warp.scale_amp = rng.uniform(0.004, 0.012);
      spec.warp.scale_freq = rng.uniform(0.03, 0.1);
    }
    if (domain == Domain::kTarget) {
      const int n_bumps = 3 + rng.uniform_int(2);
      for (int i = 0; i < n_bumps; ++i) {
        Bump b;
        b.center = {rng.uniform(0.0, width - 1.0), rng.uniform(0.0, height - 1.0)};
        b.sigma = rng.uniform(14.0, 30.0);
        // amplitude capped well below sigma so the inverse warp stays
        // contractive
        const double mag = b.sigma * rng.uniform(0.12, 0.25);
        const double ba = rng.uniform(0.0, kTwoPi);
        b.amp = {mag * std::cos(ba), mag * std::sin(ba)};
        b.freq = rng.uniform(0.05, 0.15);
        b.phase = rng.uniform(0.0, kTwoPi);
        spec.warp.bumps.push_back(b);
      }
    }
  }

  if (domain == Domain::kTarget && preset == MotionPreset::kDefault) {
    spec.scene.lighting.gain_base = rng.uniform(0.95, 1.02);
    spec.scene.lighting.gain_amp = rng.uniform(0.2, 0.35);
    spec.scene.lighting.gain_freq = rng.uniform(0.04, 0.11);
    spec.scene.lighting.gain_phase = rng.uniform(0.0, kTwoPi);

    SpecularSpec sp;
    sp.start = {rng.uniform(0.0, width - 1.0), rng.uniform(0.0, height - 1.0)};
    const double sa = rng.uniform(0.0, kTwoPi);
    const double ss = rng.uniform(1.0, 3.0);
    sp.velocity = {ss * std::cos(sa), ss * std::sin(sa)};
    sp.intensity = rng.uniform(0.35, 0.6);
    sp.sigma = rng.uniform(10.0, 20.0);
    spec.scene.lighting.specular = sp;

    // Small and fast: occlusion stretches last a few frames, so trackers get
    // a real chance to re-acquire once the ellipse has passed.
    OccluderSpec oc;
    oc.rx = rng.uniform(6.0, 11.0);
    oc.ry = rng.uniform(6.0, 11.0);
    oc.fill = rng.uniform(0.0, 1.0) < 0.5 ? rng.uniform(0.02, 0.12) : rng.uniform(0.88, 0.98);
    const Vec2 through{mid.x + rng.uniform(-0.25, 0.25) * width,
                       mid.y + rng.uniform(-0.25, 0.25) * height};
    const double oa = rng.uniform(0.0, kTwoPi);
    const double os = rng.uniform(3.0, 5.0);
    oc.velocity = {os * std::cos(oa), os * std::sin(oa)};
    // Place the ellipse so it sweeps through `through` mid-video.
    oc.start = through - oc.velocity * (0.5 * frames);
    spec.scene.occluder = oc;
  }

  return spec;
}

void make_domain_corpus(const CorpusOptions& opt, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (fs::exists(root))
    for (const auto& e : fs::directory_iterator(root))
      if (e.path().filename() != ".lock")
        throw std::runtime_error("corpus output directory " + root.string() + " is not empty");
  fs::create_directories(root / "videos");
  fs::create_directories(root / "gt");

  const int n = opt.n_videos > 0 ? opt.n_videos : (opt.domain == Domain::kSource ? 40 : 80);
  const char* prefix = opt.domain == Domain::kSource ? "src" : "tgt";

  std::vector<dataio::ManifestEntry> entries(static_cast<size_t>(n));
  std::vector<int> occluder_flags(static_cast<size_t>(n), 0);

  parallel_for(n, [&](int i) {
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "%s-%04d", prefix, i);
    const std::string id = idbuf;

    Rng rng(opt.seed, static_cast<uint64_t>(i));
    const VideoSpec spec =
        random_video_spec(opt.domain, opt.width, opt.height, opt.frames, rng, opt.preset);
    auto [video, gt] = render(spec.scene, spec.warp, opt.width, opt.height, opt.frames, id);

    dataio::write_video(video, root / "videos" / id);

    std::vector<dataio::TrajRecord> records;
    records.reserve(gt.points.size());
    for (const GroundTruthPoint& p : gt.points) {
      dataio::TrajRecord r;
      r.video_id = id;
      r.query = {p.pos[0].x, p.pos[0].y, 0};
      r.points = p.pos;
      r.visible = p.visible;
      r.source = "gt";
      records.push_back(std::move(r));
    }
    dataio::write_trajs(records, root / "gt" / (id + ".traj.jsonl"));

    entries[static_cast<size_t>(i)] = {id, opt.width, opt.height, opt.frames};
    occluder_flags[static_cast<size_t>(i)] = spec.scene.occluder ? 1 : 0;
  });

  int occluder_count = 0;
  for (int f : occluder_flags) occluder_count += f;

  dataio::Manifest m;
  m.domain = opt.domain == Domain::kSource ? "source" : "target";
  m.seed = opt.seed;
  m.videos = std::move(entries);
  m.generator = {{"n_videos", n},
                 {"width", opt.width},
                 {"height", opt.height},
                 {"frames", opt.frames},
                 {"preset", opt.preset == MotionPreset::kTranslation ? "translation" : "default"},
                 {"occluder_count", occluder_count}};
  dataio::write_manifest(m, root);
}

}  // namespace tracklab::synthgen
