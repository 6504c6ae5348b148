// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <cmath>

#include "tracklab/synthgen.hpp"

using namespace tracklab;
using namespace tracklab::synthgen;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("tracklab_synth_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

// Independent re-evaluation of the warp formula, written as plainly as
// possible (long double, term-by-term) to cross-check warp_point.
Vec2 warp_point_oracle(const WarpSpec& s, const Vec2& c, int t) {
  const long double two_pi = 6.283185307179586476925286766559L;
  const long double angle = static_cast<long double>(s.rot_rate) * t;
  const long double scale = expl(static_cast<long double>(s.scale_amp) *
                                 sinl(two_pi * s.scale_freq * t));
  const long double ca = cosl(angle) * scale;
  const long double sa = sinl(angle) * scale;
  // affine about the pivot
  const long double rx = c.x - s.center.x;
  const long double ry = c.y - s.center.y;
  long double x = ca * rx - sa * ry + s.center.x;
  long double y = sa * rx + ca * ry + s.center.y;
  // translation terms
  x += static_cast<long double>(s.velocity.x) * t;
  y += static_cast<long double>(s.velocity.y) * t;
  const long double sw = sinl(two_pi * s.sway_freq * t + s.sway_phase) - sinl(s.sway_phase);
  x += s.sway_amp.x * sw;
  y += s.sway_amp.y * sw;
  for (const Bump& b : s.bumps) {
    const long double g = sinl(two_pi * b.freq * t + b.phase) - sinl(b.phase);
    const long double dx = c.x - b.center.x;
    const long double dy = c.y - b.center.y;
    const long double env = expl(-(dx * dx + dy * dy) / (2.0L * b.sigma * b.sigma));
    x += b.amp.x * g * env;
    y += b.amp.y * g * env;
  }
  return {static_cast<double>(x), static_cast<double>(y)};
}

}  // namespace

TEST_CASE("warp is the identity at t = 0") {
  Rng rng(11);
  for (int i = 0; i < 10; ++i) {
    const VideoSpec spec = random_video_spec(Domain::kTarget, 128, 128, 48, rng);
    const Vec2 p{rng.uniform(0.0, 127.0), rng.uniform(0.0, 127.0)};
    const Vec2 w = warp_point(spec.warp, p, 0);
    CHECK(w.x == doctest::Approx(p.x).epsilon(1e-12));
    CHECK(w.y == doctest::Approx(p.y).epsilon(1e-12));
  }
}

TEST_CASE("pure translation warp moves linearly") {
  WarpSpec s;
  s.velocity = {2.0, 3.0};
  const Vec2 w = warp_point(s, {10.0, 10.0}, 4);
  CHECK(w.x == doctest::Approx(18.0));
  CHECK(w.y == doctest::Approx(22.0));
}

TEST_CASE("warp_point matches an independent symbolic evaluation") {
  Rng rng(77);
  for (int i = 0; i < 25; ++i) {
    const VideoSpec spec = random_video_spec(Domain::kTarget, 128, 128, 48, rng);
    for (int k = 0; k < 8; ++k) {
      const Vec2 p{rng.uniform(-20.0, 150.0), rng.uniform(-20.0, 150.0)};
      const int t = rng.uniform_int(48);
      const Vec2 a = warp_point(spec.warp, p, t);
      const Vec2 b = warp_point_oracle(spec.warp, p, t);
      CHECK(a.x == doctest::Approx(b.x).epsilon(1e-10));
      CHECK(a.y == doctest::Approx(b.y).epsilon(1e-10));
    }
  }
}

TEST_CASE("identity warp renders identical frames with static visible gt") {
  SceneSpec scene;
  scene.texture.seed = 5;
  scene.texture.octaves = {{24.0, 0.3}, {8.0, 0.15}};
  const WarpSpec warp;  // identity forever
  auto [video, gt] = render(scene, warp, 64, 64, 4, "idt");
  REQUIRE(video.frame_count() == 4);
  for (int t = 1; t < 4; ++t) CHECK(video.frames[t].pixels == video.frames[0].pixels);
  REQUIRE(!gt.points.empty());
  for (const GroundTruthPoint& p : gt.points) {
    for (int t = 0; t < 4; ++t) {
      CHECK(p.pos[t] == p.pos[0]);
      CHECK(p.visible[t] == 1);
    }
  }
}

TEST_CASE("occluder controls visibility flags exactly") {
  SceneSpec scene;
  scene.texture.seed = 3;
  scene.texture.octaves = {{24.0, 0.3}, {8.0, 0.15}};
  OccluderSpec oc;
  oc.rx = 8.0;
  oc.ry = 8.0;
  oc.fill = 0.1;
  // distance to the point (32, 32): |4t - 26|; inside iff t in [4.5, 8.5]
  oc.start = {32.0 - 26.0, 32.0};
  oc.velocity = {4.0, 0.0};
  scene.occluder = oc;
  const WarpSpec warp;  // static points
  auto [video, gt] = render(scene, warp, 64, 64, 12, "occ");

  const GroundTruthPoint* probe = nullptr;
  for (const GroundTruthPoint& p : gt.points)
    if (p.canonical.x == 32.0 && p.canonical.y == 32.0) probe = &p;
  REQUIRE(probe != nullptr);
  for (int t = 0; t < 12; ++t) {
    const bool expect_hidden = t >= 5 && t <= 8;
    CHECK(probe->visible[t] == (expect_hidden ? 0 : 1));
  }
}

TEST_CASE("brute-force patch correlation recovers translation ground truth") {
  Rng rng(21);
  const VideoSpec spec = random_video_spec(Domain::kSource, 96, 96, 6,
                                           rng, MotionPreset::kTranslation);
  auto [video, gt] = render(spec.scene, spec.warp, 96, 96, 6, "tr");

  // displacement search by normalized cross-correlation of 9x9 patches
  // between frame 0 and frame t, with parabolic subpixel peak refinement
  auto ncc_match = [&](const Vec2& p0, int t, const Vec2& expect) {
    const Frame& a = video.frames[0];
    const Frame& b = video.frames[static_cast<size_t>(t)];
    const int r = 4;
    const int range = 12;
    const int side = 2 * range + 1;
    std::vector<double> score(static_cast<size_t>(side) * side, -2.0);
    for (int dy = -range; dy <= range; ++dy)
      for (int dx = -range; dx <= range; ++dx) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        int n = 0;
        for (int gy = -r; gy <= r; ++gy)
          for (int gx = -r; gx <= r; ++gx) {
            const int ax = static_cast<int>(p0.x) + gx, ay = static_cast<int>(p0.y) + gy;
            const int bx = ax + dx, by = ay + dy;
            if (ax < 0 || ay < 0 || ax >= 96 || ay >= 96) continue;
            if (bx < 0 || by < 0 || bx >= 96 || by >= 96) continue;
            const double va = a.at(ax, ay), vb = b.at(bx, by);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
            ++n;
          }
        if (n < 60) continue;
        const double cov = sab - sa * sb / n;
        const double var = std::sqrt((saa - sa * sa / n) * (sbb - sb * sb / n)) + 1e-12;
        score[static_cast<size_t>((dy + range) * side + dx + range)] = cov / var;
      }
    int bi = 0;
    for (int i = 1; i < side * side; ++i)
      if (score[static_cast<size_t>(i)] > score[static_cast<size_t>(bi)]) bi = i;
    const int by = bi / side, bx = bi % side;
    Vec2 best_d{static_cast<double>(bx - range), static_cast<double>(by - range)};
    auto refine = [&](int c0, int cm, int cp) {
      const double vm = score[static_cast<size_t>(cm)], v0 = score[static_cast<size_t>(c0)],
                   vp = score[static_cast<size_t>(cp)];
      const double den = vm - 2.0 * v0 + vp;
      if (vm <= -2.0 || vp <= -2.0 || std::abs(den) < 1e-12) return 0.0;
      return std::clamp(0.5 * (vm - vp) / den, -0.5, 0.5);
    };
    if (bx > 0 && bx < side - 1) best_d.x += refine(bi, bi - 1, bi + 1);
    if (by > 0 && by < side - 1) best_d.y += refine(bi, bi - side, bi + side);
    const Vec2 true_d = expect - p0;
    return euclid(best_d, true_d) <= 0.5;
  };

  int total = 0, good = 0;
  for (const GroundTruthPoint& p : gt.points) {
    if (p.canonical.x < 16 || p.canonical.x > 79 || p.canonical.y < 16 || p.canonical.y > 79)
      continue;
    if (!p.visible[4]) continue;
    ++total;
    if (ncc_match(p.pos[0], 4, p.pos[4])) ++good;
  }
  REQUIRE(total >= 30);
  CHECK(static_cast<double>(good) >= 0.95 * static_cast<double>(total));
}

TEST_CASE("corpus generation is byte-identical across runs") {
  TempDir tmp;
  CorpusOptions opt;
  opt.domain = Domain::kTarget;
  opt.n_videos = 2;
  opt.width = 64;
  opt.height = 64;
  opt.frames = 8;
  opt.seed = 99;
  make_domain_corpus(opt, tmp.path / "a");
  make_domain_corpus(opt, tmp.path / "b");
  for (const char* rel : {"manifest.json", "gt/tgt-0000.traj.jsonl", "gt/tgt-0001.traj.jsonl",
                          "videos/tgt-0000/frame_00000.pgm", "videos/tgt-0001/frame_00007.pgm"}) {
    CHECK(dataio::file_hash(tmp.path / "a" / rel) == dataio::file_hash(tmp.path / "b" / rel));
  }
}

TEST_CASE("source corpus has no occluders") {
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const VideoSpec spec = random_video_spec(Domain::kSource, 128, 128, 48, rng);
    CHECK_FALSE(spec.scene.occluder.has_value());
    CHECK(spec.scene.lighting.gain_amp == 0.0);
  }
  TempDir tmp;
  CorpusOptions opt;
  opt.domain = Domain::kSource;
  opt.n_videos = 2;
  opt.width = 64;
  opt.height = 64;
  opt.frames = 6;
  opt.seed = 3;
  make_domain_corpus(opt, tmp.path / "c");
  const auto m = dataio::read_manifest(tmp.path / "c");
  CHECK(m.generator.at("occluder_count").get<int>() == 0);
}

TEST_CASE("target corpus has higher temporal brightness variation than source") {
  TempDir tmp;
  CorpusOptions src;
  src.domain = Domain::kSource;
  src.n_videos = 10;
  src.width = 64;
  src.height = 64;
  src.frames = 24;
  src.seed = 42;
  CorpusOptions tgt = src;
  tgt.domain = Domain::kTarget;
  make_domain_corpus(src, tmp.path / "src");
  make_domain_corpus(tgt, tmp.path / "tgt");

  auto mean_temporal_std = [&](const fs::path& root) {
    const auto corpus = dataio::TrainCorpus::open(root);
    double total = 0.0;
    long count = 0;
    for (int v = 0; v < corpus.size(); ++v) {
      const Video vid = corpus.load_video(v);
      const int n = vid.frame_count();
      for (int i = 0; i < vid.width * vid.height; ++i) {
        double s = 0, sq = 0;
        for (const Frame& f : vid.frames) {
          s += f.pixels[static_cast<size_t>(i)];
          sq += f.pixels[static_cast<size_t>(i)] * f.pixels[static_cast<size_t>(i)];
        }
        total += std::sqrt(std::max(0.0, sq / n - (s / n) * (s / n)));
        ++count;
      }
    }
    return total / static_cast<double>(count);
  };

  const double src_std = mean_temporal_std(tmp.path / "src");
  const double tgt_std = mean_temporal_std(tmp.path / "tgt");
  CHECK(tgt_std > src_std);
}

TEST_CASE("render rejects a degenerate affine") {
  SceneSpec scene;
  scene.texture.octaves = {{16.0, 0.3}};
  WarpSpec warp;
  warp.scale_amp = -40.0;  // collapses the frame scale
  warp.scale_freq = 0.25;
  CHECK_THROWS_WITH_AS(render(scene, warp, 64, 64, 4, "bad"), doctest::Contains("degenerate"),
                       std::runtime_error);
}
