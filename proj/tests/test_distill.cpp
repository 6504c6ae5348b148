// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <cmath>
#include <map>

#include "tracklab/distill.hpp"
#include "tracklab/synthgen.hpp"

using namespace tracklab;
using namespace tracklab::distill;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("tracklab_distill_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

// A small corpus at the real video geometry; shared across test cases to
// amortize generation.
const fs::path& target_corpus() {
  static TempDir tmp;
  static bool made = false;
  if (!made) {
    synthgen::CorpusOptions opt;
    opt.domain = synthgen::Domain::kTarget;
    opt.n_videos = 6;
    opt.seed = 555;
    synthgen::make_domain_corpus(opt, tmp.path / "tgt");
    made = true;
  }
  static fs::path p = tmp.path / "tgt";
  return p;
}

DistillConfig small_cfg() {
  DistillConfig cfg;
  cfg.alpha = 5.0;
  cfg.window_len = 8;
  cfg.stride_min = 1;
  cfg.stride_max = 2;
  cfg.queries_per_window = 16;
  cfg.min_retained = 4;
  cfg.total_steps = 3;
  cfg.seed = 9;
  return cfg;
}

}  // namespace

TEST_CASE("filter_batch strict threshold semantics") {
  const std::vector<double> errors{0.0, 4.99, 5.0, 7.2};
  const auto kept = filter_batch(errors, 5.0);
  REQUIRE(kept.size() == 4);
  CHECK(kept[0] == 1);
  CHECK(kept[1] == 1);
  CHECK(kept[2] == 0);  // tie rejected
  CHECK(kept[3] == 0);

  const auto all = filter_batch(errors, std::nullopt);
  for (uint8_t k : all) CHECK(k == 1);
}

TEST_CASE("filter retention is monotone in alpha") {
  Rng rng(4);
  for (int inst = 0; inst < 30; ++inst) {
    std::vector<double> errors;
    for (int i = 0; i < 40; ++i) errors.push_back(rng.uniform(0.0, 12.0));
    const auto tight = filter_batch(errors, 2.5);
    const auto loose = filter_batch(errors, 5.0);
    for (size_t i = 0; i < errors.size(); ++i)
      if (tight[i]) CHECK(loose[i]);
  }
}

TEST_CASE("cycle error arithmetic") {
  const QueryPoint q{10.0, 20.0, 0};
  Trajectory backward;
  backward.points = {Vec2{55.0, 60.0}, Vec2{13.0, 24.0}};  // endpoint = query + (3,4)
  backward.visible = {1, 1};
  CHECK(cycle_error_value(q, backward) == doctest::Approx(5.0));
}

TEST_CASE("zero-output self teacher is perfectly cycle consistent") {
  // identity tracker: forward and backward stay at the query
  Rng rng(3);
  nt::NeuralTrackerParams init = nt::init_params(rng);
  Teacher teacher{"self", init};

  Video video;
  video.id = "v";
  video.width = 64;
  video.height = 64;
  synthgen::TextureSpec tex;
  tex.seed = 8;
  tex.octaves = {{16.0, 0.25}, {6.0, 0.15}};
  Frame f(64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      f.at(x, y) = std::clamp(
          synthgen::texture_value(tex, {static_cast<double>(x), static_cast<double>(y)}), 0.0, 1.0);
  video.frames.assign(6, f);

  const TrackWindow window{0, 1, 6};
  const QueryPoint q{30.0, 30.0, 0};
  const auto [fwd, err] = cycle_error(teacher, video, window, q);
  CHECK(err == 0.0);
  CHECK(fwd.points.back() == q.pos());
}

TEST_CASE("lk teacher cycle errors blow up on occluded points") {
  // occluder sweeps over the window; points under it mid-window cannot cycle
  synthgen::SceneSpec scene;
  scene.texture.seed = 12;
  scene.texture.octaves = {{24.0, 0.2}, {9.0, 0.14}, {4.0, 0.08}};
  synthgen::OccluderSpec oc;
  oc.rx = 14.0;
  oc.ry = 90.0;
  oc.fill = 0.07;
  oc.start = {10.0, 48.0};
  oc.velocity = {5.0, 0.0};
  scene.occluder = oc;
  const synthgen::WarpSpec warp;
  auto [video, gt] = synthgen::render(scene, warp, 96, 96, 16, "o");

  Teacher teacher{"lk", lk::LkConfig{}};
  const TrackWindow window{0, 1, 16};

  int occluded = 0, inconsistent = 0;
  for (const auto& p : gt.points) {
    bool occluded_mid = false;
    for (int t = 4; t < 12; ++t) occluded_mid |= !p.visible[static_cast<size_t>(t)];
    if (!p.visible[0] || !occluded_mid) continue;
    if (p.canonical.x < 14 || p.canonical.x > 82 || p.canonical.y < 14 || p.canonical.y > 82)
      continue;
    ++occluded;
    const QueryPoint q{p.pos[0].x, p.pos[0].y, 0};
    const auto [fwd, err] = cycle_error(teacher, video, window, q);
    if (err > 5.0) ++inconsistent;
  }
  REQUIRE(occluded >= 10);
  CHECK(static_cast<double>(inconsistent) >= 0.7 * static_cast<double>(occluded));
}

TEST_CASE("make_batch skips featureless corpora") {
  TempDir tmp;
  Video flat;
  flat.id = "flat";
  flat.width = 64;
  flat.height = 64;
  flat.frames.assign(10, Frame(64, 64, 0.5));
  dataio::write_video(flat, tmp.path / "videos" / "flat");
  dataio::Manifest m;
  m.domain = "target";
  m.seed = 0;
  m.videos = {{"flat", 64, 64, 10}};
  dataio::write_manifest(m, tmp.path);
  const auto corpus = dataio::TrainCorpus::open(tmp.path);

  Rng rng(1);
  nt::NeuralTrackerParams init = nt::init_params(rng);
  TeacherPool pool{{Teacher{"self", init}}};
  DistillConfig cfg = small_cfg();
  Rng batch_rng(5);
  CHECK_FALSE(make_batch(pool, corpus, cfg, batch_rng).has_value());
}

TEST_CASE("make_batch draws the single teacher and is seed-deterministic") {
  const auto corpus = dataio::TrainCorpus::open(target_corpus());
  Rng rng(3);
  nt::NeuralTrackerParams init = nt::init_params(rng);
  TeacherPool pool{{Teacher{"self", init}}};
  const DistillConfig cfg = small_cfg();

  Rng r1(42), r2(42);
  auto b1 = make_batch(pool, corpus, cfg, r1);
  auto b2 = make_batch(pool, corpus, cfg, r2);
  REQUIRE(b1.has_value());
  REQUIRE(b2.has_value());
  CHECK(b1->batch.teacher_id == "self");
  CHECK(b1->batch.video_id == b2->batch.video_id);
  CHECK(b1->batch.window.start == b2->batch.window.start);
  CHECK(b1->batch.window.stride == b2->batch.window.stride);
  REQUIRE(b1->batch.queries.size() == b2->batch.queries.size());
  for (size_t i = 0; i < b1->batch.queries.size(); ++i) {
    CHECK(b1->batch.queries[i].x == b2->batch.queries[i].x);
    CHECK(b1->batch.cycle_errors[i] == b2->batch.cycle_errors[i]);
    CHECK(b1->batch.retained[i] == b2->batch.retained[i]);
  }
  // filter soundness on the live batch
  for (size_t i = 0; i < b1->batch.queries.size(); ++i)
    CHECK(b1->batch.retained[i] == (b1->batch.cycle_errors[i] < 5.0 ? 1 : 0));
}

TEST_CASE("distill_run: zero steps returns the initialization unchanged") {
  const auto corpus = dataio::TrainCorpus::open(target_corpus());
  Rng rng(3);
  const nt::NeuralTrackerParams init = nt::init_params(rng);
  TeacherPool pool{{Teacher{"self", init}}};
  DistillConfig cfg = small_cfg();
  cfg.total_steps = 0;
  const auto res = distill_run(init, pool, corpus, cfg, {}, {});
  CHECK(res.params == init);
  CHECK(res.log.empty());
}

TEST_CASE("distill_run: teacher stays bit-frozen and self start has zero loss") {
  const auto corpus = dataio::TrainCorpus::open(target_corpus());
  Rng rng(3);
  const nt::NeuralTrackerParams init = nt::init_params(rng);  // zero output layer
  TeacherPool pool{{Teacher{"self", init}}};
  const uint64_t teacher_hash_before = nt::params_hash(std::get<nt::NeuralTrackerParams>(pool.teachers[0].model));

  DistillConfig cfg = small_cfg();
  nt::AdamConfig adam;
  adam.base_lr = 5e-5;
  adam.total_steps = cfg.total_steps;
  const auto res = distill_run(init, pool, corpus, cfg, {}, adam);
  REQUIRE(res.log.size() == 3);
  // identity teacher labels equal identity student predictions bitwise
  CHECK(res.log[0].loss == 0.0);
  CHECK(res.log[0].retention_rate == 1.0);
  CHECK(res.log[0].teacher_id == "self");
  CHECK(nt::params_hash(std::get<nt::NeuralTrackerParams>(pool.teachers[0].model)) ==
        teacher_hash_before);
}

TEST_CASE("distill_run rejects a mismatched self teacher") {
  const auto corpus = dataio::TrainCorpus::open(target_corpus());
  Rng rng(3);
  const nt::NeuralTrackerParams init = nt::init_params(rng);
  nt::NeuralTrackerParams other = init;
  other.w[0] += 1.0;
  TeacherPool pool{{Teacher{"self", other}}};
  CHECK_THROWS_AS(distill_run(init, pool, corpus, small_cfg(), {}, {}),
                  std::invalid_argument);
}

TEST_CASE("teacher pool validation") {
  Rng rng(3);
  const nt::NeuralTrackerParams init = nt::init_params(rng);
  TeacherPool empty;
  CHECK_THROWS_AS(empty.validate(), std::invalid_argument);
  TeacherPool dup{{Teacher{"a", init}, Teacher{"a", lk::LkConfig{}}}};
  CHECK_THROWS_AS(dup.validate(), std::invalid_argument);
  TeacherPool ok{{Teacher{"self", init}, Teacher{"lk", lk::LkConfig{}}}};
  CHECK_NOTHROW(ok.validate());
}

TEST_CASE("retained labels have lower ground-truth error than all labels") {
  // Direction of the label-quality claim with the classical teacher, at the
  // experiment's window geometry on a reduced video count.
  const auto corpus = dataio::TrainCorpus::open(target_corpus());
  const auto labeled = dataio::LabeledCorpus::open(target_corpus());

  TeacherPool pool{{Teacher{"lk", lk::LkConfig{}}}};
  DistillConfig cfg = small_cfg();
  cfg.window_len = 16;
  cfg.stride_max = 4;
  cfg.queries_per_window = 24;
  cfg.min_retained = 1;

  // ground truth lookup per video id
  std::map<std::string, std::vector<dataio::TrajRecord>> gt;
  for (int i = 0; i < labeled.size(); ++i) gt[labeled.entry(i).id] = labeled.load_gt(i);

  Rng rng(11);
  double err_all = 0.0, err_kept = 0.0;
  long n_all = 0, n_kept = 0;
  int batches = 0;
  long guard = 0;
  // the direction is a statistical claim; measure it at the contract's
  // batch count
  while (batches < 50 && ++guard < 2000) {
    auto made = make_batch(pool, corpus, cfg, rng);
    if (!made) continue;
    ++batches;
    const PseudoLabelBatch& b = made->batch;
    const auto& records = gt.at(b.video_id);
    for (size_t i = 0; i < b.queries.size(); ++i) {
      // match the query against the gt records by start position
      const Vec2 qp = b.queries[i].pos();
      double best_d = 1e18;
      const dataio::TrajRecord* best = nullptr;
      for (const auto& r : records) {
        const double d = euclid(r.points[static_cast<size_t>(b.window.start)], qp);
        if (d < best_d) {
          best_d = d;
          best = &r;
        }
      }
      if (!best || best_d > 2.0) continue;  // corner queries may be off-grid
      const int f_end = b.window.last_frame();
      if (!best->visible[static_cast<size_t>(f_end)]) continue;
      const double e = euclid(b.teacher_trajs[i].points.back(),
                              best->points[static_cast<size_t>(f_end)] +
                                  (qp - best->points[static_cast<size_t>(b.window.start)]));
      err_all += e;
      ++n_all;
      if (b.retained[i]) {
        err_kept += e;
        ++n_kept;
      }
    }
  }
  REQUIRE(n_all > 50);
  REQUIRE(n_kept > 10);
  CHECK(n_kept < n_all);
  CHECK(err_kept / n_kept <= err_all / n_all);
}
