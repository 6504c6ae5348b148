// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>

#include "tracklab/metrics.hpp"
#include "tracklab/synthgen.hpp"

using namespace tracklab;
using namespace tracklab::metrics;
using dataio::TrajRecord;

namespace {

std::vector<Vec2> random_points(Rng& rng, int n, double lo = -50.0, double hi = 150.0) {
  std::vector<Vec2> pts;
  for (int i = 0; i < n; ++i) pts.emplace_back(rng.uniform(lo, hi), rng.uniform(lo, hi));
  return pts;
}

// O(n^2) oracles, kept deliberately naive.
double mcd_brute(std::span<const Vec2> a, std::span<const Vec2> b) {
  auto directed = [](std::span<const Vec2> from, std::span<const Vec2> to) {
    double sum = 0.0;
    for (const Vec2& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec2& q : to) best = std::min(best, euclid(p, q));
      sum += best;
    }
    return sum / static_cast<double>(from.size());
  };
  return 0.5 * (directed(a, b) + directed(b, a));
}

double mee_brute(std::span<const Vec2> a, std::span<const Vec2> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    s += std::sqrt((a[i].x - b[i].x) * (a[i].x - b[i].x) +
                   (a[i].y - b[i].y) * (a[i].y - b[i].y));
  return s / static_cast<double>(a.size());
}

}  // namespace

TEST_CASE("mee hand cases") {
  const std::vector<Vec2> gt{{0, 0}, {0, 0}};
  const std::vector<Vec2> pred{{3, 0}, {0, 5}};
  const std::vector<Vec2> none;
  CHECK(mee(pred, gt) == doctest::Approx(4.0));
  CHECK(mee(gt, gt) == 0.0);
  CHECK_THROWS(mee(none, none));
}

TEST_CASE("mcd hand cases") {
  const std::vector<Vec2> a{{0, 0}};
  const std::vector<Vec2> b{{3, 4}};
  const std::vector<Vec2> none;
  CHECK(mcd(a, b) == doctest::Approx(5.0));
  CHECK(mcd(a, a) == 0.0);
  CHECK_THROWS(mcd(none, a));
}

TEST_CASE("delta_avg hand cases") {
  const std::vector<Vec2> gt{{0, 0}};
  const std::vector<Vec2> p5{{5.0, 0.0}}, p0{{0.0, 0.0}}, p100{{100.0, 0.0}}, p4{{4.0, 0.0}};
  CHECK(delta_avg(p5, gt).average == doctest::Approx(80.0));
  CHECK(delta_avg(p0, gt).average == doctest::Approx(100.0));
  CHECK(delta_avg(p100, gt).average == doctest::Approx(0.0));
  // boundary is strict: exactly 4 px is not within 4
  const DeltaBreakdown d = delta_avg(p4, gt);
  CHECK(d.per_threshold[0] == 0.0);
  CHECK(d.per_threshold[1] == 100.0);
}

TEST_CASE("metric oracles agree on random instances") {
  Rng rng(71);
  for (int inst = 0; inst < 100; ++inst) {
    const int n = 1 + rng.uniform_int(60);
    const auto a = random_points(rng, n);
    const auto b = random_points(rng, n);
    CHECK(std::abs(mee(a, b) - mee_brute(a, b)) <= 1e-12);
    const auto c = random_points(rng, 1 + rng.uniform_int(40));
    CHECK(std::abs(mcd(a, c) - mcd_brute(a, c)) <= 1e-12);
    // symmetry
    CHECK(mcd(a, c) == doctest::Approx(mcd(c, a)).epsilon(1e-14));
  }
}

TEST_CASE("threshold accuracies are monotone in the threshold") {
  Rng rng(72);
  for (int inst = 0; inst < 20; ++inst) {
    const int n = 1 + rng.uniform_int(100);
    const auto gt = random_points(rng, n);
    std::vector<Vec2> pred;
    for (const Vec2& p : gt)
      pred.emplace_back(p.x + rng.normal() * 20.0, p.y + rng.normal() * 20.0);
    const DeltaBreakdown d = delta_avg(pred, gt);
    for (size_t t = 1; t < d.per_threshold.size(); ++t)
      CHECK(d.per_threshold[t] >= d.per_threshold[t - 1]);
  }
}

namespace {

TrajRecord make_gt(const std::string& vid, Vec2 start, Vec2 step, int len) {
  TrajRecord r;
  r.video_id = vid;
  r.query = {start.x, start.y, 0};
  for (int t = 0; t < len; ++t) {
    r.points.push_back(start + step * static_cast<double>(t));
    r.visible.push_back(1);
  }
  r.source = "gt";
  return r;
}

TrajRecord constant_pred(const TrajRecord& gt, int len) {
  TrajRecord r = gt;
  r.points.assign(static_cast<size_t>(len), gt.points[0]);
  r.visible.assign(static_cast<size_t>(len), 1);
  r.source = "student";
  return r;
}

}  // namespace

TEST_CASE("evaluate: perfect predictions score perfectly") {
  std::vector<TrajRecord> gt, pred;
  for (int i = 0; i < 10; ++i) {
    gt.push_back(make_gt("v", {10.0 + i, 20.0}, {1.0, 0.5}, 16));
    TrajRecord p = gt.back();
    p.source = "student";
    pred.push_back(p);
  }
  const EvalReport rep = evaluate(pred, gt, EvalMode::kFinalFrame);
  CHECK(rep.mee == 0.0);
  CHECK(rep.mcd == 0.0);
  CHECK(rep.delta_avg == 100.0);
  CHECK(rep.n_points == 10);
  CHECK(rep.n_sequences == 1);
  const EvalReport all = evaluate(pred, gt, EvalMode::kAllFrames);
  CHECK(all.mee == 0.0);
  CHECK(all.n_points == 150);  // 10 queries x 15 refined frames
}

TEST_CASE("evaluate: constant predictions on a translating scene") {
  // per-frame shift (2,3) over 15 steps: final-frame error |(30,45)| for
  // every point
  std::vector<TrajRecord> gt, pred;
  for (int i = 0; i < 6; ++i) {
    gt.push_back(make_gt("v", {15.0 + 3 * i, 25.0}, {2.0, 3.0}, 16));
    pred.push_back(constant_pred(gt.back(), 16));
  }
  const EvalReport rep = evaluate(pred, gt, EvalMode::kFinalFrame);
  const double expected = std::sqrt(30.0 * 30.0 + 45.0 * 45.0);
  CHECK(rep.mee == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(54.0833).epsilon(1e-4));
  // every endpoint misses by > 32 and < 64
  CHECK(rep.threshold_acc[3] == 0.0);
  CHECK(rep.threshold_acc[4] == 100.0);
  CHECK(rep.delta_avg == doctest::Approx(20.0));
}

TEST_CASE("evaluate: occluded-at-eval-frame points are excluded") {
  TrajRecord g = make_gt("v", {10.0, 10.0}, {1.0, 0.0}, 8);
  g.visible.back() = 0;  // occluded at the final frame
  TrajRecord g2 = make_gt("v", {30.0, 30.0}, {1.0, 0.0}, 8);
  std::vector<TrajRecord> gt{g, g2};
  std::vector<TrajRecord> pred{constant_pred(g, 8), constant_pred(g2, 8)};
  const EvalReport rep = evaluate(pred, gt, EvalMode::kFinalFrame);
  CHECK(rep.n_points == 1);  // only the GT-visible endpoint counts
  CHECK(rep.mee == doctest::Approx(7.0));
}

TEST_CASE("evaluate pools points across sequences") {
  // two videos, eval path must weight all points equally
  std::vector<TrajRecord> gt, pred;
  gt.push_back(make_gt("a", {10.0, 10.0}, {0.0, 0.0}, 4));
  pred.push_back(constant_pred(gt.back(), 4));  // error 0
  TrajRecord g2 = make_gt("b", {40.0, 40.0}, {2.0, 0.0}, 4);
  gt.push_back(g2);
  pred.push_back(constant_pred(g2, 4));  // error 6 at final frame
  const EvalReport rep = evaluate(pred, gt, EvalMode::kFinalFrame);
  CHECK(rep.n_points == 2);
  CHECK(rep.n_sequences == 2);
  CHECK(rep.mee == doctest::Approx(3.0));
}

TEST_CASE("evaluate rejects unmatched queries by name") {
  std::vector<TrajRecord> gt{make_gt("v", {10.0, 10.0}, {1.0, 0.0}, 4)};
  TrajRecord stranger = make_gt("v", {99.0, 7.0}, {1.0, 0.0}, 4);
  stranger.source = "student";
  const std::vector<TrajRecord> pred{stranger};
  try {
    evaluate(pred, gt, EvalMode::kFinalFrame);
    FAIL("expected identity mismatch");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("99") != std::string::npos);
  }
}

TEST_CASE("report files are written deterministically") {
  namespace fs = std::filesystem;
  EvalReport rep;
  rep.mee = 1.5;
  rep.mcd = 2.25;
  rep.delta_avg = 77.5;
  rep.threshold_acc = {50.0, 62.5, 87.5, 93.75, 93.75};
  rep.n_points = 16;
  rep.n_sequences = 2;
  const fs::path dir = fs::temp_directory_path() / "tracklab_metrics_out";
  fs::create_directories(dir);
  write_report_json(rep, dir / "r1.json");
  write_report_json(rep, dir / "r2.json");
  CHECK(dataio::file_hash(dir / "r1.json") == dataio::file_hash(dir / "r2.json"));
  fs::remove(dir / "csv.csv");
  append_report_csv(rep, "row1", dir / "csv.csv");
  append_report_csv(rep, "row2", dir / "csv.csv");
  std::ifstream in(dir / "csv.csv");
  std::string header, row1, row2;
  std::getline(in, header);
  std::getline(in, row1);
  std::getline(in, row2);
  CHECK(header.find("mee") != std::string::npos);
  CHECK(row1.substr(0, 5) == "row1,");
  CHECK(row2.substr(0, 5) == "row2,");
  write_accuracy_svg(rep, dir / "acc.svg");
  std::ifstream svg(dir / "acc.svg");
  std::string content((std::istreambuf_iterator<char>(svg)), std::istreambuf_iterator<char>());
  CHECK(content.find("<svg") != std::string::npos);
  CHECK(content.find("rect") != std::string::npos);
  fs::remove_all(dir);
}
