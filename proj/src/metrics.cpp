// SPDX-License-Identifier: Apache-2.0

#include "tracklab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

namespace tracklab::metrics {

namespace {

// Small 2D k-d tree for nearest-neighbor queries; median split, node
// ordering fixed by construction for determinism.
class KdTree2 {
 public:
  explicit KdTree2(std::span<const Vec2> pts) : pts_(pts.begin(), pts.end()) {
    idx_.resize(pts_.size());
    for (size_t i = 0; i < idx_.size(); ++i) idx_[i] = static_cast<int>(i);
    build(0, static_cast<int>(idx_.size()), 0);
  }

  double nearest_dist(const Vec2& q) const {
    double best = std::numeric_limits<double>::infinity();
    search(q, 0, static_cast<int>(idx_.size()), 0, best);
    return std::sqrt(best);
  }

 private:
  void build(int lo, int hi, int axis) {
    if (hi - lo <= 1) return;
    const int mid = (lo + hi) / 2;
    std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                     [&](int a, int b) {
                       const double va = axis == 0 ? pts_[static_cast<size_t>(a)].x : pts_[static_cast<size_t>(a)].y;
                       const double vb = axis == 0 ? pts_[static_cast<size_t>(b)].x : pts_[static_cast<size_t>(b)].y;
                       if (va != vb) return va < vb;
                       return a < b;
                     });
    build(lo, mid, 1 - axis);
    build(mid + 1, hi, 1 - axis);
  }

  void search(const Vec2& q, int lo, int hi, int axis, double& best) const {
    if (hi <= lo) return;
    const int mid = (lo + hi) / 2;
    const Vec2& p = pts_[static_cast<size_t>(idx_[static_cast<size_t>(mid)])];
    const double dx = q.x - p.x;
    const double dy = q.y - p.y;
    const double d2 = dx * dx + dy * dy;
    if (d2 < best) best = d2;
    const double split = axis == 0 ? dx : dy;
    const int near_lo = split < 0.0 ? lo : mid + 1;
    const int near_hi = split < 0.0 ? mid : hi;
    const int far_lo = split < 0.0 ? mid + 1 : lo;
    const int far_hi = split < 0.0 ? hi : mid;
    search(q, near_lo, near_hi, 1 - axis, best);
    if (split * split < best) search(q, far_lo, far_hi, 1 - axis, best);
  }

  std::vector<Vec2> pts_;
  std::vector<int> idx_;
};

double directed_mean_nn(std::span<const Vec2> from, const KdTree2& to_tree) {
  double sum = 0.0;
  for (const Vec2& p : from) sum += to_tree.nearest_dist(p);
  return sum / static_cast<double>(from.size());
}

}  // namespace

double mee(std::span<const Vec2> pred, std::span<const Vec2> gt) {
  if (pred.empty() || pred.size() != gt.size())
    throw std::invalid_argument("mee: inputs must be aligned and non-empty");
  double sum = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) sum += euclid(pred[i], gt[i]);
  return sum / static_cast<double>(pred.size());
}

double mcd(std::span<const Vec2> a, std::span<const Vec2> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("mcd: sets must be non-empty");
  const KdTree2 ta(a);
  const KdTree2 tb(b);
  return 0.5 * (directed_mean_nn(a, tb) + directed_mean_nn(b, ta));
}

DeltaBreakdown delta_avg(std::span<const Vec2> pred, std::span<const Vec2> gt) {
  if (pred.empty() || pred.size() != gt.size())
    throw std::invalid_argument("delta_avg: inputs must be aligned and non-empty");
  DeltaBreakdown out;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double err = euclid(pred[i], gt[i]);
    for (size_t t = 0; t < kThresholds.size(); ++t)
      if (err < kThresholds[t]) out.per_threshold[t] += 1.0;
  }
  for (size_t t = 0; t < kThresholds.size(); ++t) {
    out.per_threshold[t] = 100.0 * out.per_threshold[t] / static_cast<double>(pred.size());
    out.average += out.per_threshold[t];
  }
  out.average /= static_cast<double>(kThresholds.size());
  return out;
}

namespace {

struct QueryKey {
  std::string video_id;
  int frame;
  double x;
  double y;
  bool operator<(const QueryKey& o) const {
    if (video_id != o.video_id) return video_id < o.video_id;
    if (frame != o.frame) return frame < o.frame;
    if (x != o.x) return x < o.x;
    return y < o.y;
  }
};

std::string key_str(const QueryKey& k) {
  return k.video_id + "@(" + dataio::format_double(k.x) + "," + dataio::format_double(k.y) +
         ",t" + std::to_string(k.frame) + ")";
}

}  // namespace

EvalReport evaluate(std::span<const dataio::TrajRecord> pred,
                    std::span<const dataio::TrajRecord> gt, EvalMode mode) {
  std::map<QueryKey, const dataio::TrajRecord*> gt_index;
  for (const dataio::TrajRecord& r : gt)
    gt_index[{r.video_id, r.query.t0, r.query.x, r.query.y}] = &r;

  std::string unmatched;
  int unmatched_count = 0;
  // Per (video, frame) point sets for the Chamfer term.
  std::map<std::pair<std::string, int>, std::pair<std::vector<Vec2>, std::vector<Vec2>>> sets;
  std::vector<Vec2> pooled_pred, pooled_gt;
  std::map<std::string, bool> sequences;

  for (const dataio::TrajRecord& r : pred) {
    const QueryKey key{r.video_id, r.query.t0, r.query.x, r.query.y};
    auto it = gt_index.find(key);
    if (it == gt_index.end()) {
      if (unmatched_count < 8) unmatched += (unmatched.empty() ? "" : ", ") + key_str(key);
      ++unmatched_count;
      continue;
    }
    const dataio::TrajRecord& g = *it->second;
    sequences[r.video_id] = true;

    const int pred_len = static_cast<int>(r.points.size());
    const int lo = mode == EvalMode::kFinalFrame ? pred_len - 1 : 1;
    for (int i = lo; i < pred_len; ++i) {
      const int video_frame = r.query.t0 + i;  // evaluation windows use stride 1
      if (video_frame >= static_cast<int>(g.points.size())) break;
      if (!g.visible[static_cast<size_t>(video_frame)]) continue;  // no defined GT position
      pooled_pred.push_back(r.points[static_cast<size_t>(i)]);
      pooled_gt.push_back(g.points[static_cast<size_t>(video_frame)]);
      auto& [ps, gs] = sets[{r.video_id, video_frame}];
      ps.push_back(r.points[static_cast<size_t>(i)]);
      gs.push_back(g.points[static_cast<size_t>(video_frame)]);
    }
  }

  if (unmatched_count > 0)
    throw std::runtime_error("evaluate: " + std::to_string(unmatched_count) +
                             " predicted queries have no ground truth: " + unmatched +
                             (unmatched_count > 8 ? ", ..." : ""));
  if (pooled_pred.empty())
    throw std::runtime_error("evaluate: no GT-visible points at the evaluated frames");

  EvalReport rep;
  rep.mee = mee(pooled_pred, pooled_gt);
  const DeltaBreakdown d = delta_avg(pooled_pred, pooled_gt);
  rep.delta_avg = d.average;
  rep.threshold_acc = d.per_threshold;

  double chamfer_weighted = 0.0;
  long chamfer_points = 0;
  for (const auto& [key, pair] : sets) {
    const auto& [ps, gs] = pair;
    chamfer_weighted += mcd(ps, gs) * static_cast<double>(ps.size());
    chamfer_points += static_cast<long>(ps.size());
  }
  rep.mcd = chamfer_weighted / static_cast<double>(chamfer_points);
  rep.n_points = static_cast<long>(pooled_pred.size());
  rep.n_sequences = static_cast<int>(sequences.size());
  return rep;
}

void write_report_json(const EvalReport& r, const std::filesystem::path& path) {
  nlohmann::json j{{"mee", r.mee},
                   {"mcd", r.mcd},
                   {"delta_avg", r.delta_avg},
                   {"threshold_acc",
                    {{"4", r.threshold_acc[0]},
                     {"8", r.threshold_acc[1]},
                     {"16", r.threshold_acc[2]},
                     {"32", r.threshold_acc[3]},
                     {"64", r.threshold_acc[4]}}},
                   {"n_points", r.n_points},
                   {"n_sequences", r.n_sequences}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << j.dump(2) << "\n";
}

void append_report_csv(const EvalReport& r, const std::string& label,
                       const std::filesystem::path& path) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  if (fresh)
    out << "label,mee,mcd,delta_avg,acc4,acc8,acc16,acc32,acc64,n_points,n_sequences\n";
  out << label << "," << dataio::format_double(r.mee) << "," << dataio::format_double(r.mcd)
      << "," << dataio::format_double(r.delta_avg);
  for (double a : r.threshold_acc) out << "," << dataio::format_double(a);
  out << "," << r.n_points << "," << r.n_sequences << "\n";
}

void write_accuracy_svg(const EvalReport& r, const std::filesystem::path& path) {
  const int w = 340, h = 220, base = 180, left = 40, bar = 44, gap = 14;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\">\n";
  out << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << base << "\" x2=\"" << w - 10 << "\" y2=\""
      << base << "\" stroke=\"black\"/>\n";
  for (size_t i = 0; i < kThresholds.size(); ++i) {
    const double acc = r.threshold_acc[i];
    const int bh = static_cast<int>(acc / 100.0 * 150.0 + 0.5);
    const int x = left + static_cast<int>(i) * (bar + gap);
    out << "<rect x=\"" << x << "\" y=\"" << base - bh << "\" width=\"" << bar << "\" height=\""
        << bh << "\" fill=\"#4878a8\"/>\n";
    out << "<text x=\"" << x + bar / 2 << "\" y=\"" << base + 16
        << "\" font-size=\"12\" text-anchor=\"middle\">&lt;" << static_cast<int>(kThresholds[i])
        << "px</text>\n";
    out << "<text x=\"" << x + bar / 2 << "\" y=\"" << base - bh - 4
        << "\" font-size=\"11\" text-anchor=\"middle\">" << static_cast<int>(acc + 0.5)
        << "</text>\n";
  }
  out << "<text x=\"" << left << "\" y=\"16\" font-size=\"13\">accuracy by threshold (avg "
      << static_cast<int>(r.delta_avg + 0.5) << ")</text>\n";
  out << "</svg>\n";
}

}  // namespace tracklab::metrics
