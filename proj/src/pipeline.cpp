// SPDX-License-Identifier: Apache-2.0

#include "tracklab/pipeline.hpp"

#include <algorithm>
#include <fstream>

#include "tracklab/lk_tracker.hpp"

namespace tracklab::pipeline {

namespace {

// Stream ids keep the command RNGs disjoint for a shared seed.
constexpr uint64_t kInitStream = 0x1217;
constexpr uint64_t kPretrainStream = 0xA11A;

bool dir_effectively_empty(const fs::path& dir) {
  if (!fs::exists(dir)) return true;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename() != ".lock") return false;
  return true;
}

nt::LossWeights loss_weights_from(const dataio::ExperimentConfig& cfg) {
  return {cfg.huber_delta, cfg.occluded_weight, cfg.gamma};
}

// Long-horizon inference for the window tracker: slide windows of
// `segment_len` frames, re-anchoring each segment's template at the previous
// segment's final estimates, and stitch the pieces. Matches how the tracker
// is trained (fresh template per window) and how window trackers run on
// sequences longer than their window.
std::vector<Trajectory> nt_track_sliding(const nt::NeuralTrackerParams& params,
                                         const Video& video, int span, int segment_len,
                                         std::vector<QueryPoint> queries) {
  const int n = static_cast<int>(queries.size());
  std::vector<Trajectory> out(static_cast<size_t>(n));
  for (int qi = 0; qi < n; ++qi) {
    out[static_cast<size_t>(qi)].query = queries[static_cast<size_t>(qi)];
    out[static_cast<size_t>(qi)].points.reserve(static_cast<size_t>(span));
    out[static_cast<size_t>(qi)].visible.reserve(static_cast<size_t>(span));
  }
  int start = 0;
  bool first = true;
  while (start < span - 1) {
    const int len = std::min(segment_len, span - start);
    const TrackWindow window{start, 1, len};
    const auto res = nt::nt_forward(params, video, window, queries);
    for (int qi = 0; qi < n; ++qi) {
      const Trajectory& seg = res.trajs[static_cast<size_t>(qi)];
      Trajectory& dst = out[static_cast<size_t>(qi)];
      // the segment's anchor frame repeats the previous segment's last
      // estimate; keep the earlier flags for it
      for (int i = first ? 0 : 1; i < seg.length(); ++i) {
        dst.points.push_back(seg.points[static_cast<size_t>(i)]);
        dst.visible.push_back(seg.visible[static_cast<size_t>(i)]);
      }
      queries[static_cast<size_t>(qi)] = {seg.points.back().x, seg.points.back().y,
                                          start + len - 1};
    }
    start += len - 1;
    first = false;
  }
  return out;
}

}  // namespace

void run_gen(const GenOptions& opt, const dataio::ExperimentConfig& cfg) {
  synthgen::CorpusOptions co;
  if (opt.domain == "source") {
    co.domain = synthgen::Domain::kSource;
  } else if (opt.domain == "target") {
    co.domain = synthgen::Domain::kTarget;
  } else {
    throw UsageError("gen: --domain must be source or target, got '" + opt.domain + "'");
  }
  if (opt.motion == "default") {
    co.preset = synthgen::MotionPreset::kDefault;
  } else if (opt.motion == "translation") {
    co.preset = synthgen::MotionPreset::kTranslation;
  } else {
    throw UsageError("gen: --motion must be default or translation, got '" + opt.motion + "'");
  }
  co.n_videos = opt.videos;
  co.width = opt.width;
  co.height = opt.height;
  co.frames = opt.frames;
  co.seed = opt.seed;

  if (!dir_effectively_empty(opt.out))
    throw std::runtime_error("gen: output directory " + opt.out.string() + " is not empty");
  dataio::DirLock lock(opt.out);
  synthgen::make_domain_corpus(co, opt.out);
  dataio::write_config(cfg, opt.out / "config.json");
}

nt::NeuralTrackerParams run_pretrain(const dataio::ExperimentConfig& cfg, const fs::path& corpus,
                                     const fs::path& out_dir) {
  const dataio::LabeledCorpus data = dataio::LabeledCorpus::open(corpus);
  dataio::DirLock lock(out_dir);
  dataio::write_config(cfg, out_dir / "config.json");

  Rng init_rng(cfg.seed, kInitStream);
  nt::NeuralTrackerParams params = nt::init_params(init_rng);

  nt::AdamConfig adam_cfg;
  adam_cfg.base_lr = cfg.pretrain_lr0;
  adam_cfg.total_steps = cfg.pretrain_steps;
  nt::AdamState adam(adam_cfg);
  const nt::LossWeights weights = loss_weights_from(cfg);

  Rng rng(cfg.seed, kPretrainStream);
  std::ofstream log_out(out_dir / "train_log.csv", std::ios::binary | std::ios::trunc);
  if (!log_out) throw std::runtime_error("pretrain: cannot write train_log.csv");
  log_out << "step,loss,retention_rate,teacher_id,lr\n";

  constexpr long kMaxConsecutiveSkips = 100000;
  long consecutive_skips = 0;

  for (long step = 0; step < cfg.pretrain_steps;) {
    const int vi = rng.uniform_int(data.size());
    const int stride = cfg.stride_min + rng.uniform_int(cfg.stride_max - cfg.stride_min + 1);
    const dataio::ManifestEntry& entry = data.entry(vi);
    const int max_start = entry.frames - 1 - (cfg.window_len - 1) * stride;
    if (max_start < 0) {
      if (++consecutive_skips > kMaxConsecutiveSkips)
        throw std::runtime_error("pretrain: no window fits the corpus videos");
      continue;
    }
    const int start = rng.uniform_int(max_start + 1);

    const std::vector<dataio::TrajRecord> gt = data.load_gt(vi);
    std::vector<int> eligible;
    for (size_t gi = 0; gi < gt.size(); ++gi)
      if (gt[gi].visible[static_cast<size_t>(start)]) eligible.push_back(static_cast<int>(gi));
    if (eligible.empty()) {
      if (++consecutive_skips > kMaxConsecutiveSkips)
        throw std::runtime_error("pretrain: corpus has no visible ground-truth points");
      continue;
    }
    consecutive_skips = 0;

    const int n = std::min<int>(cfg.queries, static_cast<int>(eligible.size()));
    for (int i = 0; i < n; ++i) {
      const int j = i + rng.uniform_int(static_cast<int>(eligible.size()) - i);
      std::swap(eligible[static_cast<size_t>(i)], eligible[static_cast<size_t>(j)]);
    }

    const Video video = data.load_video(vi);
    const TrackWindow window{start, stride, cfg.window_len};
    std::vector<QueryPoint> queries;
    std::vector<Trajectory> labels;
    queries.reserve(static_cast<size_t>(n));
    labels.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const dataio::TrajRecord& r = gt[static_cast<size_t>(eligible[static_cast<size_t>(i)])];
      const Vec2 at_start = r.points[static_cast<size_t>(start)];
      QueryPoint q{at_start.x, at_start.y, start};
      Trajectory label;
      label.query = q;
      label.points.reserve(static_cast<size_t>(cfg.window_len));
      label.visible.reserve(static_cast<size_t>(cfg.window_len));
      for (int k = 0; k < cfg.window_len; ++k) {
        const int f = start + k * stride;
        label.points.push_back(r.points[static_cast<size_t>(f)]);
        label.visible.push_back(r.visible[static_cast<size_t>(f)]);
      }
      queries.push_back(q);
      labels.push_back(std::move(label));
    }

    const std::vector<int> order = window.frames();
    const double lr = nt::cosine_lr(adam_cfg, step);
    nt::NtBackwardResult bw = nt::nt_backward(params, video, order, queries, labels, weights);
    nt::adam_step(adam, params, bw.grad);
    log_out << step << "," << dataio::format_double(bw.loss) << ",1,gt,"
            << dataio::format_double(lr) << "\n";
    if (step % 50 == 0) log_out.flush();
    ++step;
  }

  nt::save_checkpoint(params, {cfg.pretrain_steps, cfg.seed}, out_dir / "ckpt.bin");
  return params;
}

distill::TeacherPool parse_pool(const std::string& name, const nt::NeuralTrackerParams& init) {
  distill::TeacherPool pool;
  if (name == "self") {
    pool.teachers.push_back({"self", init});
  } else if (name == "lk") {
    pool.teachers.push_back({"lk", lk::LkConfig{}});
  } else if (name == "self+lk") {
    pool.teachers.push_back({"self", init});
    pool.teachers.push_back({"lk", lk::LkConfig{}});
  } else {
    throw UsageError("invalid teacher pool '" + name + "' (expected self, lk, or self+lk)");
  }
  return pool;
}

distill::DistillResult run_distill(const dataio::ExperimentConfig& cfg, const fs::path& corpus,
                                   const fs::path& init_ckpt, const std::string& pool_name,
                                   const fs::path& out_dir) {
  const dataio::TrainCorpus data = dataio::TrainCorpus::open(corpus);
  auto [init, meta] = nt::load_checkpoint(init_ckpt);
  const distill::TeacherPool pool = parse_pool(pool_name, init);

  dataio::DirLock lock(out_dir);
  dataio::write_config(cfg, out_dir / "config.json");

  distill::DistillConfig dc;
  dc.alpha = cfg.alpha_off ? std::nullopt : std::optional<double>(cfg.alpha);
  dc.window_len = cfg.window_len;
  dc.stride_min = cfg.stride_min;
  dc.stride_max = cfg.stride_max;
  dc.queries_per_window = cfg.queries;
  dc.min_retained = cfg.min_retained;
  dc.total_steps = cfg.total_steps;
  dc.seed = cfg.seed;
  dc.ckpt_every = cfg.ckpt_every;

  nt::AdamConfig adam_cfg;
  adam_cfg.base_lr = cfg.lr0;
  adam_cfg.total_steps = cfg.total_steps;

  std::ofstream log_out(out_dir / "train_log.csv", std::ios::binary | std::ios::trunc);
  if (!log_out) throw std::runtime_error("distill: cannot write train_log.csv");
  log_out << "step,loss,retention_rate,teacher_id,lr\n";

  distill::DistillRunHooks hooks;
  hooks.on_checkpoint = [&](long step, const nt::NeuralTrackerParams& p) {
    char name[32];
    std::snprintf(name, sizeof(name), "ckpt_%06ld.bin", step);
    nt::save_checkpoint(p, {step, cfg.seed}, out_dir / name);
  };
  hooks.on_log_row = [&](const distill::DistillLogRow& row) {
    log_out << row.step << "," << dataio::format_double(row.loss) << ","
            << dataio::format_double(row.retention_rate) << "," << row.teacher_id << ","
            << dataio::format_double(row.lr) << "\n";
    if (row.step % 50 == 0) log_out.flush();
  };

  distill::DistillResult res =
      distill::distill_run(init, pool, data, dc, loss_weights_from(cfg), adam_cfg, hooks);
  nt::save_checkpoint(res.params, {cfg.total_steps, cfg.seed}, out_dir / "ckpt.bin");
  return res;
}

metrics::EvalReport run_eval(const dataio::ExperimentConfig& cfg, const EvalOptions& opt,
                             const fs::path& out_dir) {
  const dataio::LabeledCorpus data = dataio::LabeledCorpus::open(opt.corpus);

  const bool neural = !opt.ckpt.empty();
  if (!neural && opt.tracker != "lk")
    throw UsageError("eval: pass --ckpt FILE or --tracker lk, got tracker '" + opt.tracker +
                     "'");
  nt::NeuralTrackerParams params;
  if (neural) params = nt::load_checkpoint(opt.ckpt).first;
  const lk::LkConfig lk_cfg;

  dataio::DirLock lock(out_dir);
  dataio::write_config(cfg, out_dir / "config.json");

  std::vector<dataio::TrajRecord> preds;
  std::vector<dataio::TrajRecord> gts;
  for (int vi = 0; vi < data.size(); ++vi) {
    const Video video = data.load_video(vi);
    std::vector<dataio::TrajRecord> gt = data.load_gt(vi);

    const int W = std::min(cfg.eval_window, video.frame_count());
    std::vector<QueryPoint> queries;
    for (const dataio::TrajRecord& r : gt) {
      if (r.query.t0 != 0 || !r.visible[0]) continue;
      queries.push_back(r.query);
    }
    if (queries.empty()) continue;

    std::vector<Trajectory> trajs;
    if (neural) {
      trajs = nt_track_sliding(params, video, W, cfg.window_len, queries);
    } else {
      trajs = lk::lk_track_window(video, {0, 1, W}, queries, lk_cfg);
    }
    for (const Trajectory& tr : trajs) {
      dataio::TrajRecord r;
      r.video_id = video.id;
      r.query = tr.query;
      r.points = tr.points;
      r.visible = tr.visible;
      r.source = neural ? "student" : "teacher";
      preds.push_back(std::move(r));
    }
    for (dataio::TrajRecord& r : gt) gts.push_back(std::move(r));
  }

  dataio::write_trajs(preds, out_dir / "predictions.jsonl");
  const metrics::EvalReport rep = metrics::evaluate(preds, gts, opt.mode);
  metrics::write_report_json(rep, out_dir / "report.json");
  metrics::append_report_csv(rep, opt.label, out_dir / "report.csv");
  metrics::write_accuracy_svg(rep, out_dir / "accuracy.svg");
  return rep;
}

int run_ablate(const dataio::ExperimentConfig& cfg, const AblateOptions& opt,
               const fs::path& out_dir) {
  struct Cell {
    std::string name;
    std::string alpha;    // "off" or a number, alpha sweep only
    std::string teacher;  // pool name
  };
  std::vector<Cell> cells;
  if (opt.sweep == "alpha") {
    cells = {{"off", "off", "self"},
             {"2.5", "2.5", "self"},
             {"5", "5", "self"},
             {"7.5", "7.5", "self"}};
  } else if (opt.sweep == "teachers") {
    cells = {{"self", "", "self"}, {"self+lk", "", "self+lk"}};
  } else {
    throw UsageError("ablate: --sweep must be alpha or teachers, got '" + opt.sweep + "'");
  }

  dataio::DirLock lock(out_dir);
  dataio::write_config(cfg, out_dir / "config.json");

  std::ofstream csv(out_dir / "ablation.csv", std::ios::binary | std::ios::trunc);
  if (!csv) throw std::runtime_error("ablate: cannot write ablation.csv");
  csv << "cell,alpha,teacher,mee,mcd,delta_avg,status\n";

  struct Row {
    std::string name;
    double mee = 0.0;
    bool ok = false;
  };
  std::vector<Row> rows;
  int failed = 0;

  for (const Cell& cell : cells) {
    dataio::ExperimentConfig cell_cfg = cfg;  // identical seeds across cells
    if (!cell.alpha.empty()) {
      if (cell.alpha == "off") {
        cell_cfg.alpha_off = true;
      } else {
        cell_cfg.alpha = std::stod(cell.alpha);
        cell_cfg.alpha_off = false;
      }
    }
    const std::string alpha_str = cell_cfg.alpha_off ? "off" : dataio::format_double(cell_cfg.alpha);
    const fs::path cell_dir = out_dir / ("cell-" + cell.name);
    Row row{cell.name, 0.0, false};
    try {
      run_distill(cell_cfg, opt.train_corpus, opt.init_ckpt, cell.teacher, cell_dir);
      EvalOptions eo;
      eo.corpus = opt.eval_corpus;
      eo.ckpt = cell_dir / "ckpt.bin";
      eo.label = cell.name;
      const metrics::EvalReport rep = run_eval(cell_cfg, eo, cell_dir / "eval");
      csv << cell.name << "," << alpha_str << "," << cell.teacher << ","
          << dataio::format_double(rep.mee) << "," << dataio::format_double(rep.mcd) << ","
          << dataio::format_double(rep.delta_avg) << ",ok\n";
      csv.flush();
      row.mee = rep.mee;
      row.ok = true;
    } catch (const std::exception& e) {
      // Partial table: the cell is flagged and the sweep continues.
      std::string reason = e.what();
      for (char& c : reason)
        if (c == ',' || c == '\n') c = ' ';
      csv << cell.name << "," << alpha_str << "," << cell.teacher << ",,,,failed: " << reason
          << "\n";
      csv.flush();
      ++failed;
    }
    rows.push_back(row);
  }

  // MEE bars per cell.
  double max_mee = 1e-9;
  for (const Row& r : rows)
    if (r.ok) max_mee = std::max(max_mee, r.mee);
  std::ofstream svg(out_dir / "ablation.svg", std::ios::binary | std::ios::trunc);
  const int w = 80 + static_cast<int>(rows.size()) * 70, h = 220, base = 180;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\">\n<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  svg << "<text x=\"10\" y=\"16\" font-size=\"13\">" << opt.sweep << " sweep: MEE</text>\n";
  for (size_t i = 0; i < rows.size(); ++i) {
    const int x = 40 + static_cast<int>(i) * 70;
    if (rows[i].ok) {
      const int bh = static_cast<int>(rows[i].mee / max_mee * 140.0 + 0.5);
      svg << "<rect x=\"" << x << "\" y=\"" << base - bh
          << "\" width=\"48\" height=\"" << bh << "\" fill=\"#a85048\"/>\n";
      svg << "<text x=\"" << x + 24 << "\" y=\"" << base - bh - 4
          << "\" font-size=\"11\" text-anchor=\"middle\">" << static_cast<int>(rows[i].mee * 10 + 0.5) / 10.0
          << "</text>\n";
    } else {
      svg << "<text x=\"" << x + 24 << "\" y=\"" << base - 10
          << "\" font-size=\"11\" text-anchor=\"middle\">failed</text>\n";
    }
    svg << "<text x=\"" << x + 24 << "\" y=\"" << base + 16
        << "\" font-size=\"12\" text-anchor=\"middle\">" << rows[i].name << "</text>\n";
  }
  svg << "</svg>\n";
  return failed;
}

}  // namespace tracklab::pipeline
