// SPDX-License-Identifier: Apache-2.0

#include "tracklab/distill.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "tracklab/keypoints.hpp"

namespace tracklab::distill {

std::vector<Trajectory> Teacher::track(const Video& video, std::span<const int> frame_order,
                                       std::span<const QueryPoint> queries) const {
  if (const auto* params = std::get_if<nt::NeuralTrackerParams>(&model))
    return nt::nt_forward(*params, video, frame_order, queries).trajs;
  return lk::track_frames(video, frame_order, queries, std::get<lk::LkConfig>(model));
}

void TeacherPool::validate() const {
  if (teachers.empty()) throw std::invalid_argument("teacher pool must be non-empty");
  std::set<std::string> ids;
  for (const Teacher& t : teachers)
    if (!ids.insert(t.id).second)
      throw std::invalid_argument("duplicate teacher id '" + t.id + "'");
}

double cycle_error_value(const QueryPoint& query, const Trajectory& backward) {
  return euclid(query.pos(), backward.points.back());
}

std::pair<Trajectory, double> cycle_error(const Teacher& teacher, const Video& video,
                                          const TrackWindow& window, const QueryPoint& q) {
  const std::vector<int> fwd_order = window.frames();
  std::vector<Trajectory> fwd = teacher.track(video, fwd_order, std::span(&q, 1));

  const Vec2 end = fwd[0].points.back();
  const QueryPoint back_q{end.x, end.y, window.last_frame()};
  const std::vector<int> bwd_order = window.reversed_frames();
  const std::vector<Trajectory> bwd = teacher.track(video, bwd_order, std::span(&back_q, 1));

  return {std::move(fwd[0]), cycle_error_value(q, bwd[0])};
}

std::vector<uint8_t> filter_batch(std::span<const double> errors, std::optional<double> alpha) {
  std::vector<uint8_t> retained(errors.size(), 1);
  if (!alpha) return retained;
  for (size_t i = 0; i < errors.size(); ++i) retained[i] = errors[i] < *alpha ? 1 : 0;
  return retained;
}

std::optional<MadeBatch> make_batch(const TeacherPool& pool, const dataio::TrainCorpus& corpus,
                                    const DistillConfig& cfg, Rng& rng) {
  pool.validate();
  if (corpus.size() < 1) throw std::invalid_argument("make_batch: empty corpus");

  const int video_idx = rng.uniform_int(corpus.size());
  const int stride = cfg.stride_min + rng.uniform_int(cfg.stride_max - cfg.stride_min + 1);
  const dataio::ManifestEntry& entry = corpus.entry(video_idx);
  const int max_start = entry.frames - 1 - (cfg.window_len - 1) * stride;
  if (max_start < 0) return std::nullopt;  // window does not fit at this stride
  const int start = rng.uniform_int(max_start + 1);

  Video video = corpus.load_video(video_idx);
  const TrackWindow window{start, stride, cfg.window_len};

  // Query selection with the exclusion rule: windows whose first frame lacks
  // enough corners contribute no supervision.
  const auto sample = keypoints::sample_queries(video.frames[static_cast<size_t>(start)],
                                                cfg.queries_per_window,
                                                cfg.queries_per_window, rng, start);
  if (!sample) return std::nullopt;

  const int teacher_idx = rng.uniform_int(static_cast<int>(pool.teachers.size()));
  const Teacher& teacher = pool.teachers[static_cast<size_t>(teacher_idx)];

  // Batched cycle check: one forward pass for all queries, then one backward
  // pass from all forward endpoints over the reversed window.
  const std::vector<int> fwd_order = window.frames();
  const std::vector<int> bwd_order = window.reversed_frames();
  std::vector<Trajectory> fwd = teacher.track(video, fwd_order, sample->queries);

  std::vector<QueryPoint> back_queries;
  back_queries.reserve(fwd.size());
  for (const Trajectory& tr : fwd)
    back_queries.push_back({tr.points.back().x, tr.points.back().y, window.last_frame()});
  const std::vector<Trajectory> bwd = teacher.track(video, bwd_order, back_queries);

  PseudoLabelBatch batch;
  batch.video_id = entry.id;
  batch.window = window;
  batch.teacher_id = teacher.id;
  batch.queries = sample->queries;
  batch.teacher_trajs = std::move(fwd);
  batch.cycle_errors.reserve(batch.queries.size());
  for (size_t i = 0; i < batch.queries.size(); ++i)
    batch.cycle_errors.push_back(cycle_error_value(batch.queries[i], bwd[i]));
  batch.retained = filter_batch(batch.cycle_errors, cfg.alpha);
  for (uint8_t r : batch.retained) batch.retained_count += r;

  if (batch.retained_count < cfg.min_retained) return std::nullopt;
  return MadeBatch{std::move(batch), std::move(video)};
}

DistillResult distill_run(const nt::NeuralTrackerParams& student_init, const TeacherPool& pool,
                          const dataio::TrainCorpus& corpus, const DistillConfig& cfg,
                          const nt::LossWeights& weights, const nt::AdamConfig& adam_cfg,
                          const DistillRunHooks& hooks) {
  pool.validate();
  for (const Teacher& t : pool.teachers)
    if (t.id == "self" && t.is_neural() &&
        !(std::get<nt::NeuralTrackerParams>(t.model) == student_init))
      throw std::invalid_argument(
          "distill_run: the \"self\" teacher must equal the student initialization");

  DistillResult result;
  result.params = student_init;
  nt::AdamState adam(adam_cfg);
  Rng rng(cfg.seed, /*stream=*/0xD157);

  constexpr long kMaxConsecutiveSkips = 100000;
  long consecutive_skips = 0;

  for (long step = 0; step < cfg.total_steps; ++step) {
    std::optional<MadeBatch> made;
    while (!made) {
      made = make_batch(pool, corpus, cfg, rng);
      if (!made) {
        ++result.skipped_batches;
        if (++consecutive_skips > kMaxConsecutiveSkips)
          throw std::runtime_error(
              "distill_run: no usable batch after " + std::to_string(kMaxConsecutiveSkips) +
              " attempts; corpus has too little structure");
      }
    }
    consecutive_skips = 0;
    const PseudoLabelBatch& batch = made->batch;

    std::vector<QueryPoint> retained_queries;
    std::vector<Trajectory> labels;
    retained_queries.reserve(static_cast<size_t>(batch.retained_count));
    labels.reserve(static_cast<size_t>(batch.retained_count));
    for (size_t i = 0; i < batch.queries.size(); ++i) {
      if (!batch.retained[i]) continue;
      retained_queries.push_back(batch.queries[i]);
      labels.push_back(batch.teacher_trajs[i]);
    }

    const std::vector<int> order = batch.window.frames();
    const double lr = nt::cosine_lr(adam_cfg, step);
    nt::NtBackwardResult bw;
    try {
      bw = nt::nt_backward(result.params, made->video, order, retained_queries, labels, weights);
      adam_step(adam, result.params, bw.grad);
    } catch (const std::exception& e) {
      throw std::runtime_error("distill_run: aborted at step " + std::to_string(step) + ": " +
                               e.what());
    }

    result.log.push_back({step, bw.loss,
                          static_cast<double>(batch.retained_count) /
                              static_cast<double>(batch.queries.size()),
                          batch.teacher_id, lr});
    if (hooks.on_log_row) hooks.on_log_row(result.log.back());
    if (cfg.ckpt_every > 0 && (step + 1) % cfg.ckpt_every == 0 && hooks.on_checkpoint)
      hooks.on_checkpoint(step + 1, result.params);
  }
  return result;
}

void write_distill_log(const std::vector<DistillLogRow>& log,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << "step,loss,retention_rate,teacher_id,lr\n";
  for (const DistillLogRow& row : log)
    out << row.step << "," << dataio::format_double(row.loss) << ","
        << dataio::format_double(row.retention_rate) << "," << row.teacher_id << ","
        << dataio::format_double(row.lr) << "\n";
}

}  // namespace tracklab::distill
