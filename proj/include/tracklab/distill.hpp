// SPDX-License-Identifier: Apache-2.0
//
// Filtered self-distillation: a frozen teacher generates trajectories on
// unlabeled video, a forward-backward cycle check scores each one, and only
// trajectories whose cycle error beats the threshold supervise the student.

#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tracklab/core.hpp"
#include "tracklab/dataio.hpp"
#include "tracklab/lk_tracker.hpp"
#include "tracklab/neural_tracker.hpp"

namespace tracklab::distill {

/// A frozen tracker used for pseudo-label generation: either a copy of
/// neural parameters (never updated) or the classical tracker.
struct Teacher {
  std::string id;
  std::variant<nt::NeuralTrackerParams, lk::LkConfig> model;

  bool is_neural() const { return std::holds_alternative<nt::NeuralTrackerParams>(model); }

  /// Forward tracking along an explicit frame order.
  std::vector<Trajectory> track(const Video& video, std::span<const int> frame_order,
                                std::span<const QueryPoint> queries) const;
};

struct TeacherPool {
  std::vector<Teacher> teachers;

  void validate() const;  // non-empty, unique ids
};

struct DistillConfig {
  std::optional<double> alpha = 5.0;  // nullopt disables filtering ("off")
  int window_len = 16;
  int stride_min = 1;
  int stride_max = 4;
  int queries_per_window = 64;
  int min_retained = 8;
  long total_steps = 20000;
  uint64_t seed = 1;
  int ckpt_every = 0;  // 0 disables periodic checkpoints
};

/// The Eq.-style cycle error: distance from the original query to the
/// endpoint of the backward track.
double cycle_error_value(const QueryPoint& query, const Trajectory& backward);

/// Tracks q forward over the window, re-tracks the forward endpoint over the
/// reversed window, and returns (forward trajectory, cycle error).
std::pair<Trajectory, double> cycle_error(const Teacher& teacher, const Video& video,
                                          const TrackWindow& window, const QueryPoint& q);

/// Strict less-than filter; std::nullopt alpha retains everything.
std::vector<uint8_t> filter_batch(std::span<const double> errors, std::optional<double> alpha);

struct PseudoLabelBatch {
  std::string video_id;
  TrackWindow window;
  std::string teacher_id;
  std::vector<QueryPoint> queries;
  std::vector<Trajectory> teacher_trajs;  // forward tracks, teacher visibility
  std::vector<double> cycle_errors;
  std::vector<uint8_t> retained;
  int retained_count = 0;
};

/// Batch plus the already-loaded video it was sampled from.
struct MadeBatch {
  PseudoLabelBatch batch;
  Video video;
};

/// One sampling attempt: video, stride, window start, corner queries,
/// teacher, cycle errors, filter. Returns std::nullopt (Skipped) when the
/// window does not fit, the frame fails keypoint exclusion, or fewer than
/// min_retained trajectories survive the filter.
std::optional<MadeBatch> make_batch(const TeacherPool& pool, const dataio::TrainCorpus& corpus,
                                    const DistillConfig& cfg, Rng& rng);

struct DistillLogRow {
  long step = 0;
  double loss = 0.0;
  double retention_rate = 0.0;
  std::string teacher_id;
  double lr = 0.0;
};

struct DistillResult {
  nt::NeuralTrackerParams params;
  std::vector<DistillLogRow> log;
  long skipped_batches = 0;
};

struct DistillRunHooks {
  /// Called after each optimizer step (for periodic checkpoints).
  std::function<void(long step, const nt::NeuralTrackerParams&)> on_checkpoint;
  /// Called after each optimizer step with the log row (for streaming logs).
  std::function<void(const DistillLogRow&)> on_log_row;
};

/// The student fine-tuning loop. Skipped batches do not consume steps.
/// Teacher parameters are bit-frozen for the whole run; a neural teacher
/// with id "self" must start equal to student_init.
DistillResult distill_run(const nt::NeuralTrackerParams& student_init, const TeacherPool& pool,
                          const dataio::TrainCorpus& corpus, const DistillConfig& cfg,
                          const nt::LossWeights& weights, const nt::AdamConfig& adam_cfg,
                          const DistillRunHooks& hooks = {});

void write_distill_log(const std::vector<DistillLogRow>& log, const std::filesystem::path& path);

}  // namespace tracklab::distill
