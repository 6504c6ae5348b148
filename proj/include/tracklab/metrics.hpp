// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics: mean endpoint error, symmetric Chamfer distance, and
// threshold accuracy averaged over {4, 8, 16, 32, 64} px (strict <).

#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tracklab/core.hpp"
#include "tracklab/dataio.hpp"

namespace tracklab::metrics {

inline constexpr std::array<double, 5> kThresholds{4.0, 8.0, 16.0, 32.0, 64.0};

/// Mean Euclidean error over aligned point pairs. Throws on empty input.
double mee(std::span<const Vec2> pred, std::span<const Vec2> gt);

/// Symmetric Chamfer distance: half the sum of both directed mean
/// nearest-neighbor distances. Throws if either set is empty.
double mcd(std::span<const Vec2> a, std::span<const Vec2> b);

struct DeltaBreakdown {
  std::array<double, 5> per_threshold{};  // percent within each threshold
  double average = 0.0;
};

/// Percent of aligned pairs with error strictly below each threshold.
DeltaBreakdown delta_avg(std::span<const Vec2> pred, std::span<const Vec2> gt);

struct EvalReport {
  double mee = 0.0;
  double mcd = 0.0;
  double delta_avg = 0.0;
  std::array<double, 5> threshold_acc{};
  long n_points = 0;
  int n_sequences = 0;
};

enum class EvalMode { kFinalFrame, kAllFrames };

/// Compares predicted trajectories against ground truth matched by
/// (video id, query). Final-frame mode scores the last predicted position of
/// each trajectory; all-frames mode pools every GT-visible refined frame.
/// Points whose ground truth is occluded at the scored frame are skipped.
/// MEE and delta pool points across sequences; Chamfer is computed per
/// sequence (per frame in all-frames mode) and pooled weighted by point
/// count. Throws when identities mismatch, listing unmatched queries.
EvalReport evaluate(std::span<const dataio::TrajRecord> pred,
                    std::span<const dataio::TrajRecord> gt, EvalMode mode);

void write_report_json(const EvalReport& r, const std::filesystem::path& path);

/// Appends "label,mee,mcd,delta_avg,acc4,...,acc64,n_points,n_sequences".
/// Writes the header first when the file does not exist yet.
void append_report_csv(const EvalReport& r, const std::string& label,
                       const std::filesystem::path& path);

/// Bar chart of the per-threshold accuracies, emitted as standalone SVG.
void write_accuracy_svg(const EvalReport& r, const std::filesystem::path& path);

}  // namespace tracklab::metrics
