// SPDX-License-Identifier: Apache-2.0
//
// End-to-end runs behind the CLI subcommands: corpus generation, supervised
// pretraining on source ground truth, distillation to the target domain,
// evaluation, and the sweep harness.

#pragma once

#include <filesystem>
#include <string>

#include "tracklab/dataio.hpp"
#include "tracklab/distill.hpp"
#include "tracklab/metrics.hpp"
#include "tracklab/neural_tracker.hpp"
#include "tracklab/synthgen.hpp"

namespace tracklab::pipeline {

namespace fs = std::filesystem;

/// Command-line mistakes (bad flag values, invalid names); mapped to exit
/// code 2 by the CLI, unlike runtime failures which exit 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenOptions {
  std::string domain;  // "source" | "target"
  int videos = 0;      // 0 = domain default
  int width = 128;
  int height = 128;
  int frames = 48;
  uint64_t seed = 1;
  std::string motion = "default";  // "default" | "translation"
  fs::path out;
};

void run_gen(const GenOptions& opt, const dataio::ExperimentConfig& cfg);

/// Supervised stage on source ground truth; writes ckpt.bin, train_log.csv,
/// and config.json under out_dir. Returns the final parameters.
nt::NeuralTrackerParams run_pretrain(const dataio::ExperimentConfig& cfg, const fs::path& corpus,
                                     const fs::path& out_dir);

/// Builds a teacher pool from its name: "self", "lk", or "self+lk".
distill::TeacherPool parse_pool(const std::string& name, const nt::NeuralTrackerParams& init);

/// Distillation stage; writes ckpt.bin, train_log.csv, config.json.
distill::DistillResult run_distill(const dataio::ExperimentConfig& cfg, const fs::path& corpus,
                                   const fs::path& init_ckpt, const std::string& pool_name,
                                   const fs::path& out_dir);

struct EvalOptions {
  fs::path corpus;
  fs::path ckpt;          // empty selects the classical tracker
  std::string tracker;    // "lk" when ckpt is empty
  metrics::EvalMode mode = metrics::EvalMode::kFinalFrame;
  std::string label = "eval";
};

/// Tracks every GT query visible on frame 0 over a stride-1 window of
/// cfg.eval_window frames and scores against ground truth. Writes
/// predictions.jsonl, report.json, report.csv, accuracy.svg, config.json.
metrics::EvalReport run_eval(const dataio::ExperimentConfig& cfg, const EvalOptions& opt,
                             const fs::path& out_dir);

struct AblateOptions {
  std::string sweep;  // "alpha" | "teachers"
  fs::path train_corpus;
  fs::path eval_corpus;
  fs::path init_ckpt;
};

/// Runs one distill + eval per sweep cell with identical seeds, emitting
/// ablation.csv and ablation.svg under out_dir. Returns the number of failed
/// cells (partial tables are flagged in the status column).
int run_ablate(const dataio::ExperimentConfig& cfg, const AblateOptions& opt,
               const fs::path& out_dir);

}  // namespace tracklab::pipeline
