// SPDX-License-Identifier: Apache-2.0
//
// Bit-exact persistence: P5 PGM frames, JSONL trajectory records, corpus
// manifests, and experiment configuration with file/CLI override precedence.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tracklab/core.hpp"

#include "json.hpp"

namespace tracklab::dataio {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// PGM frames and videos

/// Reads a binary 8-bit PGM ("P5", maxval 255). Pixel bytes map to v/255.
Frame read_pgm(const fs::path& path);

/// Writes binary PGM, rounding half-up from [0,1] to 8 bits.
void write_pgm(const Frame& f, const fs::path& path);

/// Reads `dir/frame_%05d.pgm` for indices 0..n-1 (n auto-detected when
/// expect_frames < 0). All frames must share one size.
Video read_video(const fs::path& dir, const std::string& id, int expect_frames = -1);

/// Writes `dir/frame_%05d.pgm`, creating the directory.
void write_video(const Video& v, const fs::path& dir);

// ---------------------------------------------------------------------------
// Trajectory records

struct TrajRecord {
  std::string video_id;
  QueryPoint query;
  std::vector<Vec2> points;
  std::vector<uint8_t> visible;
  std::string source;  // "gt" | "teacher" | "student"

  bool operator==(const TrajRecord& o) const;
};

std::vector<TrajRecord> read_trajs(const fs::path& path);
void write_trajs(const std::vector<TrajRecord>& records, const fs::path& path);

// ---------------------------------------------------------------------------
// Dataset layout
//
//   root/manifest.json
//   root/videos/<id>/frame_%05d.pgm
//   root/gt/<id>.traj.jsonl          (optional)

struct ManifestEntry {
  std::string id;
  int width = 0;
  int height = 0;
  int frames = 0;
};

struct Manifest {
  std::string domain;  // "source" | "target"
  uint64_t seed = 0;
  std::vector<ManifestEntry> videos;
  json generator;  // provenance echo of the generator parameters
};

void write_manifest(const Manifest& m, const fs::path& root);
Manifest read_manifest(const fs::path& root);

/// Unlabeled view of a corpus: video paths only, no ground-truth access.
/// Distillation consumes this type, so it cannot read target labels.
class TrainCorpus {
 public:
  static TrainCorpus open(const fs::path& root);

  int size() const { return static_cast<int>(entries_.size()); }
  const ManifestEntry& entry(int i) const { return entries_[static_cast<size_t>(i)]; }
  Video load_video(int i) const;
  const std::string& domain() const { return domain_; }

 private:
  fs::path root_;
  std::string domain_;
  std::vector<ManifestEntry> entries_;
};

/// Labeled view: TrainCorpus plus per-video ground-truth trajectories.
class LabeledCorpus {
 public:
  static LabeledCorpus open(const fs::path& root);

  int size() const { return videos_.size(); }
  const ManifestEntry& entry(int i) const { return videos_.entry(i); }
  Video load_video(int i) const { return videos_.load_video(i); }
  std::vector<TrajRecord> load_gt(int i) const;
  const std::string& domain() const { return videos_.domain(); }

 private:
  TrainCorpus videos_;
  fs::path root_;
};

// ---------------------------------------------------------------------------
// Experiment configuration

struct ExperimentConfig {
  double alpha = 5.0;        // cycle filter threshold, px
  bool alpha_off = false;    // true disables filtering
  double gamma = 0.8;        // iteration discount
  double huber_delta = 6.0;  // px
  double occluded_weight = 0.2;
  int window_len = 16;
  int stride_min = 1;
  int stride_max = 4;
  int queries = 64;
  int min_retained = 8;
  double lr0 = 5e-5;          // distillation base learning rate
  double pretrain_lr0 = 1e-3; // supervised stage base learning rate
  long total_steps = 20000;
  long pretrain_steps = 5000;
  int eval_window = 48;  // capped to each video's length
  int ckpt_every = 5000;
  uint64_t seed = 1;

  void validate() const;  // throws on out-of-range values
  json to_json() const;
};

/// Defaults, overridden by the JSON file at `path` (if non-empty), then by
/// `cli_overrides`, in that precedence. Unknown keys and type mismatches are
/// errors that list the valid keys.
ExperimentConfig load_config(const fs::path& path,
                             const std::map<std::string, json>& cli_overrides);

/// Writes the fully resolved config next to a run's outputs.
void write_config(const ExperimentConfig& cfg, const fs::path& path);

// ---------------------------------------------------------------------------
// Small shared helpers

/// Shortest round-trip decimal form of a double (nlohmann's dtoa).
std::string format_double(double v);

/// FNV-1a over the raw bytes of a file; used for determinism checks.
uint64_t file_hash(const fs::path& path);

/// RAII exclusive ownership of an output directory via `dir/.lock`.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path lock_path_;
};

}  // namespace tracklab::dataio
