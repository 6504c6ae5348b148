// SPDX-License-Identifier: Apache-2.0

#include "tracklab/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace tracklab::dataio {

namespace {

std::string frame_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%05d.pgm", index);
  return buf;
}

[[noreturn]] void fail(const fs::path& path, const std::string& reason) {
  throw std::runtime_error(path.string() + ": " + reason);
}

// Skips PNM whitespace and '#' comments, then reads one unsigned integer.
int read_pnm_int(std::istream& in, const fs::path& path, const char* what) {
  int c = in.get();
  for (;;) {
    while (c == ' ' || c == '\t' || c == '\r' || c == '\n') c = in.get();
    if (c == '#') {
      while (c != '\n' && c != EOF) c = in.get();
      continue;
    }
    break;
  }
  if (c == EOF || c < '0' || c > '9')
    fail(path, std::string("malformed PGM header: expected ") + what);
  long v = 0;
  while (c >= '0' && c <= '9') {
    v = v * 10 + (c - '0');
    if (v > 1 << 30) fail(path, std::string("malformed PGM header: ") + what + " out of range");
    c = in.get();
  }
  if (c != EOF) in.unget();
  return static_cast<int>(v);
}

}  // namespace

Frame read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '5') fail(path, "malformed PGM header: not a P5 file");
  const int w = read_pnm_int(in, path, "width");
  const int h = read_pnm_int(in, path, "height");
  const int maxval = read_pnm_int(in, path, "maxval");
  if (maxval != 255) fail(path, "unsupported maxval " + std::to_string(maxval));
  const int sep = in.get();
  if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n')
    fail(path, "malformed PGM header: missing separator before raster");
  if (w < 1 || h < 1) fail(path, "malformed PGM header: empty raster");
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) fail(path, "truncated raster");
  Frame f(w, h);
  for (size_t i = 0; i < raw.size(); ++i) f.pixels[i] = raw[i] / 255.0;
  return f;
}

void write_pgm(const Frame& f, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  out << "P5\n" << f.width << " " << f.height << "\n255\n";
  std::vector<unsigned char> raw(f.pixels.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    const double v = f.pixels[i] * 255.0 + 0.5;  // round half-up
    raw[i] = static_cast<unsigned char>(v < 0.0 ? 0.0 : (v > 255.0 ? 255.0 : v));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) fail(path, "write failed");
}

Video read_video(const fs::path& dir, const std::string& id, int expect_frames) {
  int n = expect_frames;
  if (n < 0) {
    n = 0;
    while (fs::exists(dir / frame_name(n))) ++n;
  }
  if (n < 2) fail(dir, "video '" + id + "' has fewer than 2 frames");
  Video v;
  v.id = id;
  v.frames.reserve(static_cast<size_t>(n));
  for (int t = 0; t < n; ++t) {
    const fs::path p = dir / frame_name(t);
    if (!fs::exists(p)) fail(p, "missing frame " + std::to_string(t) + " of video '" + id + "'");
    Frame f = read_pgm(p);
    if (t == 0) {
      v.width = f.width;
      v.height = f.height;
    } else if (f.width != v.width || f.height != v.height) {
      fail(p, "dimension mismatch in video '" + id + "'");
    }
    v.frames.push_back(std::move(f));
  }
  return v;
}

void write_video(const Video& v, const fs::path& dir) {
  fs::create_directories(dir);
  for (int t = 0; t < v.frame_count(); ++t) write_pgm(v.frames[static_cast<size_t>(t)], dir / frame_name(t));
}

// ---------------------------------------------------------------------------

bool TrajRecord::operator==(const TrajRecord& o) const {
  return video_id == o.video_id && query.x == o.query.x && query.y == o.query.y &&
         query.t0 == o.query.t0 && points.size() == o.points.size() &&
         std::equal(points.begin(), points.end(), o.points.begin()) && visible == o.visible &&
         source == o.source;
}

namespace {

json traj_to_json(const TrajRecord& r) {
  json pts = json::array();
  for (const Vec2& p : r.points) pts.push_back(json::array({p.x, p.y}));
  json vis = json::array();
  for (uint8_t b : r.visible) vis.push_back(b != 0);
  return json{{"video_id", r.video_id},
              {"query", {{"frame", r.query.t0}, {"x", r.query.x}, {"y", r.query.y}}},
              {"points", pts},
              {"visible", vis},
              {"source", r.source}};
}

TrajRecord traj_from_json(const json& j) {
  TrajRecord r;
  r.video_id = j.at("video_id").get<std::string>();
  r.query.t0 = j.at("query").at("frame").get<int>();
  r.query.x = j.at("query").at("x").get<double>();
  r.query.y = j.at("query").at("y").get<double>();
  for (const json& p : j.at("points")) r.points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  for (const json& b : j.at("visible")) r.visible.push_back(b.get<bool>() ? 1 : 0);
  r.source = j.at("source").get<std::string>();
  if (r.points.size() != r.visible.size())
    throw std::runtime_error("points/visible length mismatch");
  for (const Vec2& p : r.points)
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw std::runtime_error("non-finite coordinate");
  return r;
}

}  // namespace

std::vector<TrajRecord> read_trajs(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(path, "cannot open");
  std::vector<TrajRecord> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
      line.pop_back();
    if (line.empty()) continue;
    try {
      out.push_back(traj_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      fail(path, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_trajs(const std::vector<TrajRecord>& records, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  for (const TrajRecord& r : records) out << traj_to_json(r).dump() << "\n";
  if (!out) fail(path, "write failed");
}

// ---------------------------------------------------------------------------

void write_manifest(const Manifest& m, const fs::path& root) {
  json vids = json::array();
  for (const ManifestEntry& e : m.videos)
    vids.push_back(
        {{"id", e.id}, {"width", e.width}, {"height", e.height}, {"frames", e.frames}});
  json j{{"domain", m.domain}, {"seed", m.seed}, {"videos", vids}};
  if (!m.generator.is_null()) j["generator"] = m.generator;
  std::ofstream out(root / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) fail(root / "manifest.json", "cannot open for writing");
  out << j.dump(2) << "\n";
}

Manifest read_manifest(const fs::path& root) {
  const fs::path p = root / "manifest.json";
  std::ifstream in(p);
  if (!in) fail(p, "cannot open");
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail(p, std::string("malformed manifest: ") + e.what());
  }
  Manifest m;
  m.domain = j.at("domain").get<std::string>();
  m.seed = j.at("seed").get<uint64_t>();
  for (const json& v : j.at("videos")) {
    ManifestEntry e;
    e.id = v.at("id").get<std::string>();
    e.width = v.at("width").get<int>();
    e.height = v.at("height").get<int>();
    e.frames = v.at("frames").get<int>();
    m.videos.push_back(std::move(e));
  }
  if (j.contains("generator")) m.generator = j["generator"];
  return m;
}

TrainCorpus TrainCorpus::open(const fs::path& root) {
  const Manifest m = read_manifest(root);
  TrainCorpus c;
  c.root_ = root;
  c.domain_ = m.domain;
  c.entries_ = m.videos;
  for (const ManifestEntry& e : c.entries_) {
    const fs::path dir = root / "videos" / e.id;
    for (int t = 0; t < e.frames; ++t)
      if (!fs::exists(dir / frame_name(t)))
        fail(dir / frame_name(t), "manifest entry '" + e.id + "' missing frame");
  }
  return c;
}

Video TrainCorpus::load_video(int i) const {
  const ManifestEntry& e = entries_[static_cast<size_t>(i)];
  Video v = read_video(root_ / "videos" / e.id, e.id, e.frames);
  if (v.width != e.width || v.height != e.height)
    fail(root_ / "videos" / e.id, "video size does not match manifest");
  return v;
}

LabeledCorpus LabeledCorpus::open(const fs::path& root) {
  LabeledCorpus c;
  c.videos_ = TrainCorpus::open(root);
  c.root_ = root;
  for (int i = 0; i < c.videos_.size(); ++i) {
    const fs::path p = root / "gt" / (c.videos_.entry(i).id + ".traj.jsonl");
    if (!fs::exists(p)) fail(p, "corpus is missing ground truth");
  }
  return c;
}

std::vector<TrajRecord> LabeledCorpus::load_gt(int i) const {
  return read_trajs(root_ / "gt" / (videos_.entry(i).id + ".traj.jsonl"));
}

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  auto bad = [](const std::string& msg) { throw std::runtime_error("config: " + msg); };
  if (!alpha_off && !(alpha > 0.0)) bad("alpha must be > 0 or \"off\"");
  if (!(gamma > 0.0 && gamma < 1.0)) bad("gamma must be in (0,1)");
  if (!(huber_delta > 0.0)) bad("huber_delta must be > 0");
  if (!(occluded_weight > 0.0 && occluded_weight <= 1.0)) bad("occluded_weight must be in (0,1]");
  if (window_len < 2) bad("window_len must be >= 2");
  if (stride_min < 1 || stride_max < stride_min) bad("stride range must satisfy 1 <= min <= max");
  if (queries < 1) bad("queries must be >= 1");
  if (min_retained < 1) bad("min_retained must be >= 1");
  if (!(lr0 > 0.0) || !(pretrain_lr0 > 0.0)) bad("learning rates must be > 0");
  if (total_steps < 0 || pretrain_steps < 0) bad("step counts must be >= 0");
  if (eval_window < 2) bad("eval_window must be >= 2");
  if (ckpt_every < 0) bad("ckpt_every must be >= 0");
}

json ExperimentConfig::to_json() const {
  json j;
  j["alpha"] = alpha_off ? json("off") : json(alpha);
  j["gamma"] = gamma;
  j["huber_delta"] = huber_delta;
  j["occluded_weight"] = occluded_weight;
  j["window_len"] = window_len;
  j["stride_min"] = stride_min;
  j["stride_max"] = stride_max;
  j["queries"] = queries;
  j["min_retained"] = min_retained;
  j["lr0"] = lr0;
  j["pretrain_lr0"] = pretrain_lr0;
  j["total_steps"] = total_steps;
  j["pretrain_steps"] = pretrain_steps;
  j["eval_window"] = eval_window;
  j["ckpt_every"] = ckpt_every;
  j["seed"] = seed;
  return j;
}

namespace {

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "alpha",        "gamma",       "huber_delta",    "occluded_weight",
      "window_len",   "stride_min",  "stride_max",     "queries",
      "min_retained", "lr0",         "pretrain_lr0",   "total_steps",
      "pretrain_steps", "eval_window", "ckpt_every",   "seed"};
  return keys;
}

void apply_key(ExperimentConfig& cfg, const std::string& key, const json& v) {
  auto want = [&](bool ok, const char* type) {
    if (!ok)
      throw std::runtime_error("config key '" + key + "' expects " + type + ", got " + v.dump());
  };
  if (key == "alpha") {
    if (v.is_string()) {
      want(v.get<std::string>() == "off", "a number or \"off\"");
      cfg.alpha_off = true;
    } else {
      want(v.is_number(), "a number or \"off\"");
      cfg.alpha = v.get<double>();
      cfg.alpha_off = false;
    }
  } else if (key == "gamma") {
    want(v.is_number(), "a number");
    cfg.gamma = v.get<double>();
  } else if (key == "huber_delta") {
    want(v.is_number(), "a number");
    cfg.huber_delta = v.get<double>();
  } else if (key == "occluded_weight") {
    want(v.is_number(), "a number");
    cfg.occluded_weight = v.get<double>();
  } else if (key == "window_len") {
    want(v.is_number_integer(), "an integer");
    cfg.window_len = v.get<int>();
  } else if (key == "stride_min") {
    want(v.is_number_integer(), "an integer");
    cfg.stride_min = v.get<int>();
  } else if (key == "stride_max") {
    want(v.is_number_integer(), "an integer");
    cfg.stride_max = v.get<int>();
  } else if (key == "queries") {
    want(v.is_number_integer(), "an integer");
    cfg.queries = v.get<int>();
  } else if (key == "min_retained") {
    want(v.is_number_integer(), "an integer");
    cfg.min_retained = v.get<int>();
  } else if (key == "lr0") {
    want(v.is_number(), "a number");
    cfg.lr0 = v.get<double>();
  } else if (key == "pretrain_lr0") {
    want(v.is_number(), "a number");
    cfg.pretrain_lr0 = v.get<double>();
  } else if (key == "total_steps") {
    want(v.is_number_integer(), "an integer");
    cfg.total_steps = v.get<long>();
  } else if (key == "pretrain_steps") {
    want(v.is_number_integer(), "an integer");
    cfg.pretrain_steps = v.get<long>();
  } else if (key == "eval_window") {
    want(v.is_number_integer(), "an integer");
    cfg.eval_window = v.get<int>();
  } else if (key == "ckpt_every") {
    want(v.is_number_integer(), "an integer");
    cfg.ckpt_every = v.get<int>();
  } else if (key == "seed") {
    want(v.is_number_unsigned() || v.is_number_integer(), "an integer");
    cfg.seed = v.get<uint64_t>();
  } else {
    std::string valid;
    for (const std::string& k : config_keys()) valid += (valid.empty() ? "" : ", ") + k;
    throw std::runtime_error("unknown config key '" + key + "' (valid keys: " + valid + ")");
  }
}

}  // namespace

ExperimentConfig load_config(const fs::path& path,
                             const std::map<std::string, json>& cli_overrides) {
  ExperimentConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) fail(path, "cannot open config");
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    const bool blank = text.find_first_not_of(" \t\r\n") == std::string::npos;
    if (!blank) {
      json j;
      try {
        j = json::parse(text);
      } catch (const std::exception& e) {
        fail(path, std::string("malformed config: ") + e.what());
      }
      if (!j.is_object()) fail(path, "config must be a JSON object");
      for (auto it = j.begin(); it != j.end(); ++it) apply_key(cfg, it.key(), it.value());
    }
  }
  for (const auto& [key, value] : cli_overrides) apply_key(cfg, key, value);
  cfg.validate();
  return cfg;
}

void write_config(const ExperimentConfig& cfg, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  out << cfg.to_json().dump(2) << "\n";
}

// ---------------------------------------------------------------------------

std::string format_double(double v) { return json(v).dump(); }

uint64_t file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  uint64_t h = 1469598103934665603ull;
  char buf[4096];
  for (;;) {
    in.read(buf, sizeof(buf));
    const std::streamsize n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (n < static_cast<std::streamsize>(sizeof(buf))) break;
  }
  return h;
}

DirLock::DirLock(const fs::path& dir) {
  fs::create_directories(dir);
  lock_path_ = dir / ".lock";
  std::FILE* f = std::fopen(lock_path_.c_str(), "wx");
  if (!f)
    throw std::runtime_error("output directory " + dir.string() +
                             " is locked by another run (remove " + lock_path_.string() +
                             " if stale)");
  std::fclose(f);
}

DirLock::~DirLock() {
  std::error_code ec;
  fs::remove(lock_path_, ec);
}

}  // namespace tracklab::dataio
