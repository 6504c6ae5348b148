// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <cmath>
#include <fstream>

#include "tracklab/dataio.hpp"

using namespace tracklab;
using dataio::TrajRecord;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("tracklab_dataio_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

TrajRecord random_record(Rng& rng, int len) {
  TrajRecord r;
  r.video_id = "vid-" + std::to_string(rng.uniform_int(100));
  r.query = {rng.uniform(0.0, 127.0), rng.uniform(0.0, 127.0), rng.uniform_int(10)};
  for (int i = 0; i < len; ++i) {
    r.points.emplace_back(rng.uniform(-10.0, 140.0), rng.uniform(-10.0, 140.0));
    r.visible.push_back(rng.uniform() < 0.8 ? 1 : 0);
  }
  r.source = rng.uniform() < 0.5 ? "teacher" : "gt";
  return r;
}

}  // namespace

TEST_CASE("pgm round trip is exact after 8-bit quantization") {
  TempDir tmp;
  Rng rng(5);
  Frame f(33, 17);
  for (double& v : f.pixels) v = rng.uniform();
  const fs::path p = tmp.path / "f.pgm";
  dataio::write_pgm(f, p);
  const Frame g = dataio::read_pgm(p);
  REQUIRE(g.width == 33);
  REQUIRE(g.height == 17);
  for (size_t i = 0; i < f.pixels.size(); ++i) {
    const double quantized = std::floor(f.pixels[i] * 255.0 + 0.5) / 255.0;
    CHECK(g.pixels[i] == doctest::Approx(quantized).epsilon(1e-12));
  }
  // second write of the read-back image is byte-identical (fixed point)
  const fs::path p2 = tmp.path / "f2.pgm";
  dataio::write_pgm(g, p2);
  CHECK(dataio::file_hash(p) == dataio::file_hash(p2));
}

TEST_CASE("pgm quantization rounds half up") {
  TempDir tmp;
  Frame f(16, 1);
  f.pixels.assign(16, 0.0);
  f.pixels[0] = 1.0;  // -> 255
  f.pixels[1] = 0.5;  // 127.5 -> 128
  const fs::path p = tmp.path / "q.pgm";
  dataio::write_pgm(f, p);
  std::ifstream in(p, std::ios::binary);
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string header = "P5\n16 1\n255\n";
  REQUIRE(all.size() == header.size() + 16);
  CHECK(static_cast<unsigned char>(all[header.size() + 0]) == 255);
  CHECK(static_cast<unsigned char>(all[header.size() + 1]) == 128);
  CHECK(static_cast<unsigned char>(all[header.size() + 2]) == 0);
}

TEST_CASE("pgm reader rejects unsupported maxval") {
  TempDir tmp;
  const fs::path p = tmp.path / "bad.pgm";
  std::ofstream out(p, std::ios::binary);
  out << "P5\n4 4\n65535\n";
  for (int i = 0; i < 32; ++i) out.put('\0');
  out.close();
  CHECK_THROWS_WITH_AS(dataio::read_pgm(p), doctest::Contains("unsupported maxval"),
                       std::runtime_error);
}

TEST_CASE("pgm reader names malformed headers") {
  TempDir tmp;
  const fs::path p = tmp.path / "notpgm.pgm";
  std::ofstream(p) << "P2\n4 4\n255\n0 0 0\n";
  CHECK_THROWS_WITH_AS(dataio::read_pgm(p), doctest::Contains("P5"), std::runtime_error);
}

TEST_CASE("video io round trip and errors") {
  TempDir tmp;
  Video v;
  v.id = "clip";
  v.width = 16;
  v.height = 16;
  v.frames.assign(2, Frame(16, 16, 0.0));
  dataio::write_video(v, tmp.path / "clip");
  const Video r = dataio::read_video(tmp.path / "clip", "clip");
  CHECK(r.frame_count() == 2);
  CHECK(r.width == 16);
  for (const Frame& f : r.frames)
    for (double px : f.pixels) CHECK(px == 0.0);

  fs::remove(tmp.path / "clip" / "frame_00001.pgm");
  CHECK_THROWS_WITH_AS(dataio::read_video(tmp.path / "clip", "clip", 2),
                       doctest::Contains("missing frame"), std::runtime_error);
}

TEST_CASE("traj jsonl: empty file, single record, crlf") {
  TempDir tmp;
  const fs::path p = tmp.path / "t.jsonl";
  std::ofstream(p).close();
  CHECK(dataio::read_trajs(p).empty());

  Rng rng(9);
  const TrajRecord r = random_record(rng, 5);
  dataio::write_trajs({r}, p);
  const auto back = dataio::read_trajs(p);
  REQUIRE(back.size() == 1);
  CHECK(back[0] == r);

  // CR-LF line endings are tolerated by trimming
  {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    std::ofstream out(tmp.path / "crlf.jsonl", std::ios::binary);
    out << line << "\r\n";
  }
  const auto crlf = dataio::read_trajs(tmp.path / "crlf.jsonl");
  REQUIRE(crlf.size() == 1);
  CHECK(crlf[0] == r);
}

TEST_CASE("traj jsonl: 1000 random records round trip exactly") {
  TempDir tmp;
  Rng rng(31);
  std::vector<TrajRecord> records;
  for (int i = 0; i < 1000; ++i) records.push_back(random_record(rng, 1 + rng.uniform_int(20)));
  const fs::path p = tmp.path / "big.jsonl";
  dataio::write_trajs(records, p);
  const auto back = dataio::read_trajs(p);
  REQUIRE(back.size() == records.size());
  for (size_t i = 0; i < records.size(); ++i) CHECK(back[i] == records[i]);
}

TEST_CASE("traj jsonl: malformed line reports its number") {
  TempDir tmp;
  const fs::path p = tmp.path / "bad.jsonl";
  std::ofstream out(p);
  out << "{\"video_id\":\"v\",\"query\":{\"frame\":0,\"x\":1.0,\"y\":2.0},"
         "\"points\":[[1.0,2.0]],\"visible\":[true],\"source\":\"gt\"}\n";
  out << "{ not json\n";
  out.close();
  CHECK_THROWS_WITH_AS(dataio::read_trajs(p), doctest::Contains("line 2"), std::runtime_error);
}

TEST_CASE("config defaults match the experiment protocol") {
  const auto cfg = dataio::load_config({}, {});
  CHECK(cfg.alpha == 5.0);
  CHECK_FALSE(cfg.alpha_off);
  CHECK(cfg.window_len == 16);
  CHECK(cfg.queries == 64);
  CHECK(cfg.stride_min == 1);
  CHECK(cfg.stride_max == 4);
  CHECK(cfg.lr0 == 5e-5);
  CHECK(cfg.huber_delta == 6.0);
  CHECK(cfg.occluded_weight == 0.2);
}

TEST_CASE("config: empty file keeps defaults") {
  TempDir tmp;
  const fs::path p = tmp.path / "cfg.json";
  std::ofstream(p) << "  \n";
  const auto cfg = dataio::load_config(p, {});
  CHECK(cfg.alpha == 5.0);
  CHECK(cfg.window_len == 16);
  CHECK(cfg.queries == 64);
  CHECK(cfg.stride_max == 4);
  CHECK(cfg.lr0 == 5e-5);
}

TEST_CASE("config precedence: cli overrides beat the file") {
  TempDir tmp;
  const fs::path p = tmp.path / "cfg.json";
  std::ofstream(p) << "{\"alpha\": 2.5}\n";
  CHECK(dataio::load_config(p, {}).alpha == 2.5);
  const auto cfg = dataio::load_config(p, {{"alpha", nlohmann::json(7.5)}});
  CHECK(cfg.alpha == 7.5);
}

TEST_CASE("config rejects unknown keys listing valid ones") {
  TempDir tmp;
  const fs::path p = tmp.path / "cfg.json";
  std::ofstream(p) << "{\"alhpa\": 5.0}\n";
  try {
    dataio::load_config(p, {});
    FAIL("expected an unknown-key error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("alhpa") != std::string::npos);
    CHECK(msg.find("alpha") != std::string::npos);
    CHECK(msg.find("window_len") != std::string::npos);
  }
}

TEST_CASE("config rejects type mismatches and bad ranges") {
  TempDir tmp;
  std::ofstream(tmp.path / "cfg.json") << "{\"window_len\": \"sixteen\"}\n";
  CHECK_THROWS(dataio::load_config(tmp.path / "cfg.json", {}));
  std::ofstream(tmp.path / "cfg2.json") << "{\"gamma\": 1.5}\n";
  CHECK_THROWS(dataio::load_config(tmp.path / "cfg2.json", {}));
  CHECK(dataio::load_config({}, {{"alpha", nlohmann::json("off")}}).alpha_off);
}

TEST_CASE("config serialization echoes every key") {
  const auto cfg = dataio::load_config({}, {});
  const auto j = cfg.to_json();
  CHECK(j.at("alpha").get<double>() == 5.0);
  CHECK(j.at("total_steps").get<long>() == 20000);
  CHECK(j.at("pretrain_steps").get<long>() == 5000);
  CHECK(j.at("seed").get<uint64_t>() == 1);
}

TEST_CASE("train corpus works without ground truth, labeled corpus requires it") {
  TempDir tmp;
  Video v;
  v.id = "a";
  v.width = 16;
  v.height = 16;
  v.frames.assign(3, Frame(16, 16, 0.25));
  dataio::write_video(v, tmp.path / "videos" / "a");
  dataio::Manifest m;
  m.domain = "target";
  m.seed = 1;
  m.videos = {{"a", 16, 16, 3}};
  dataio::write_manifest(m, tmp.path);
  const auto corpus = dataio::TrainCorpus::open(tmp.path);
  CHECK(corpus.size() == 1);
  CHECK(corpus.domain() == "target");
  CHECK(corpus.load_video(0).frame_count() == 3);
  CHECK_THROWS(dataio::LabeledCorpus::open(tmp.path));  // gt/ is missing
}

TEST_CASE("dir lock is exclusive and released") {
  TempDir tmp;
  const fs::path d = tmp.path / "out";
  {
    dataio::DirLock lock(d);
    CHECK_THROWS([&] { dataio::DirLock second(d); }());
  }
  CHECK_NOTHROW([&] { dataio::DirLock relock(d); }());
}
