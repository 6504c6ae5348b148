// SPDX-License-Identifier: Apache-2.0
//
// Single binary driving the experiment lifecycle:
//   gen -> pretrain -> distill -> eval -> ablate
// plus `track` and `detect` for poking at individual videos.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "tracklab/keypoints.hpp"
#include "tracklab/pipeline.hpp"

#include "CLI11.hpp"

namespace {

using namespace tracklab;
using nlohmann::json;

struct CliState {
  // gen
  pipeline::GenOptions gen;
  // pretrain / distill / ablate / eval shared
  std::string config_path;
  std::string corpus, out, init_ckpt, ckpt;
  std::string teacher = "self";
  std::string alpha, mode = "final", sweep, eval_corpus, tracker;
  uint64_t seed = 0;
  long steps = 0;
  double lr = 0.0, gamma = 0.0;
  int window = 0, ckpt_every = -1;
  // track / detect
  std::string video_dir, queries_file;
  int start = 0, stride = 1, len = 16, frame = 0, max_n = 256;
};

json parse_alpha(const std::string& s) {
  if (s == "off") return json("off");
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return json(v);
  } catch (const std::exception&) {
    throw pipeline::UsageError("--alpha expects a number or 'off', got '" + s + "'");
  }
}

dataio::ExperimentConfig resolve_config(const CliState& st,
                                        const std::map<std::string, json>& overrides) {
  return dataio::load_config(st.config_path.empty() ? std::filesystem::path{}
                                                    : std::filesystem::path(st.config_path),
                             overrides);
}

int cmd_track(const CliState& st) {
  const Video video = dataio::read_video(st.video_dir, std::filesystem::path(st.video_dir).filename().string());
  std::vector<QueryPoint> queries;
  {
    std::ifstream in(st.queries_file);
    if (!in) throw std::runtime_error(st.queries_file + ": cannot open");
    std::string line;
    long ln = 0;
    while (std::getline(in, line)) {
      ++ln;
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty()) continue;
      try {
        const json j = json::parse(line);
        const json& q = j.contains("query") ? j.at("query") : j;
        queries.push_back(
            {q.at("x").get<double>(), q.at("y").get<double>(), q.value("frame", st.start)});
      } catch (const std::exception& e) {
        throw std::runtime_error(st.queries_file + ": line " + std::to_string(ln) + ": " +
                                 e.what());
      }
    }
  }
  for (QueryPoint& q : queries) q.t0 = st.start;

  const TrackWindow window{st.start, st.stride, st.len};
  if (!window.fits(video.frame_count()))
    throw pipeline::UsageError("track: window does not fit the video");

  std::vector<Trajectory> trajs;
  std::string source;
  if (!st.ckpt.empty()) {
    const auto [params, meta] = nt::load_checkpoint(st.ckpt);
    trajs = nt::nt_forward(params, video, window, queries).trajs;
    source = "student";
  } else if (st.tracker == "lk") {
    trajs = lk::lk_track_window(video, window, queries, lk::LkConfig{});
    source = "teacher";
  } else {
    throw pipeline::UsageError("track: pass --ckpt FILE or --tracker lk");
  }

  std::vector<dataio::TrajRecord> records;
  for (const Trajectory& tr : trajs)
    records.push_back({video.id, tr.query, tr.points, tr.visible, source});
  dataio::write_trajs(records, st.out);
  std::cout << "tracked " << records.size() << " queries over " << st.len << " frames -> "
            << st.out << "\n";
  return 0;
}

int cmd_detect(const CliState& st) {
  const Video video = dataio::read_video(st.video_dir, "video");
  if (st.frame < 0 || st.frame >= video.frame_count())
    throw pipeline::UsageError("detect: frame index out of range");
  const auto kps = keypoints::detect(video.frames[static_cast<size_t>(st.frame)], st.max_n);
  std::ofstream out(st.out, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(st.out + ": cannot open for writing");
  for (const keypoints::Keypoint& kp : kps)
    out << json{{"x", kp.x}, {"y", kp.y}, {"score", kp.score}}.dump() << "\n";
  std::cout << "detected " << kps.size() << " keypoints -> " << st.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tracklab: point tracking with cycle-filtered self-distillation"};
  app.require_subcommand(1);
  CliState st;

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  gen->add_option("--domain", st.gen.domain, "source|target")->required();
  gen->add_option("--out", st.gen.out, "output corpus directory")->required();
  gen->add_option("--videos", st.gen.videos, "video count (0 = domain default)");
  gen->add_option("--width", st.gen.width, "frame width");
  gen->add_option("--height", st.gen.height, "frame height");
  gen->add_option("--frames", st.gen.frames, "frames per video");
  CLI::Option* gen_seed = gen->add_option("--seed", st.seed, "corpus seed");
  gen->add_option("--motion", st.gen.motion, "default|translation");
  gen->add_option("--config", st.config_path, "experiment config JSON");

  CLI::App* pre = app.add_subcommand("pretrain", "supervised stage on source ground truth");
  pre->add_option("--corpus", st.corpus, "labeled source corpus")->required();
  pre->add_option("--out", st.out, "output directory")->required();
  pre->add_option("--config", st.config_path, "experiment config JSON");
  CLI::Option* pre_seed = pre->add_option("--seed", st.seed, "run seed");
  CLI::Option* pre_steps = pre->add_option("--steps", st.steps, "optimizer steps");
  CLI::Option* pre_lr = pre->add_option("--lr", st.lr, "base learning rate");

  CLI::App* dis = app.add_subcommand("distill", "adapt a student to unlabeled video");
  dis->add_option("--corpus", st.corpus, "unlabeled target corpus")->required();
  dis->add_option("--init", st.init_ckpt, "initial checkpoint")->required();
  dis->add_option("--out", st.out, "output directory")->required();
  dis->add_option("--teacher", st.teacher, "self|lk|self+lk");
  CLI::Option* dis_alpha = dis->add_option("--alpha", st.alpha, "cycle threshold in px, or off");
  CLI::Option* dis_seed = dis->add_option("--seed", st.seed, "run seed");
  CLI::Option* dis_steps = dis->add_option("--steps", st.steps, "optimizer steps");
  CLI::Option* dis_gamma = dis->add_option("--gamma", st.gamma, "iteration discount");
  CLI::Option* dis_ckpt_every = dis->add_option("--ckpt-every", st.ckpt_every, "checkpoint period");
  dis->add_option("--config", st.config_path, "experiment config JSON");

  CLI::App* ev = app.add_subcommand("eval", "score a tracker against ground truth");
  ev->add_option("--corpus", st.corpus, "labeled corpus")->required();
  ev->add_option("--out", st.out, "output directory")->required();
  ev->add_option("--ckpt", st.ckpt, "neural checkpoint");
  ev->add_option("--tracker", st.tracker, "lk (classical baseline)");
  ev->add_option("--mode", st.mode, "final|all");
  CLI::Option* ev_window = ev->add_option("--window", st.window, "evaluation window length");
  ev->add_option("--config", st.config_path, "experiment config JSON");
  CLI::Option* ev_seed = ev->add_option("--seed", st.seed, "config echo seed");

  CLI::App* ab = app.add_subcommand("ablate", "sweep harness");
  ab->add_option("--sweep", st.sweep, "alpha|teachers")->required();
  ab->add_option("--corpus", st.corpus, "unlabeled train corpus")->required();
  ab->add_option("--eval-corpus", st.eval_corpus, "labeled eval corpus")->required();
  ab->add_option("--init", st.init_ckpt, "initial checkpoint")->required();
  ab->add_option("--out", st.out, "output directory")->required();
  CLI::Option* ab_seed = ab->add_option("--seed", st.seed, "run seed (shared by all cells)");
  CLI::Option* ab_steps = ab->add_option("--steps", st.steps, "optimizer steps per cell");
  ab->add_option("--config", st.config_path, "experiment config JSON");

  CLI::App* tr = app.add_subcommand("track", "track queries over one video");
  tr->add_option("--video", st.video_dir, "video directory of PGM frames")->required();
  tr->add_option("--queries", st.queries_file, "query JSONL ({frame,x,y} per line)")->required();
  tr->add_option("--out", st.out, "output TrajRecord JSONL")->required();
  tr->add_option("--ckpt", st.ckpt, "neural checkpoint");
  tr->add_option("--tracker", st.tracker, "lk (classical baseline)");
  tr->add_option("--start", st.start, "window start frame");
  tr->add_option("--stride", st.stride, "window stride");
  tr->add_option("--len", st.len, "window length");

  CLI::App* de = app.add_subcommand("detect", "corner detection debug dump");
  de->add_option("--video", st.video_dir, "video directory of PGM frames")->required();
  de->add_option("--out", st.out, "output keypoint JSONL")->required();
  de->add_option("--frame", st.frame, "frame index");
  de->add_option("--max", st.max_n, "max keypoints");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    std::map<std::string, json> ov;
    if (gen->parsed()) {
      if (gen_seed->count()) st.gen.seed = st.seed;
      std::map<std::string, json> gov;
      if (gen_seed->count()) gov["seed"] = st.seed;
      pipeline::run_gen(st.gen, resolve_config(st, gov));
      std::cout << "corpus written to " << st.gen.out.string() << "\n";
      return 0;
    }
    if (pre->parsed()) {
      if (pre_seed->count()) ov["seed"] = st.seed;
      if (pre_steps->count()) ov["pretrain_steps"] = st.steps;
      if (pre_lr->count()) ov["pretrain_lr0"] = st.lr;
      pipeline::run_pretrain(resolve_config(st, ov), st.corpus, st.out);
      std::cout << "pretrained checkpoint written to " << st.out << "/ckpt.bin\n";
      return 0;
    }
    if (dis->parsed()) {
      if (dis_seed->count()) ov["seed"] = st.seed;
      if (dis_steps->count()) ov["total_steps"] = st.steps;
      if (dis_alpha->count()) ov["alpha"] = parse_alpha(st.alpha);
      if (dis_gamma->count()) ov["gamma"] = st.gamma;
      if (dis_ckpt_every->count()) ov["ckpt_every"] = st.ckpt_every;
      const auto res = pipeline::run_distill(resolve_config(st, ov), st.corpus, st.init_ckpt,
                                             st.teacher, st.out);
      std::cout << "distilled checkpoint written to " << st.out << "/ckpt.bin ("
                << res.skipped_batches << " skipped batches)\n";
      return 0;
    }
    if (ev->parsed()) {
      if (ev_seed->count()) ov["seed"] = st.seed;
      if (ev_window->count()) ov["eval_window"] = st.window;
      pipeline::EvalOptions eo;
      eo.corpus = st.corpus;
      eo.ckpt = st.ckpt;
      eo.tracker = st.tracker;
      if (st.mode == "final") {
        eo.mode = metrics::EvalMode::kFinalFrame;
      } else if (st.mode == "all") {
        eo.mode = metrics::EvalMode::kAllFrames;
      } else {
        throw pipeline::UsageError("eval: --mode must be final or all");
      }
      eo.label = st.ckpt.empty() ? "lk" : "ckpt";
      const metrics::EvalReport rep = run_eval(resolve_config(st, ov), eo, st.out);
      std::printf("MEE %.4f  MCD %.4f  delta-avg %.2f  (%ld points, %d sequences)\n", rep.mee,
                  rep.mcd, rep.delta_avg, rep.n_points, rep.n_sequences);
      return 0;
    }
    if (ab->parsed()) {
      if (ab_seed->count()) ov["seed"] = st.seed;
      if (ab_steps->count()) ov["total_steps"] = st.steps;
      pipeline::AblateOptions ao;
      ao.sweep = st.sweep;
      ao.train_corpus = st.corpus;
      ao.eval_corpus = st.eval_corpus;
      ao.init_ckpt = st.init_ckpt;
      const int failed = pipeline::run_ablate(resolve_config(st, ov), ao, st.out);
      std::cout << "sweep table written to " << st.out << "/ablation.csv\n";
      return failed == 0 ? 0 : 1;
    }
    if (tr->parsed()) return cmd_track(st);
    if (de->parsed()) return cmd_detect(st);
  } catch (const pipeline::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
