// SPDX-License-Identifier: Apache-2.0

#include "tracklab/neural_tracker.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "tracklab/dataio.hpp"

#include "json.hpp"

namespace tracklab::nt {

namespace {

using Params = NeuralTrackerParams;

constexpr int P = Params::kPatch;    // 7
constexpr int R = Params::kRadius;   // 4
constexpr int K = Params::kIters;    // 4
constexpr int H = Params::kHidden;   // 32
constexpr int C = Params::kCorr;     // 81
constexpr int IN = Params::kInput;   // 84
constexpr int F = Params::kFeat;     // 147
constexpr int SIDE = 2 * R + 1;      // 9 correlation offsets per axis
constexpr int HALF = R + P / 2;      // 7
constexpr int LAT = 2 * HALF + 1;    // 15 shared sample lattice per axis
constexpr int LAT2 = LAT * LAT;
constexpr int PATCH2 = P * P;        // 49
constexpr double kEpsNorm = 1e-6;    // inside both correlation norms

// Intensity plus Sobel gradient planes for one frame.
struct FrameChans {
  const Frame* img = nullptr;
  Frame gx, gy;
  const Frame& plane(int ch) const { return ch == 0 ? *img : (ch == 1 ? gx : gy); }
};

std::vector<FrameChans> build_channels(const Video& video, std::span<const int> frame_order) {
  std::vector<FrameChans> chans(frame_order.size());
  parallel_for(static_cast<int>(frame_order.size()), [&](int i) {
    const Frame& f = video.frames[static_cast<size_t>(frame_order[static_cast<size_t>(i)])];
    chans[static_cast<size_t>(i)].img = &f;
    sobel_gradients(f, chans[static_cast<size_t>(i)].gx, chans[static_cast<size_t>(i)].gy);
  });
  return chans;
}

struct TemplateFeat {
  double a[F];        // per-channel centered template features
  double norm = 0.0;  // sqrt(|a|^2 + eps)
};

TemplateFeat build_template(const FrameChans& ch0, const Vec2& q) {
  TemplateFeat t;
  for (int ch = 0; ch < 3; ++ch) {
    const Frame& plane = ch0.plane(ch);
    double mean = 0.0;
    double* block = t.a + ch * PATCH2;
    int i = 0;
    for (int gy = -P / 2; gy <= P / 2; ++gy)
      for (int gx = -P / 2; gx <= P / 2; ++gx, ++i) {
        block[i] = bilinear_sample(plane, q.x + gx, q.y + gy);
        mean += block[i];
      }
    mean /= PATCH2;
    for (i = 0; i < PATCH2; ++i) block[i] -= mean;
  }
  double sq = 0.0;
  for (double v : t.a) sq += v * v;
  t.norm = std::sqrt(sq + kEpsNorm);
  return t;
}

// Clamped-bilinear cell lookup per lattice axis; dm masks the derivative to
// zero where the coordinate clamps.
struct AxisLUT {
  int i0[LAT];
  double f[LAT];
  double dm[LAT];
};

void build_axis(double center, int n, AxisLUT& lut) {
  for (int i = 0; i < LAT; ++i) {
    const double v = center + (i - HALF);
    if (v < 0.0) {
      lut.i0[i] = 0;
      lut.f[i] = 0.0;
      lut.dm[i] = 0.0;
    } else if (v > n - 1.0) {
      lut.i0[i] = n - 2;
      lut.f[i] = 1.0;
      lut.dm[i] = 0.0;
    } else {
      int i0 = static_cast<int>(v);
      if (i0 > n - 2) i0 = n - 2;
      lut.i0[i] = i0;
      lut.f[i] = v - i0;
      lut.dm[i] = 1.0;
    }
  }
}

// Samples the 15x15x3 lattice around `p`; when dlx/dly are non-null also
// emits the spatial derivative of every sample.
void sample_lattice(const FrameChans& ch, const Vec2& p, double* lat, double* dlx, double* dly) {
  AxisLUT ax, ay;
  build_axis(p.x, ch.img->width, ax);
  build_axis(p.y, ch.img->height, ay);
  const int w = ch.img->width;
  for (int c = 0; c < 3; ++c) {
    const Frame& plane = ch.plane(c);
    double* out = lat + c * LAT2;
    double* ox = dlx ? dlx + c * LAT2 : nullptr;
    double* oy = dly ? dly + c * LAT2 : nullptr;
    for (int row = 0; row < LAT; ++row) {
      const double* r0 = plane.pixels.data() + static_cast<size_t>(ay.i0[row]) * w;
      const double* r1 = r0 + w;
      const double fy = ay.f[row];
      for (int col = 0; col < LAT; ++col) {
        const int x0 = ax.i0[col];
        const double fx = ax.f[col];
        const double v00 = r0[x0], v10 = r0[x0 + 1];
        const double v01 = r1[x0], v11 = r1[x0 + 1];
        const double top = v00 + fx * (v10 - v00);
        const double bot = v01 + fx * (v11 - v01);
        out[row * LAT + col] = top + fy * (bot - top);
        if (ox) {
          ox[row * LAT + col] = ax.dm[col] * ((1.0 - fy) * (v10 - v00) + fy * (v11 - v01));
          oy[row * LAT + col] = ay.dm[row] * ((1.0 - fx) * (v01 - v00) + fx * (v11 - v10));
        }
      }
    }
  }
}

// Correlation internals cached for the backward pass.
struct CorrStats {
  double s[C];         // <template, patch>
  double n2[C];        // |centered patch|^2 + eps
  double mu[3 * C];    // per-channel patch means
};

// 81 normalized correlations between the template and the 7x7 windows of the
// lattice. Patch centering per channel; template is already centered, so the
// numerator needs no mean subtraction.
void corr_forward(const TemplateFeat& tmpl, const double* lat, double* c_out, CorrStats* stats) {
  double s[C];
  for (double& v : s) v = 0.0;
  for (int ch = 0; ch < 3; ++ch) {
    const double* base = lat + ch * LAT2;
    const double* ta = tmpl.a + ch * PATCH2;
    for (int gy = 0; gy < P; ++gy)
      for (int gx = 0; gx < P; ++gx) {
        const double a = ta[gy * P + gx];
        for (int dv = 0; dv < SIDE; ++dv) {
          const double* row = base + (dv + gy) * LAT + gx;
          double* srow = s + dv * SIDE;
          for (int du = 0; du < SIDE; ++du) srow[du] += a * row[du];
        }
      }
  }

  // Prefix sums give each window's sum and sum of squares per channel.
  double ps[3][(LAT + 1) * (LAT + 1)];
  double pq[3][(LAT + 1) * (LAT + 1)];
  for (int ch = 0; ch < 3; ++ch) {
    const double* base = lat + ch * LAT2;
    double* s1 = ps[ch];
    double* s2 = pq[ch];
    for (int i = 0; i <= LAT; ++i) s1[i] = s2[i] = 0.0;
    for (int row = 0; row < LAT; ++row) {
      s1[(row + 1) * (LAT + 1)] = 0.0;
      s2[(row + 1) * (LAT + 1)] = 0.0;
      double acc1 = 0.0, acc2 = 0.0;
      for (int col = 0; col < LAT; ++col) {
        const double v = base[row * LAT + col];
        acc1 += v;
        acc2 += v * v;
        s1[(row + 1) * (LAT + 1) + col + 1] = s1[row * (LAT + 1) + col + 1] + acc1;
        s2[(row + 1) * (LAT + 1) + col + 1] = s2[row * (LAT + 1) + col + 1] + acc2;
      }
    }
  }
  auto rect = [](const double* pre, int r0, int c0) {
    return pre[(r0 + P) * (LAT + 1) + c0 + P] - pre[r0 * (LAT + 1) + c0 + P] -
           pre[(r0 + P) * (LAT + 1) + c0] + pre[r0 * (LAT + 1) + c0];
  };

  for (int dv = 0; dv < SIDE; ++dv)
    for (int du = 0; du < SIDE; ++du) {
      const int j = dv * SIDE + du;
      double n2 = kEpsNorm;
      for (int ch = 0; ch < 3; ++ch) {
        const double sum = rect(ps[ch], dv, du);
        const double sq = rect(pq[ch], dv, du);
        n2 += sq - sum * sum / PATCH2;
        if (stats) stats->mu[ch * C + j] = sum / PATCH2;
      }
      const double denom = tmpl.norm * std::sqrt(n2);
      c_out[j] = s[j] / denom;
      if (stats) {
        stats->s[j] = s[j];
        stats->n2[j] = n2;
      }
    }
}

// Accumulates d loss / d position for correlation-input gradients g_c at the
// iteration's base position. Recomputes the lattice with sample derivatives.
Vec2 corr_backward(const TemplateFeat& tmpl, const FrameChans& ch, const Vec2& p,
                   const double* g_c) {
  double lat[3 * LAT2], dlx[3 * LAT2], dly[3 * LAT2];
  sample_lattice(ch, p, lat, dlx, dly);
  double c_unused[C];
  CorrStats st;
  corr_forward(tmpl, lat, c_unused, &st);

  double wlat[3 * LAT2];
  for (double& v : wlat) v = 0.0;
  for (int dv = 0; dv < SIDE; ++dv)
    for (int du = 0; du < SIDE; ++du) {
      const int j = dv * SIDE + du;
      const double gin = g_c[j];
      if (gin == 0.0) continue;
      const double n = std::sqrt(st.n2[j]);
      const double inv_an = 1.0 / (tmpl.norm * n);
      const double alpha = gin * inv_an;
      const double beta = gin * st.s[j] * inv_an / st.n2[j];
      for (int c = 0; c < 3; ++c) {
        const double mu = st.mu[c * C + j];
        const double* ta = tmpl.a + c * PATCH2;
        double* wbase = wlat + c * LAT2;
        const double* lbase = lat + c * LAT2;
        for (int gy = 0; gy < P; ++gy) {
          const int lrow = (dv + gy) * LAT + du;
          const double* trow = ta + gy * P;
          for (int gx = 0; gx < P; ++gx)
            wbase[lrow + gx] += alpha * trow[gx] - beta * (lbase[lrow + gx] - mu);
        }
      }
    }

  Vec2 g{0.0, 0.0};
  for (int i = 0; i < 3 * LAT2; ++i) {
    g.x += wlat[i] * dlx[i];
    g.y += wlat[i] * dly[i];
  }
  return g;
}

struct MlpOut {
  double h[H];
  double u[2];
};

void mlp_forward(const Params& params, const double* x, MlpOut& out) {
  const double* w1 = params.w.data() + Params::w1_off();
  const double* b1 = params.w.data() + Params::b1_off();
  const double* w2 = params.w.data() + Params::w2_off();
  const double* b2 = params.w.data() + Params::b2_off();
  for (int j = 0; j < H; ++j) {
    const double* row = w1 + static_cast<size_t>(j) * IN;
    double z = b1[j];
    for (int i = 0; i < IN; ++i) z += row[i] * x[i];
    out.h[j] = std::tanh(z);
  }
  for (int o = 0; o < 2; ++o) {
    const double* row = w2 + static_cast<size_t>(o) * H;
    double z = b2[o];
    for (int j = 0; j < H; ++j) z += row[j] * out.h[j];
    out.u[o] = z;
  }
}

// Backward through the MLP; accumulates parameter gradients into g (same
// layout as params) and writes d loss / d input into gx_in.
void mlp_backward(const Params& params, const double* x, const MlpOut& out, const double* gu,
                  double* g, double* gx_in) {
  const double* w1 = params.w.data() + Params::w1_off();
  const double* w2 = params.w.data() + Params::w2_off();
  double* gw1 = g + Params::w1_off();
  double* gb1 = g + Params::b1_off();
  double* gw2 = g + Params::w2_off();
  double* gb2 = g + Params::b2_off();

  double gh[H];
  for (int j = 0; j < H; ++j) gh[j] = 0.0;
  for (int o = 0; o < 2; ++o) {
    gb2[o] += gu[o];
    const double* row = w2 + static_cast<size_t>(o) * H;
    double* grow = gw2 + static_cast<size_t>(o) * H;
    for (int j = 0; j < H; ++j) {
      grow[j] += gu[o] * out.h[j];
      gh[j] += gu[o] * row[j];
    }
  }
  for (int i = 0; i < IN; ++i) gx_in[i] = 0.0;
  for (int j = 0; j < H; ++j) {
    const double gz = gh[j] * (1.0 - out.h[j] * out.h[j]);
    gb1[j] += gz;
    const double* row = w1 + static_cast<size_t>(j) * IN;
    double* grow = gw1 + static_cast<size_t>(j) * IN;
    for (int i = 0; i < IN; ++i) {
      grow[i] += gz * x[i];
      gx_in[i] += gz * row[i];
    }
  }
}

struct IterTape {
  Vec2 p_prev;
  double x[IN];
  MlpOut mlp;
};

// Runs the K refinement iterations of one query on one frame, starting at
// `pos`. Returns the final estimate; fills `tape` when non-null.
Vec2 refine_frame(const Params& params, const TemplateFeat& tmpl, const FrameChans& ch,
                  Vec2 pos, Vec2* stack_out, IterTape* tape) {
  double lat[3 * LAT2];
  Vec2 d_prev{0.0, 0.0};
  for (int k = 0; k < K; ++k) {
    IterTape local;
    IterTape& t = tape ? tape[k] : local;
    t.p_prev = pos;
    sample_lattice(ch, pos, lat, nullptr, nullptr);
    corr_forward(tmpl, lat, t.x, nullptr);
    t.x[C] = d_prev.x;
    t.x[C + 1] = d_prev.y;
    t.x[C + 2] = static_cast<double>(k + 1) / K;
    mlp_forward(params, t.x, t.mlp);
    const Vec2 d{std::clamp(t.mlp.u[0], -Params::kClampPx, Params::kClampPx),
                 std::clamp(t.mlp.u[1], -Params::kClampPx, Params::kClampPx)};
    pos += d;
    d_prev = d;
    if (stack_out) stack_out[k] = pos;
  }
  return pos;
}

double peak_correlation(const TemplateFeat& tmpl, const FrameChans& ch, const Vec2& pos) {
  double lat[3 * LAT2];
  double c[C];
  sample_lattice(ch, pos, lat, nullptr, nullptr);
  corr_forward(tmpl, lat, c, nullptr);
  double peak = c[0];
  for (int j = 1; j < C; ++j) peak = std::max(peak, c[j]);
  return peak;
}

void check_queries(std::span<const int> frame_order, std::span<const QueryPoint> queries) {
  if (frame_order.empty()) throw std::invalid_argument("nt: empty frame order");
  for (const QueryPoint& q : queries)
    if (q.t0 != frame_order[0])
      throw std::invalid_argument("nt: query not anchored on the first window frame");
}

}  // namespace

NeuralTrackerParams init_params(Rng& rng) {
  NeuralTrackerParams p;
  const double r = std::sqrt(6.0 / (IN + H));
  for (int i = 0; i < IN * H; ++i) p.w[static_cast<size_t>(Params::w1_off() + i)] = rng.uniform(-r, r);
  // b1, W2, b2 stay zero: the fresh network is the identity tracker.
  return p;
}

uint64_t params_hash(const NeuralTrackerParams& p) {
  uint64_t h = 1469598103934665603ull;
  for (double v : p.w) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xFF;
      h *= 1099511628211ull;
    }
  }
  return h;
}

namespace {

NtForwardResult forward_impl(const NeuralTrackerParams& params, const Video& video,
                             std::span<const int> frame_order,
                             std::span<const QueryPoint> queries,
                             const std::vector<std::vector<Vec2>>* pinned_inits) {
  check_queries(frame_order, queries);
  const int L = static_cast<int>(frame_order.size());
  const int nq = static_cast<int>(queries.size());
  const std::vector<FrameChans> chans = build_channels(video, frame_order);

  NtForwardResult res;
  res.trajs.resize(static_cast<size_t>(nq));
  res.confidence.resize(static_cast<size_t>(nq));
  res.stack.n_queries = nq;
  res.stack.refined_frames = L - 1;
  res.stack.iters = K;
  res.stack.data.resize(static_cast<size_t>(nq) * (L - 1) * K);

  parallel_for(nq, [&](int qi) {
    const QueryPoint& q = queries[static_cast<size_t>(qi)];
    const TemplateFeat tmpl = build_template(chans[0], q.pos());

    Trajectory traj;
    traj.query = q;
    traj.points.resize(static_cast<size_t>(L));
    traj.visible.resize(static_cast<size_t>(L));
    std::vector<double>& conf = res.confidence[static_cast<size_t>(qi)];
    conf.resize(static_cast<size_t>(L));

    traj.points[0] = q.pos();
    traj.visible[0] = 1;
    conf[0] = 1.0;

    Vec2 pos = q.pos();
    for (int t = 1; t < L; ++t) {
      const Vec2 init =
          pinned_inits ? (*pinned_inits)[static_cast<size_t>(qi)][static_cast<size_t>(t - 1)]
                       : pos;
      pos = refine_frame(params, tmpl, chans[static_cast<size_t>(t)], init,
                         &res.stack.at(qi, t - 1, 0), nullptr);
      const double peak = peak_correlation(tmpl, chans[static_cast<size_t>(t)], pos);
      traj.points[static_cast<size_t>(t)] = pos;
      traj.visible[static_cast<size_t>(t)] = peak > 0.5 ? 1 : 0;
      conf[static_cast<size_t>(t)] = peak;
    }
    res.trajs[static_cast<size_t>(qi)] = std::move(traj);
  });
  return res;
}

}  // namespace

NtForwardResult nt_forward(const NeuralTrackerParams& params, const Video& video,
                           std::span<const int> frame_order,
                           std::span<const QueryPoint> queries) {
  return forward_impl(params, video, frame_order, queries, nullptr);
}

NtForwardResult nt_forward_pinned(const NeuralTrackerParams& params, const Video& video,
                                  std::span<const int> frame_order,
                                  std::span<const QueryPoint> queries,
                                  const std::vector<std::vector<Vec2>>& inits) {
  if (inits.size() != queries.size())
    throw std::invalid_argument("nt_forward_pinned: inits must align with queries");
  for (const auto& per_q : inits)
    if (static_cast<int>(per_q.size()) != static_cast<int>(frame_order.size()) - 1)
      throw std::invalid_argument("nt_forward_pinned: one init per refined frame");
  return forward_impl(params, video, frame_order, queries, &inits);
}

NtForwardResult nt_forward(const NeuralTrackerParams& params, const Video& video,
                           const TrackWindow& window, std::span<const QueryPoint> queries) {
  if (!window.fits(video.frame_count()))
    throw std::invalid_argument("nt_forward: window does not fit the video");
  const std::vector<int> order = window.frames();
  return nt_forward(params, video, order, queries);
}

double huber(double a, double delta) {
  return a <= delta ? 0.5 * a * a : delta * (a - 0.5 * delta);
}

double track_loss(const PredictionStack& stack, std::span<const Trajectory> labels,
                  const LossWeights& weights) {
  if (static_cast<int>(labels.size()) != stack.n_queries)
    throw std::invalid_argument("track_loss: label count does not match stack");
  for (const Trajectory& l : labels)
    if (l.length() != stack.refined_frames + 1)
      throw std::invalid_argument("track_loss: label length does not match stack");
  if (stack.n_queries == 0 || stack.refined_frames == 0) return 0.0;

  double total = 0.0;
  for (int q = 0; q < stack.n_queries; ++q) {
    const Trajectory& label = labels[static_cast<size_t>(q)];
    for (int t = 0; t < stack.refined_frames; ++t) {
      const double w = label.visible[static_cast<size_t>(t + 1)] ? 1.0 : weights.occluded_weight;
      const Vec2 target = label.points[static_cast<size_t>(t + 1)];
      for (int k = 0; k < stack.iters; ++k) {
        const double discount = std::pow(weights.gamma, stack.iters - 1 - k);
        total += discount * w * huber(euclid(stack.at(q, t, k), target), weights.huber_delta);
      }
    }
  }
  return total / (static_cast<double>(stack.n_queries) * stack.refined_frames);
}

NtBackwardResult nt_backward(const NeuralTrackerParams& params, const Video& video,
                             std::span<const int> frame_order,
                             std::span<const QueryPoint> queries,
                             std::span<const Trajectory> labels, const LossWeights& weights) {
  check_queries(frame_order, queries);
  if (labels.size() != queries.size())
    throw std::invalid_argument("nt_backward: labels must align with queries");
  const int L = static_cast<int>(frame_order.size());
  for (const Trajectory& l : labels)
    if (l.length() != L) throw std::invalid_argument("nt_backward: label length mismatch");

  const int nq = static_cast<int>(queries.size());
  NtBackwardResult res;
  res.grad.assign(Params::kParamCount, 0.0);
  if (nq == 0 || L < 2) return res;

  const std::vector<FrameChans> chans = build_channels(video, frame_order);
  const double norm = 1.0 / (static_cast<double>(nq) * (L - 1));

  std::vector<std::vector<double>> grads(static_cast<size_t>(nq));
  std::vector<double> losses(static_cast<size_t>(nq), 0.0);

  parallel_for(nq, [&](int qi) {
    const QueryPoint& q = queries[static_cast<size_t>(qi)];
    const Trajectory& label = labels[static_cast<size_t>(qi)];
    const TemplateFeat tmpl = build_template(chans[0], q.pos());

    std::vector<double>& g = grads[static_cast<size_t>(qi)];
    g.assign(Params::kParamCount, 0.0);
    double loss_q = 0.0;

    std::vector<IterTape> tape(static_cast<size_t>(K));
    Vec2 chain_pos = q.pos();
    for (int t = 1; t < L; ++t) {
      const FrameChans& ch = chans[static_cast<size_t>(t)];
      Vec2 stack_t[K];
      const Vec2 final_pos =
          refine_frame(params, tmpl, ch, chain_pos, stack_t, tape.data());

      const double w = label.visible[static_cast<size_t>(t)] ? 1.0 : weights.occluded_weight;
      const Vec2 target = label.points[static_cast<size_t>(t)];

      // Reverse pass over the K iterations of this frame. G is d loss / d
      // estimate; carry is d loss / d update via the next iteration's
      // last-update input. The initialization (chain_pos) is a constant, so
      // the final G is dropped.
      Vec2 G{0.0, 0.0};
      Vec2 carry{0.0, 0.0};
      for (int k = K - 1; k >= 0; --k) {
        const Vec2 est = stack_t[k];
        const Vec2 r = est - target;
        const double a = euclid(est, target);
        const double coeff = norm * w * std::pow(weights.gamma, K - 1 - k);
        loss_q += coeff * huber(a, weights.huber_delta);
        if (a <= weights.huber_delta) {
          G += r * coeff;
        } else {
          G += r * (coeff * weights.huber_delta / a);
        }

        const Vec2 gd = G + carry;
        const IterTape& tp = tape[static_cast<size_t>(k)];
        double gu[2];
        gu[0] = (tp.mlp.u[0] > -Params::kClampPx && tp.mlp.u[0] < Params::kClampPx) ? gd.x : 0.0;
        gu[1] = (tp.mlp.u[1] > -Params::kClampPx && tp.mlp.u[1] < Params::kClampPx) ? gd.y : 0.0;

        double gx_in[IN];
        mlp_backward(params, tp.x, tp.mlp, gu, g.data(), gx_in);

        G += corr_backward(tmpl, ch, tp.p_prev, gx_in);
        carry = {gx_in[C], gx_in[C + 1]};  // consumed by iteration k-1's update
      }

      if (!std::isfinite(loss_q))
        throw std::runtime_error("nt_backward: non-finite loss at query " + std::to_string(qi) +
                                 " frame " + std::to_string(t));
      chain_pos = final_pos;  // gradient stopped across frames
    }

    for (double v : g)
      if (!std::isfinite(v))
        throw std::runtime_error("nt_backward: non-finite gradient at query " +
                                 std::to_string(qi));
    losses[static_cast<size_t>(qi)] = loss_q;
  });

  // Fixed-order reduction keeps results independent of the worker count.
  for (int qi = 0; qi < nq; ++qi) {
    res.loss += losses[static_cast<size_t>(qi)];
    const std::vector<double>& g = grads[static_cast<size_t>(qi)];
    for (int i = 0; i < Params::kParamCount; ++i) res.grad[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
  }
  return res;
}

double cosine_lr(const AdamConfig& cfg, long i) {
  if (cfg.total_steps <= 0) return cfg.base_lr;
  if (i < 0) i = 0;
  if (i > cfg.total_steps) i = cfg.total_steps;
  constexpr double kPi = 3.141592653589793238462643383279;
  return cfg.base_lr * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(i) / cfg.total_steps));
}

void adam_step(AdamState& state, NeuralTrackerParams& params, std::span<const double> grad) {
  if (grad.size() != params.w.size()) throw std::invalid_argument("adam_step: shape mismatch");
  for (double gv : grad)
    if (!std::isfinite(gv)) throw std::runtime_error("adam_step: non-finite gradient");

  const double lr = cosine_lr(state.cfg, state.step);
  const long t = state.step + 1;
  const double bc1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(t));
  for (size_t i = 0; i < params.w.size(); ++i) {
    const double gv = grad[i];
    state.m[i] = state.cfg.beta1 * state.m[i] + (1.0 - state.cfg.beta1) * gv;
    state.v[i] = state.cfg.beta2 * state.v[i] + (1.0 - state.cfg.beta2) * gv * gv;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params.w[i] -= lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
  }
  state.step = t;
}

void save_checkpoint(const NeuralTrackerParams& params, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint format assumes a little-endian host");
  nlohmann::json header{{"format", "tracklab-ckpt-v1"},
                        {"arch",
                         {{"patch", Params::kPatch},
                          {"radius", Params::kRadius},
                          {"iters", Params::kIters},
                          {"hidden", Params::kHidden}}},
                        {"params", Params::kParamCount},
                        {"step", meta.step},
                        {"seed", meta.seed}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << header.dump() << "\n";
  out.write(reinterpret_cast<const char*>(params.w.data()),
            static_cast<std::streamsize>(params.w.size() * sizeof(double)));
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

std::pair<NeuralTrackerParams, CheckpointMeta> load_checkpoint(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open checkpoint");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": malformed header: " + e.what());
  }
  if (header.value("format", "") != "tracklab-ckpt-v1")
    throw std::runtime_error(path.string() + ": unknown checkpoint format");
  if (header.at("params").get<int>() != Params::kParamCount)
    throw std::runtime_error(path.string() + ": parameter count mismatch");
  const auto& arch = header.at("arch");
  if (arch.at("patch").get<int>() != Params::kPatch ||
      arch.at("radius").get<int>() != Params::kRadius ||
      arch.at("iters").get<int>() != Params::kIters ||
      arch.at("hidden").get<int>() != Params::kHidden)
    throw std::runtime_error(path.string() + ": architecture mismatch");

  NeuralTrackerParams p;
  in.read(reinterpret_cast<char*>(p.w.data()),
          static_cast<std::streamsize>(p.w.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(p.w.size() * sizeof(double)))
    throw std::runtime_error(path.string() + ": truncated parameter block");
  for (double v : p.w)
    if (!std::isfinite(v)) throw std::runtime_error(path.string() + ": non-finite parameter");

  CheckpointMeta meta;
  meta.step = header.at("step").get<long>();
  meta.seed = header.at("seed").get<uint64_t>();
  return {std::move(p), meta};
}

}  // namespace tracklab::nt
