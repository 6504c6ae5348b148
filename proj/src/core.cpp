// SPDX-License-Identifier: Apache-2.0

#include "tracklab/core.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace tracklab {

double euclid(const Vec2& p, const Vec2& q) {
  const double dx = p.x - q.x;
  const double dy = p.y - q.y;
  return std::sqrt(dx * dx + dy * dy);
}

void Video::validate() const {
  if (frames.size() < 2) throw std::runtime_error("video '" + id + "': needs at least 2 frames");
  for (size_t t = 0; t < frames.size(); ++t) {
    const Frame& f = frames[t];
    if (f.width != width || f.height != height)
      throw std::runtime_error("video '" + id + "': frame " + std::to_string(t) +
                               " size mismatch");
    if (f.pixels.size() != static_cast<size_t>(width) * height)
      throw std::runtime_error("video '" + id + "': frame " + std::to_string(t) +
                               " pixel count mismatch");
    for (double v : f.pixels)
      if (!(v >= 0.0 && v <= 1.0))
        throw std::runtime_error("video '" + id + "': pixel outside [0,1] in frame " +
                                 std::to_string(t));
  }
}

std::vector<int> TrackWindow::frames() const {
  std::vector<int> out(static_cast<size_t>(length));
  for (int i = 0; i < length; ++i) out[static_cast<size_t>(i)] = start + i * stride;
  return out;
}

std::vector<int> TrackWindow::reversed_frames() const {
  std::vector<int> out = frames();
  std::reverse(out.begin(), out.end());
  return out;
}

namespace {

struct AxisCell {
  int i0 = 0;       // left lattice index
  double f = 0.0;   // fraction inside the cell
  double dm = 0.0;  // derivative mask: 0 when the coordinate is clamped
};

inline AxisCell axis_cell(double v, int n) {
  if (n <= 1) return {0, 0.0, 0.0};
  if (v < 0.0) return {0, 0.0, 0.0};
  if (v > static_cast<double>(n - 1)) return {n - 2, 1.0, 0.0};
  int i0 = static_cast<int>(v);
  if (i0 > n - 2) i0 = n - 2;  // v == n-1 uses the last cell
  return {i0, v - i0, 1.0};
}

}  // namespace

double bilinear_sample(const Frame& f, double x, double y) {
  const AxisCell cx = axis_cell(x, f.width);
  const AxisCell cy = axis_cell(y, f.height);
  const int x1 = (f.width > 1) ? cx.i0 + 1 : 0;
  const int y1 = (f.height > 1) ? cy.i0 + 1 : 0;
  const double v00 = f.at(cx.i0, cy.i0);
  const double v10 = f.at(x1, cy.i0);
  const double v01 = f.at(cx.i0, y1);
  const double v11 = f.at(x1, y1);
  const double top = v00 + cx.f * (v10 - v00);
  const double bot = v01 + cx.f * (v11 - v01);
  return top + cy.f * (bot - top);
}

SampleGrad bilinear_sample_grad(const Frame& f, double x, double y) {
  const AxisCell cx = axis_cell(x, f.width);
  const AxisCell cy = axis_cell(y, f.height);
  const int x1 = (f.width > 1) ? cx.i0 + 1 : 0;
  const int y1 = (f.height > 1) ? cy.i0 + 1 : 0;
  const double v00 = f.at(cx.i0, cy.i0);
  const double v10 = f.at(x1, cy.i0);
  const double v01 = f.at(cx.i0, y1);
  const double v11 = f.at(x1, y1);
  SampleGrad g;
  const double top = v00 + cx.f * (v10 - v00);
  const double bot = v01 + cx.f * (v11 - v01);
  g.value = top + cy.f * (bot - top);
  g.dx = cx.dm * ((1.0 - cy.f) * (v10 - v00) + cy.f * (v11 - v01));
  g.dy = cy.dm * ((1.0 - cx.f) * (v01 - v00) + cx.f * (v11 - v10));
  return g;
}

void sobel_gradients(const Frame& f, Frame& gx, Frame& gy) {
  const int w = f.width;
  const int h = f.height;
  gx = Frame(w, h);
  gy = Frame(w, h);
  auto clampi = [](int v, int n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); };
  for (int y = 0; y < h; ++y) {
    const int ym = clampi(y - 1, h);
    const int yp = clampi(y + 1, h);
    for (int x = 0; x < w; ++x) {
      const int xm = clampi(x - 1, w);
      const int xp = clampi(x + 1, w);
      const double a = f.at(xm, ym), b = f.at(x, ym), c = f.at(xp, ym);
      const double d = f.at(xm, y), e = f.at(xp, y);
      const double p = f.at(xm, yp), q = f.at(x, yp), r = f.at(xp, yp);
      gx.at(x, y) = ((c + 2.0 * e + r) - (a + 2.0 * d + p)) / 8.0;
      gy.at(x, y) = ((p + 2.0 * q + r) - (a + 2.0 * b + c)) / 8.0;
    }
  }
}

namespace {

constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(uint64_t seed, uint64_t stream)
    : key_(mix64(seed + kGolden) ^ mix64(~stream * kGolden + 0x6A09E667F3BCC909ull)) {}

uint64_t Rng::next_u64() { return mix64(key_ + kGolden * ++counter_); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int n) {
  if (n < 1) throw std::invalid_argument("uniform_int: n must be >= 1");
  int r = static_cast<int>(uniform() * n);
  return r < n ? r : n - 1;
}

double Rng::normal() {
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

Rng Rng::fork(uint64_t stream) const {
  Rng child;
  child.key_ = mix64(key_ ^ (stream + kGolden)) + 0x2545F4914F6CDD1Dull;
  child.counter_ = 0;
  return child;
}

namespace {

// Minimal persistent pool. Tasks are chunks of an index range claimed from a
// shared atomic; the calling thread participates, so parallel_for(n) with a
// single worker degrades to a plain loop.
class Pool {
 public:
  static Pool& instance() {
    // Leaked on purpose: workers park on the condition variable until the
    // process exits, so the pool must outlive every static destructor.
    static Pool* pool = new Pool();
    return *pool;
  }

  int workers() const { return n_workers_; }

  void run(int n, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    // Nested calls (from inside a task) run serially instead of deadlocking
    // on the job mutex.
    if (n == 1 || n_workers_ == 1 || tl_in_task) {
      for (int i = 0; i < n; ++i) fn(i);
      return;
    }
    std::unique_lock<std::mutex> lk(job_mutex_);
    {
      std::lock_guard<std::mutex> g(mutex_);
      fn_ = &fn;
      limit_ = n;
      next_.store(0, std::memory_order_relaxed);
      pending_ = n_workers_ - 1;
      error_ = nullptr;
      ++generation_;
    }
    cv_.notify_all();
    work();  // caller contributes
    std::unique_lock<std::mutex> g(mutex_);
    done_cv_.wait(g, [this] { return pending_ == 0; });
    fn_ = nullptr;
    if (error_) {
      std::exception_ptr e = error_;
      error_ = nullptr;
      g.unlock();
      std::rethrow_exception(e);
    }
  }

 private:
  Pool() {
    n_workers_ = detect_workers();
    for (int i = 0; i < n_workers_ - 1; ++i)
      threads_.emplace_back([this] { worker_loop(); });
  }

  static int detect_workers() {
    if (const char* env = std::getenv("TRACKLAB_WORKERS")) {
      const int v = std::atoi(env);
      if (v >= 1) return v;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc >= 1 ? static_cast<int>(hc) : 1;
  }

  void worker_loop() {
    uint64_t seen = 0;
    for (;;) {
      std::unique_lock<std::mutex> g(mutex_);
      cv_.wait(g, [&] { return generation_ != seen; });
      seen = generation_;
      g.unlock();
      work();
      g.lock();
      if (--pending_ == 0) done_cv_.notify_all();
    }
  }

  void work() {
    const std::function<void(int)>* fn = fn_;
    const int limit = limit_;
    tl_in_task = true;
    for (;;) {
      const int i = next_.fetch_add(1, std::memory_order_relaxed);
      if (i >= limit) break;
      try {
        (*fn)(i);
      } catch (...) {
        std::lock_guard<std::mutex> g(mutex_);
        if (!error_) error_ = std::current_exception();
        next_.store(limit, std::memory_order_relaxed);  // abandon remaining work
      }
    }
    tl_in_task = false;
  }

  static thread_local bool tl_in_task;

  int n_workers_ = 1;
  std::vector<std::thread> threads_;
  std::mutex job_mutex_;  // serializes concurrent parallel_for calls
  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(int)>* fn_ = nullptr;
  std::atomic<int> next_{0};
  int limit_ = 0;
  int pending_ = 0;
  uint64_t generation_ = 0;
  std::exception_ptr error_ = nullptr;
};

thread_local bool Pool::tl_in_task = false;

}  // namespace

void parallel_for(int n, const std::function<void(int)>& fn) { Pool::instance().run(n, fn); }

int worker_count() { return Pool::instance().workers(); }

}  // namespace tracklab
