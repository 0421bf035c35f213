#pragma once

// Full self-attention over a feature grid and its block-sampled variant.
//
// Features x are {H, W, C_in}. Q, K and V are 1x1 convolutions C_in -> C_h
// (weights {C_h, C_in}, no bias); the output projection Z maps C_h -> C_in.
// Full attention uses every position as a query (HW x HW matrix). The block
// sampled variant queries only the M positions of one block (M x HW matrix),
// replaces those rows of V with the attended features and passes every other
// row of V through unchanged: y = Z(R(x)) + x.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <new>
#include <random>
#include <span>
#include <vector>

#include "planesynth/errors.hpp"
#include "planesynth/tensor.hpp"

namespace planesynth {

// ---------------------------------------------------------------------------
// Allocation accounting for attention buffers

class AllocationTracker {
 public:
  static void reset() {
    current_.store(0);
    peak_.store(0);
  }
  static std::size_t current() { return current_.load(); }
  static std::size_t peak() { return peak_.load(); }

  static void add(std::size_t bytes) {
    const std::size_t now = current_.fetch_add(bytes) + bytes;
    std::size_t prev = peak_.load();
    while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
    }
  }
  static void remove(std::size_t bytes) { current_.fetch_sub(bytes); }

 private:
  static inline std::atomic<std::size_t> current_{0};
  static inline std::atomic<std::size_t> peak_{0};
};

template <typename T>
struct TrackingAllocator {
  using value_type = T;
  TrackingAllocator() = default;
  template <typename U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    AllocationTracker::add(n * sizeof(T));
    return static_cast<T*>(::operator new(n * sizeof(T)));
  }
  void deallocate(T* p, std::size_t n) noexcept {
    AllocationTracker::remove(n * sizeof(T));
    ::operator delete(p);
  }
  template <typename U>
  friend bool operator==(const TrackingAllocator&, const TrackingAllocator<U>&) {
    return true;
  }
};

using TrackedBuffer = std::vector<double, TrackingAllocator<double>>;

// ---------------------------------------------------------------------------
// Problem description

struct AttentionWeights {
  Tensor wq;  // {C_h, C_in}
  Tensor wk;  // {C_h, C_in}
  Tensor wv;  // {C_h, C_in}
  Tensor wz;  // {C_in, C_h}

  std::size_t hidden() const { return wq.dim(0); }
  std::size_t channels() const { return wq.dim(1); }

  static AttentionWeights random(std::size_t c_in, std::size_t c_h, std::mt19937_64& rng, double scale = 0.5) {
    std::normal_distribution<double> n(0.0, scale);
    AttentionWeights w{Tensor({c_h, c_in}), Tensor({c_h, c_in}), Tensor({c_h, c_in}), Tensor({c_in, c_h})};
    for (Tensor* t : {&w.wq, &w.wk, &w.wv, &w.wz})
      for (double& v : t->raw()) v = n(rng);
    return w;
  }
};

struct AttentionProblem {
  Tensor x;  // {H, W, C_in}
  AttentionWeights weights;
  std::size_t samples{1};  // M

  std::size_t height() const { return x.dim(0); }
  std::size_t width() const { return x.dim(1); }
  std::size_t positions() const { return x.dim(0) * x.dim(1); }

  void validate() const {
    if (x.rank() != 3) throw DimensionMismatch("attention input must be {H, W, C_in}");
    const std::size_t c_in = x.dim(2), c_h = weights.wq.rank() == 2 ? weights.wq.dim(0) : 0;
    if (c_h == 0) throw DimensionMismatch("attention kernels must be rank-2");
    require_same_shape(weights.wq.shape(), Shape{c_h, c_in}, "attention Wq");
    require_same_shape(weights.wk.shape(), Shape{c_h, c_in}, "attention Wk");
    require_same_shape(weights.wv.shape(), Shape{c_h, c_in}, "attention Wv");
    require_same_shape(weights.wz.shape(), Shape{c_in, c_h}, "attention Wz");
    if (samples < 1 || samples > positions())
      throw InvalidArgument("attention sample count M must lie in [1, H*W]");
  }
};

// One contiguous block of query positions. When bh == 1 and bw exceeds the
// grid width the block is a run of bw consecutive row-major positions.
struct BlockSampleSpec {
  std::size_t row{0}, col{0};
  std::size_t bh{1}, bw{1};

  std::size_t count() const { return bh * bw; }
  bool is_run(std::size_t width) const { return bh == 1 && bw > width; }

  void validate(std::size_t h, std::size_t w) const {
    if (bh == 0 || bw == 0) throw BlockOutOfBounds("block has zero extent");
    if (is_run(w)) {
      if (row * w + col + bw > h * w) throw BlockOutOfBounds("row-run block leaves the grid");
      return;
    }
    if (row + bh > h || col + bw > w)
      throw BlockOutOfBounds("block (" + std::to_string(row) + "," + std::to_string(col) + ") of " +
                             std::to_string(bh) + "x" + std::to_string(bw) + " leaves the " + std::to_string(h) +
                             "x" + std::to_string(w) + " grid");
  }

  // Flattened positions in row-major order.
  std::vector<std::size_t> positions(std::size_t h, std::size_t w) const {
    validate(h, w);
    std::vector<std::size_t> p;
    p.reserve(count());
    if (is_run(w)) {
      for (std::size_t k = 0; k < bw; ++k) p.push_back(row * w + col + k);
      return p;
    }
    for (std::size_t r = 0; r < bh; ++r)
      for (std::size_t c = 0; c < bw; ++c) p.push_back((row + r) * w + col + c);
    return p;
  }

  static BlockSampleSpec whole(std::size_t h, std::size_t w) { return {0, 0, h, w}; }
};

// Nearest-to-square bh x bw = M that fits inside the grid; otherwise a row run.
inline BlockSampleSpec block_shape(std::size_t m, std::size_t h, std::size_t w) {
  if (m < 1 || m > h * w) throw InvalidArgument("block sample count must lie in [1, H*W]");
  BlockSampleSpec best{0, 0, 0, 0};
  std::size_t best_gap = std::numeric_limits<std::size_t>::max();
  for (std::size_t bh = 1; bh <= m; ++bh) {
    if (m % bh != 0) continue;
    const std::size_t bw = m / bh;
    if (bh > h || bw > w) continue;
    const std::size_t gap = bh > bw ? bh - bw : bw - bh;
    if (gap < best_gap) {
      best_gap = gap;
      best = {0, 0, bh, bw};
    }
  }
  if (best.bh == 0) return {0, 0, 1, m};  // no factorization fits: row-major run
  return best;
}

// Uniformly random in-bounds anchor for the block shape chosen for M.
inline BlockSampleSpec sample_block(std::size_t h, std::size_t w, std::size_t m, std::mt19937_64& rng) {
  BlockSampleSpec s = block_shape(m, h, w);
  if (s.is_run(w)) {
    std::uniform_int_distribution<std::size_t> start(0, h * w - m);
    const std::size_t k = start(rng);
    s.row = k / w;
    s.col = k % w;
    return s;
  }
  std::uniform_int_distribution<std::size_t> r(0, h - s.bh), c(0, w - s.bw);
  s.row = r(rng);
  s.col = c(rng);
  return s;
}

// ---------------------------------------------------------------------------
// Forward passes

struct AttentionCache {
  std::vector<std::size_t> queries;  // query positions (row of A -> grid position)
  TrackedBuffer q, k, v;             // HW x C_h
  TrackedBuffer a;                   // |queries| x HW, row-softmaxed
  TrackedBuffer r;                   // HW x C_h, V with query rows replaced
  Tensor y;                          // {H, W, C_in}
};

namespace detail {

// out[p, o] = sum_i in[p, i] * w[o, i]
inline void project_rows(std::span<const double> in, std::size_t rows, std::size_t c_in, const Tensor& w,
                         std::span<double> out) {
  const std::size_t c_out = w.dim(0);
  for (std::size_t p = 0; p < rows; ++p)
    for (std::size_t o = 0; o < c_out; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < c_in; ++i) acc += in[p * c_in + i] * w.at(o, i);
      out[p * c_out + o] = acc;
    }
}

inline void softmax_row(std::span<double> row) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : row) mx = std::max(mx, v);
  double z = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : row) v /= z;
}

inline AttentionCache attend(const AttentionProblem& prob, std::vector<std::size_t> queries) {
  prob.validate();
  const std::size_t hw = prob.positions(), c_in = prob.x.dim(2), c_h = prob.weights.hidden();
  const std::size_t m = queries.size();
  AttentionCache c;
  c.queries = std::move(queries);
  c.q.assign(hw * c_h, 0.0);
  c.k.assign(hw * c_h, 0.0);
  c.v.assign(hw * c_h, 0.0);
  project_rows(prob.x.data(), hw, c_in, prob.weights.wq, c.q);
  project_rows(prob.x.data(), hw, c_in, prob.weights.wk, c.k);
  project_rows(prob.x.data(), hw, c_in, prob.weights.wv, c.v);
  c.a.assign(m * hw, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    const double* qr = c.q.data() + c.queries[r] * c_h;
    double* ar = c.a.data() + r * hw;
    for (std::size_t j = 0; j < hw; ++j) {
      const double* kj = c.k.data() + j * c_h;
      double acc = 0.0;
      for (std::size_t o = 0; o < c_h; ++o) acc += qr[o] * kj[o];
      ar[j] = acc;
    }
    softmax_row(std::span<double>(ar, hw));
  }
  c.r = c.v;
  for (std::size_t r = 0; r < m; ++r) {
    double* rr = c.r.data() + c.queries[r] * c_h;
    std::fill(rr, rr + c_h, 0.0);
    const double* ar = c.a.data() + r * hw;
    for (std::size_t j = 0; j < hw; ++j) {
      const double a = ar[j];
      const double* vj = c.v.data() + j * c_h;
      for (std::size_t o = 0; o < c_h; ++o) rr[o] += a * vj[o];
    }
  }
  c.y = prob.x;
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t o = 0; o < c_in; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < c_h; ++i) acc += c.r[p * c_h + i] * prob.weights.wz.at(o, i);
      c.y[p * c_in + o] += acc;
    }
  return c;
}

}  // namespace detail

inline AttentionCache full_self_attention_cached(const AttentionProblem& prob) {
  std::vector<std::size_t> all(prob.positions());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return detail::attend(prob, std::move(all));
}

inline Tensor full_self_attention(const AttentionProblem& prob) { return full_self_attention_cached(prob).y; }

inline AttentionCache bs_self_attention_cached(const AttentionProblem& prob, const BlockSampleSpec& spec) {
  prob.validate();
  return detail::attend(prob, spec.positions(prob.height(), prob.width()));
}

inline Tensor bs_self_attention(const AttentionProblem& prob, const BlockSampleSpec& spec) {
  return bs_self_attention_cached(prob, spec).y;
}

// Evaluation-time attention: the whole grid as one block when the attention
// matrix fits the budget, otherwise row-major tiles of at most budget rows
// that together query every position (which equals full attention).
inline Tensor attention_inference(const AttentionProblem& prob, std::size_t matrix_budget_bytes,
                                  std::size_t bytes_per_element = sizeof(double)) {
  prob.validate();
  const std::size_t hw = prob.positions();
  std::size_t rows = std::max<std::size_t>(1, matrix_budget_bytes / (hw * bytes_per_element));
  if (rows >= hw) return full_self_attention(prob);
  // Tiles are independent softmax rows; stitch their replaced V rows together.
  const std::size_t c_in = prob.x.dim(2), c_h = prob.weights.hidden();
  TrackedBuffer r(hw * c_h, 0.0);
  for (std::size_t start = 0; start < hw; start += rows) {
    const std::size_t n = std::min(rows, hw - start);
    std::vector<std::size_t> q(n);
    for (std::size_t k = 0; k < n; ++k) q[k] = start + k;
    auto c = detail::attend(prob, q);
    for (std::size_t k = 0; k < n; ++k)
      std::copy_n(c.r.data() + q[k] * c_h, c_h, r.data() + q[k] * c_h);
  }
  Tensor y = prob.x;
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t o = 0; o < c_in; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < c_h; ++i) acc += r[p * c_h + i] * prob.weights.wz.at(o, i);
      y[p * c_in + o] += acc;
    }
  return y;
}

// ---------------------------------------------------------------------------
// Backward pass shared by both variants

struct AttentionGradients {
  Tensor x;
  AttentionWeights weights;
};

inline AttentionGradients attention_backward(const AttentionProblem& prob, const AttentionCache& c,
                                             const Tensor& grad_y) {
  const std::size_t hw = prob.positions(), c_in = prob.x.dim(2), c_h = prob.weights.hidden();
  const std::size_t m = c.queries.size();
  require_same_shape(grad_y.shape(), prob.x.shape(), "attention_backward");
  const auto& W = prob.weights;
  AttentionGradients g{grad_y, {Tensor(W.wq.shape()), Tensor(W.wk.shape()), Tensor(W.wv.shape()), Tensor(W.wz.shape())}};

  // y = R Wz^T + x
  std::vector<double> gr(hw * c_h, 0.0);
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t o = 0; o < c_in; ++o) {
      const double gy = grad_y[p * c_in + o];
      for (std::size_t i = 0; i < c_h; ++i) {
        g.weights.wz.at(o, i) += gy * c.r[p * c_h + i];
        gr[p * c_h + i] += gy * W.wz.at(o, i);
      }
    }

  // Rows not queried pass V through.
  std::vector<double> gv(gr), gq(hw * c_h, 0.0), gk(hw * c_h, 0.0);
  for (std::size_t r = 0; r < m; ++r) std::fill_n(gv.data() + c.queries[r] * c_h, c_h, 0.0);

  std::vector<double> ga(hw);
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t qp = c.queries[r];
    const double* grr = gr.data() + qp * c_h;
    const double* ar = c.a.data() + r * hw;
    // Vnew_r = sum_j A_rj V_j
    double dot = 0.0;
    for (std::size_t j = 0; j < hw; ++j) {
      const double* vj = c.v.data() + j * c_h;
      double acc = 0.0;
      for (std::size_t o = 0; o < c_h; ++o) {
        acc += grr[o] * vj[o];
        gv[j * c_h + o] += ar[j] * grr[o];
      }
      ga[j] = acc;
      dot += acc * ar[j];
    }
    // softmax: dS_rj = A_rj (dA_rj - sum_k dA_rk A_rk); S_rj = Q_qp . K_j
    const double* qr = c.q.data() + qp * c_h;
    double* gqr = gq.data() + qp * c_h;
    for (std::size_t j = 0; j < hw; ++j) {
      const double ds = ar[j] * (ga[j] - dot);
      if (ds == 0.0) continue;
      const double* kj = c.k.data() + j * c_h;
      double* gkj = gk.data() + j * c_h;
      for (std::size_t o = 0; o < c_h; ++o) {
        gqr[o] += ds * kj[o];
        gkj[o] += ds * qr[o];
      }
    }
  }

  // Q = X Wq^T etc.
  auto back_proj = [&](const std::vector<double>& gout, const Tensor& w, Tensor& gw) {
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t o = 0; o < c_h; ++o) {
        const double go = gout[p * c_h + o];
        if (go == 0.0) continue;
        for (std::size_t i = 0; i < c_in; ++i) {
          gw.at(o, i) += go * prob.x[p * c_in + i];
          g.x[p * c_in + i] += go * w.at(o, i);
        }
      }
  };
  back_proj(gq, W.wq, g.weights.wq);
  back_proj(gk, W.wk, g.weights.wk);
  back_proj(gv, W.wv, g.weights.wv);
  return g;
}

// ---------------------------------------------------------------------------
// Memory accounting

struct AttentionMemory {
  std::size_t matrix_bytes{0};      // attention matrix
  std::size_t activation_bytes{0};  // Q, K, V and R buffers
  std::size_t total() const { return matrix_bytes + activation_bytes; }
};

// Closed-form byte count for an attention call with M query rows. Full
// attention is M = H*W.
inline AttentionMemory attention_memory_estimate(std::size_t h, std::size_t w, std::size_t m, std::size_t c_h,
                                                 std::size_t bytes_per_element = sizeof(float)) {
  const std::size_t hw = h * w;
  return {m * hw * bytes_per_element, 4 * hw * c_h * bytes_per_element};
}

}  // namespace planesynth
