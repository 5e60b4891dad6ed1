#pragma once

// Tape-based reverse-mode automatic differentiation over flat row-major
// matrices. Every tape value is a [rows x cols] matrix of doubles; vectors
// are [1 x n]. Nodes are created in topological order, so backward() is a
// single reverse sweep. Leaves created with watch() accumulate their
// gradients back into the owning Tensor.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ices/errors.hpp"
#include "ices/rng.hpp"

namespace ices {

// Long-lived value with an optional gradient accumulator. Carrier for all
// network parameters.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first backward through it

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  int size() const { return rows * cols; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
  }

  static Tensor zeros(int r, int c) { return Tensor(r, c); }

  static Tensor full(int r, int c, double v) {
    Tensor t(r, c);
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  // Uniform(-bound, bound); bound defaults to 1/sqrt(cols), the usual fan-in rule.
  static Tensor uniform(int r, int c, RandomStream& rng, double bound = 0.0) {
    Tensor t(r, c);
    const double b = bound > 0.0 ? bound : 1.0 / std::sqrt(static_cast<double>(c > 0 ? c : 1));
    for (auto& v : t.data) v = (2.0 * rng.uniform01() - 1.0) * b;
    return t;
  }
};

class Tape;

// Handle to a node on a tape.
struct Ref {
  Tape* tape = nullptr;
  int id = -1;
  int rows = 0;
  int cols = 0;

  bool valid() const { return tape != nullptr && id >= 0; }
  int size() const { return rows * cols; }
};

class Tape {
 public:
  using BackFn = std::function<void(Tape&, int self)>;

  Ref watch(Tensor& t) {
    const int id = push_node(t.rows, t.cols, t.data, &t);
    return Ref{this, id, t.rows, t.cols};
  }

  Ref constant(int rows, int cols, std::vector<double> data) {
    if (static_cast<int>(data.size()) != static_cast<int>(rows) * cols)
      throw DimensionError("tape constant: data length does not match shape");
    const int id = push_node(rows, cols, std::move(data), nullptr);
    return Ref{this, id, rows, cols};
  }

  Ref scalar(double v) { return constant(1, 1, {v}); }

  Ref apply(int rows, int cols, std::vector<double> data, BackFn back) {
    const int id = push_node(rows, cols, std::move(data), nullptr);
    nodes_[id].back = std::move(back);
    return Ref{this, id, rows, cols};
  }

  const std::vector<double>& val(int id) const { return nodes_[id].val; }
  const std::vector<double>& val(const Ref& r) const { return nodes_[r.id].val; }

  std::vector<double>& grad(int id) {
    nodes_[id].ensure_grad();
    return nodes_[id].grad;
  }

  double scalar_val(const Ref& r) const {
    assert(r.size() == 1);
    return nodes_[r.id].val[0];
  }

  // Reverse sweep from a scalar root. Gradients accumulate into every
  // reached node and, for watched leaves, into Tensor::grad.
  void backward(const Ref& root) {
    if (root.size() != 1) throw DimensionError("backward: root must be scalar");
    grad(root.id)[0] += 1.0;
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;  // no gradient flowed here
      if (n.back) n.back(*this, i);
      if (n.src) {
        n.src->ensure_grad();
        for (size_t k = 0; k < n.grad.size(); ++k) n.src->grad[k] += n.grad[k];
      }
    }
  }

  size_t node_count() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    int rows, cols;
    std::vector<double> val;
    std::vector<double> grad;  // lazily allocated
    BackFn back;
    Tensor* src = nullptr;

    void ensure_grad() {
      if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
    }
  };

  int push_node(int rows, int cols, std::vector<double> data, Tensor* src) {
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.val = std::move(data);
    n.src = src;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
};

namespace detail {

inline void check_same_shape(const Ref& a, const Ref& b, const char* op) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw DimensionError(std::string(op) + ": shape mismatch");
  if (a.tape != b.tape)
    throw DimensionError(std::string(op) + ": operands on different tapes");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Ref add(const Ref& a, const Ref& b) {
  detail::check_same_shape(a, b, "add");
  Tape& t = *a.tape;
  const auto& av = t.val(a.id);
  const auto& bv = t.val(b.id);
  std::vector<double> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const int aid = a.id, bid = b.id;
  return t.apply(a.rows, a.cols, std::move(out), [aid, bid](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(aid);
    auto& gb = tp.grad(bid);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
}

inline Ref sub(const Ref& a, const Ref& b) {
  detail::check_same_shape(a, b, "sub");
  Tape& t = *a.tape;
  const auto& av = t.val(a.id);
  const auto& bv = t.val(b.id);
  std::vector<double> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const int aid = a.id, bid = b.id;
  return t.apply(a.rows, a.cols, std::move(out), [aid, bid](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(aid);
    auto& gb = tp.grad(bid);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    }
  });
}

inline Ref mul(const Ref& a, const Ref& b) {
  detail::check_same_shape(a, b, "mul");
  Tape& t = *a.tape;
  const auto& av = t.val(a.id);
  const auto& bv = t.val(b.id);
  std::vector<double> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const int aid = a.id, bid = b.id;
  return t.apply(a.rows, a.cols, std::move(out), [aid, bid](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& av2 = tp.val(aid);
    const auto& bv2 = tp.val(bid);
    auto& ga = tp.grad(aid);
    auto& gb = tp.grad(bid);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * bv2[i];
      gb[i] += g[i] * av2[i];
    }
  });
}

// Elementwise product with a gradient-free coefficient array.
inline Ref mul_const(const Ref& a, const std::vector<double>& w) {
  Tape& t = *a.tape;
  const auto& av = t.val(a.id);
  if (w.size() != av.size()) throw DimensionError("mul_const: coefficient length mismatch");
  std::vector<double> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * w[i];
  const int aid = a.id;
  auto wc = w;
  return t.apply(a.rows, a.cols, std::move(out), [aid, wc](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(aid);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * wc[i];
  });
}

inline Ref scale(const Ref& a, double c) {
  Tape& t = *a.tape;
  const auto& av = t.val(a.id);
  std::vector<double> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  const int aid = a.id;
  return t.apply(a.rows, a.cols, std::move(out), [aid, c](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(aid);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  });
}

inline Ref add_scalar(const Ref& a, double c) {
  Tape& t = *a.tape;
  const auto& av = t.val(a.id);
  std::vector<double> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  const int aid = a.id;
  return t.apply(a.rows, a.cols, std::move(out), [aid](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(aid);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

inline Ref neg(const Ref& a) { return scale(a, -1.0); }

// Broadcast-add a [1 x n] row vector to every row of a [B x n] matrix.
inline Ref add_rowvec(const Ref& x, const Ref& v) {
  if (v.rows != 1 || v.cols != x.cols) throw DimensionError("add_rowvec: shape mismatch");
  Tape& t = *x.tape;
  const auto& xv = t.val(x.id);
  const auto& vv = t.val(v.id);
  std::vector<double> out(xv.size());
  const int B = x.rows, n = x.cols;
  for (int b = 0; b < B; ++b)
    for (int j = 0; j < n; ++j) out[b * n + j] = xv[b * n + j] + vv[j];
  const int xid = x.id, vid = v.id;
  return t.apply(B, n, std::move(out), [xid, vid, B, n](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(xid);
    auto& gv = tp.grad(vid);
    for (int b = 0; b < B; ++b)
      for (int j = 0; j < n; ++j) {
        gx[b * n + j] += g[b * n + j];
        gv[j] += g[b * n + j];
      }
  });
}

namespace detail {

template <typename F, typename DF>
Ref unary_op(const Ref& a, F f, DF df) {
  Tape& t = *a.tape;
  const auto& av = t.val(a.id);
  std::vector<double> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  const int aid = a.id;
  return t.apply(a.rows, a.cols, std::move(out), [aid, df](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& x = tp.val(aid);
    const auto& y = tp.val(self);
    auto& ga = tp.grad(aid);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace detail

inline Ref tanh_(const Ref& a) {
  return detail::unary_op(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Ref sigmoid_(const Ref& a) {
  return detail::unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Ref relu_(const Ref& a) {
  return detail::unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Ref elu_(const Ref& a) {
  return detail::unary_op(
      a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

inline Ref exp_(const Ref& a) {
  return detail::unary_op(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

inline Ref log_(const Ref& a) {
  return detail::unary_op(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

inline Ref square_(const Ref& a) {
  return detail::unary_op(
      a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

inline Ref abs_(const Ref& a) {
  return detail::unary_op(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

// Clamp with pass-through gradient strictly inside the interval.
inline Ref clamp_(const Ref& a, double lo, double hi) {
  return detail::unary_op(
      a, [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear layer: y = X * W^T + b.   X: [B x n], W: [m x n], b: [1 x m].
// ---------------------------------------------------------------------------

inline Ref linear(const Ref& x, const Ref& w, const Ref& b) {
  if (x.cols != w.cols) throw DimensionError("linear: input width does not match weight fan-in");
  if (b.rows != 1 || b.cols != w.rows) throw DimensionError("linear: bias shape mismatch");
  Tape& t = *x.tape;
  const auto& xv = t.val(x.id);
  const auto& wv = t.val(w.id);
  const auto& bv = t.val(b.id);
  const int B = x.rows, n = x.cols, m = w.rows;
  std::vector<double> out(static_cast<size_t>(B) * m);
  for (int bi = 0; bi < B; ++bi) {
    const double* xr = &xv[static_cast<size_t>(bi) * n];
    double* yr = &out[static_cast<size_t>(bi) * m];
    for (int mi = 0; mi < m; ++mi) {
      const double* wr = &wv[static_cast<size_t>(mi) * n];
      double acc = bv[mi];
      for (int ni = 0; ni < n; ++ni) acc += xr[ni] * wr[ni];
      yr[mi] = acc;
    }
  }
  const int xid = x.id, wid = w.id, bid = b.id;
  return t.apply(B, m, std::move(out), [xid, wid, bid, B, n, m](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& xv2 = tp.val(xid);
    const auto& wv2 = tp.val(wid);
    auto& gx = tp.grad(xid);
    auto& gw = tp.grad(wid);
    auto& gb = tp.grad(bid);
    for (int bi = 0; bi < B; ++bi) {
      const double* gr = &g[static_cast<size_t>(bi) * m];
      const double* xr = &xv2[static_cast<size_t>(bi) * n];
      double* gxr = &gx[static_cast<size_t>(bi) * n];
      for (int mi = 0; mi < m; ++mi) {
        const double gm = gr[mi];
        if (gm == 0.0) continue;
        const double* wr = &wv2[static_cast<size_t>(mi) * n];
        double* gwr = &gw[static_cast<size_t>(mi) * n];
        gb[mi] += gm;
        for (int ni = 0; ni < n; ++ni) {
          gxr[ni] += gm * wr[ni];
          gwr[ni] += gm * xr[ni];
        }
      }
    }
  });
}

// Bias-free variant: y = X * W^T.
inline Ref matmul_t(const Ref& x, const Ref& w) {
  if (x.cols != w.cols) throw DimensionError("matmul_t: input width does not match weight fan-in");
  Tape& t = *x.tape;
  const auto& xv = t.val(x.id);
  const auto& wv = t.val(w.id);
  const int B = x.rows, n = x.cols, m = w.rows;
  std::vector<double> out(static_cast<size_t>(B) * m);
  for (int bi = 0; bi < B; ++bi) {
    const double* xr = &xv[static_cast<size_t>(bi) * n];
    double* yr = &out[static_cast<size_t>(bi) * m];
    for (int mi = 0; mi < m; ++mi) {
      const double* wr = &wv[static_cast<size_t>(mi) * n];
      double acc = 0.0;
      for (int ni = 0; ni < n; ++ni) acc += xr[ni] * wr[ni];
      yr[mi] = acc;
    }
  }
  const int xid = x.id, wid = w.id;
  return t.apply(B, m, std::move(out), [xid, wid, B, n, m](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& xv2 = tp.val(xid);
    const auto& wv2 = tp.val(wid);
    auto& gx = tp.grad(xid);
    auto& gw = tp.grad(wid);
    for (int bi = 0; bi < B; ++bi) {
      const double* gr = &g[static_cast<size_t>(bi) * m];
      const double* xr = &xv2[static_cast<size_t>(bi) * n];
      double* gxr = &gx[static_cast<size_t>(bi) * n];
      for (int mi = 0; mi < m; ++mi) {
        const double gm = gr[mi];
        if (gm == 0.0) continue;
        const double* wr = &wv2[static_cast<size_t>(mi) * n];
        double* gwr = &gw[static_cast<size_t>(mi) * n];
        for (int ni = 0; ni < n; ++ni) {
          gxr[ni] += gm * wr[ni];
          gwr[ni] += gm * xr[ni];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Ref concat_cols(const std::vector<Ref>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: empty input");
  Tape& t = *parts[0].tape;
  const int B = parts[0].rows;
  int total = 0;
  for (const auto& p : parts) {
    if (p.rows != B) throw DimensionError("concat_cols: row count mismatch");
    total += p.cols;
  }
  std::vector<double> out(static_cast<size_t>(B) * total);
  int off = 0;
  std::vector<int> ids, widths, offsets;
  for (const auto& p : parts) {
    const auto& pv = t.val(p.id);
    for (int b = 0; b < B; ++b)
      std::copy(pv.begin() + static_cast<size_t>(b) * p.cols,
                pv.begin() + static_cast<size_t>(b + 1) * p.cols,
                out.begin() + static_cast<size_t>(b) * total + off);
    ids.push_back(p.id);
    widths.push_back(p.cols);
    offsets.push_back(off);
    off += p.cols;
  }
  return t.apply(B, total, std::move(out),
                 [ids, widths, offsets, B, total](Tape& tp, int self) {
                   const auto& g = tp.grad(self);
                   for (size_t k = 0; k < ids.size(); ++k) {
                     auto& gp = tp.grad(ids[k]);
                     const int w = widths[k], o = offsets[k];
                     for (int b = 0; b < B; ++b)
                       for (int j = 0; j < w; ++j)
                         gp[static_cast<size_t>(b) * w + j] +=
                             g[static_cast<size_t>(b) * total + o + j];
                   }
                 });
}

inline Ref slice_cols(const Ref& x, int c0, int c1) {
  if (c0 < 0 || c1 > x.cols || c0 >= c1) throw DimensionError("slice_cols: bad range");
  Tape& t = *x.tape;
  const auto& xv = t.val(x.id);
  const int B = x.rows, n = x.cols, w = c1 - c0;
  std::vector<double> out(static_cast<size_t>(B) * w);
  for (int b = 0; b < B; ++b)
    std::copy(xv.begin() + static_cast<size_t>(b) * n + c0,
              xv.begin() + static_cast<size_t>(b) * n + c1,
              out.begin() + static_cast<size_t>(b) * w);
  const int xid = x.id;
  return t.apply(B, w, std::move(out), [xid, B, n, w, c0](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(xid);
    for (int b = 0; b < B; ++b)
      for (int j = 0; j < w; ++j)
        gx[static_cast<size_t>(b) * n + c0 + j] += g[static_cast<size_t>(b) * w + j];
  });
}

inline Ref slice_rows(const Ref& x, int r0, int r1) {
  if (r0 < 0 || r1 > x.rows || r0 >= r1) throw DimensionError("slice_rows: bad range");
  Tape& t = *x.tape;
  const auto& xv = t.val(x.id);
  const int n = x.cols, B = r1 - r0;
  std::vector<double> out(xv.begin() + static_cast<size_t>(r0) * n,
                          xv.begin() + static_cast<size_t>(r1) * n);
  const int xid = x.id;
  return t.apply(B, n, std::move(out), [xid, r0, B, n](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(xid);
    for (int b = 0; b < B; ++b)
      for (int j = 0; j < n; ++j)
        gx[static_cast<size_t>(b + r0) * n + j] += g[static_cast<size_t>(b) * n + j];
  });
}

// Row lookup: out[b] = table[idx[b]].  Gradient scatter-adds into the table.
inline Ref embed_rows(const Ref& table, const std::vector<int>& idx) {
  Tape& t = *table.tape;
  const auto& tv = t.val(table.id);
  const int E = table.cols, B = static_cast<int>(idx.size());
  std::vector<double> out(static_cast<size_t>(B) * E);
  for (int b = 0; b < B; ++b) {
    if (idx[b] < 0 || idx[b] >= table.rows) throw DimensionError("embed_rows: index out of range");
    std::copy(tv.begin() + static_cast<size_t>(idx[b]) * E,
              tv.begin() + static_cast<size_t>(idx[b] + 1) * E,
              out.begin() + static_cast<size_t>(b) * E);
  }
  const int tid = table.id;
  auto ic = idx;
  return t.apply(B, E, std::move(out), [tid, ic, E](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gt = tp.grad(tid);
    for (size_t b = 0; b < ic.size(); ++b)
      for (int j = 0; j < E; ++j)
        gt[static_cast<size_t>(ic[b]) * E + j] += g[b * E + j];
  });
}

// Per-row gather: out[b, 0] = x[b, idx[b]].
inline Ref gather_col_per_row(const Ref& x, const std::vector<int>& idx) {
  if (static_cast<int>(idx.size()) != x.rows)
    throw DimensionError("gather_col_per_row: index count mismatch");
  Tape& t = *x.tape;
  const auto& xv = t.val(x.id);
  const int B = x.rows, n = x.cols;
  std::vector<double> out(B);
  for (int b = 0; b < B; ++b) {
    if (idx[b] < 0 || idx[b] >= n) throw DimensionError("gather_col_per_row: index out of range");
    out[b] = xv[static_cast<size_t>(b) * n + idx[b]];
  }
  const int xid = x.id;
  auto ic = idx;
  return t.apply(B, 1, std::move(out), [xid, ic, n](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(xid);
    for (size_t b = 0; b < ic.size(); ++b) gx[b * n + ic[b]] += g[b];
  });
}

// ---------------------------------------------------------------------------
// Mixing-network primitives
// ---------------------------------------------------------------------------

// out[b, e] = sum_i wflat[b, e*n + i] * v[b, i].   wflat: [B x (k*n)], v: [B x n].
inline Ref rowwise_weighted_sum(const Ref& wflat, const Ref& v, int k) {
  if (wflat.rows != v.rows) throw DimensionError("rowwise_weighted_sum: row mismatch");
  const int n = v.cols;
  if (wflat.cols != k * n) throw DimensionError("rowwise_weighted_sum: width mismatch");
  Tape& t = *wflat.tape;
  const auto& wv = t.val(wflat.id);
  const auto& vv = t.val(v.id);
  const int B = v.rows;
  std::vector<double> out(static_cast<size_t>(B) * k, 0.0);
  for (int b = 0; b < B; ++b)
    for (int e = 0; e < k; ++e) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i)
        acc += wv[(static_cast<size_t>(b) * k + e) * n + i] * vv[static_cast<size_t>(b) * n + i];
      out[static_cast<size_t>(b) * k + e] = acc;
    }
  const int wid = wflat.id, vid = v.id;
  return t.apply(B, k, std::move(out), [wid, vid, B, k, n](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& wv2 = tp.val(wid);
    const auto& vv2 = tp.val(vid);
    auto& gw = tp.grad(wid);
    auto& gv = tp.grad(vid);
    for (int b = 0; b < B; ++b)
      for (int e = 0; e < k; ++e) {
        const double ge = g[static_cast<size_t>(b) * k + e];
        if (ge == 0.0) continue;
        for (int i = 0; i < n; ++i) {
          gw[(static_cast<size_t>(b) * k + e) * n + i] += ge * vv2[static_cast<size_t>(b) * n + i];
          gv[static_cast<size_t>(b) * n + i] += ge * wv2[(static_cast<size_t>(b) * k + e) * n + i];
        }
      }
  });
}

// out[b, 0] = sum_j a[b, j] * b[b, j].
inline Ref rowwise_dot(const Ref& a, const Ref& b) {
  detail::check_same_shape(a, b, "rowwise_dot");
  Tape& t = *a.tape;
  const auto& av = t.val(a.id);
  const auto& bv = t.val(b.id);
  const int B = a.rows, n = a.cols;
  std::vector<double> out(B, 0.0);
  for (int bi = 0; bi < B; ++bi) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j)
      acc += av[static_cast<size_t>(bi) * n + j] * bv[static_cast<size_t>(bi) * n + j];
    out[bi] = acc;
  }
  const int aid = a.id, bid = b.id;
  return t.apply(B, 1, std::move(out), [aid, bid, B, n](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& av2 = tp.val(aid);
    const auto& bv2 = tp.val(bid);
    auto& ga = tp.grad(aid);
    auto& gb = tp.grad(bid);
    for (int bi = 0; bi < B; ++bi)
      for (int j = 0; j < n; ++j) {
        ga[static_cast<size_t>(bi) * n + j] += g[bi] * bv2[static_cast<size_t>(bi) * n + j];
        gb[static_cast<size_t>(bi) * n + j] += g[bi] * av2[static_cast<size_t>(bi) * n + j];
      }
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Ref sum_all(const Ref& x) {
  Tape& t = *x.tape;
  const auto& xv = t.val(x.id);
  double acc = 0.0;
  for (double v : xv) acc += v;
  const int xid = x.id;
  return t.apply(1, 1, {acc}, [xid](Tape& tp, int self) {
    const double g = tp.grad(self)[0];
    auto& gx = tp.grad(xid);
    for (auto& v : gx) v += g;
  });
}

inline Ref mean_all(const Ref& x) {
  Tape& t = *x.tape;
  const auto& xv = t.val(x.id);
  const double inv = 1.0 / static_cast<double>(xv.size());
  double acc = 0.0;
  for (double v : xv) acc += v;
  const int xid = x.id;
  return t.apply(1, 1, {acc * inv}, [xid, inv](Tape& tp, int self) {
    const double g = tp.grad(self)[0] * inv;
    auto& gx = tp.grad(xid);
    for (auto& v : gx) v += g;
  });
}

inline Ref rowwise_sum(const Ref& x) {
  Tape& t = *x.tape;
  const auto& xv = t.val(x.id);
  const int B = x.rows, n = x.cols;
  std::vector<double> out(B, 0.0);
  for (int b = 0; b < B; ++b) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += xv[static_cast<size_t>(b) * n + j];
    out[b] = acc;
  }
  const int xid = x.id;
  return t.apply(B, 1, std::move(out), [xid, B, n](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(xid);
    for (int b = 0; b < B; ++b)
      for (int j = 0; j < n; ++j) gx[static_cast<size_t>(b) * n + j] += g[b];
  });
}

// Row max; ties break to the lowest index.
inline Ref rowwise_max(const Ref& x) {
  Tape& t = *x.tape;
  const auto& xv = t.val(x.id);
  const int B = x.rows, n = x.cols;
  std::vector<double> out(B);
  std::vector<int> arg(B);
  for (int b = 0; b < B; ++b) {
    int best = 0;
    double bv = xv[static_cast<size_t>(b) * n];
    for (int j = 1; j < n; ++j) {
      const double v = xv[static_cast<size_t>(b) * n + j];
      if (v > bv) {
        bv = v;
        best = j;
      }
    }
    out[b] = bv;
    arg[b] = best;
  }
  const int xid = x.id;
  return t.apply(B, 1, std::move(out), [xid, arg, n](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(xid);
    for (size_t b = 0; b < arg.size(); ++b) gx[b * n + arg[b]] += g[b];
  });
}

// Row-wise log-softmax, numerically stable.
inline Ref log_softmax_rows(const Ref& x) {
  Tape& t = *x.tape;
  const auto& xv = t.val(x.id);
  const int B = x.rows, n = x.cols;
  std::vector<double> out(static_cast<size_t>(B) * n);
  for (int b = 0; b < B; ++b) {
    const double* xr = &xv[static_cast<size_t>(b) * n];
    double m = xr[0];
    for (int j = 1; j < n; ++j) m = std::max(m, xr[j]);
    double lse = 0.0;
    for (int j = 0; j < n; ++j) lse += std::exp(xr[j] - m);
    lse = m + std::log(lse);
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(b) * n + j] = xr[j] - lse;
  }
  const int xid = x.id;
  return t.apply(B, n, std::move(out), [xid, B, n](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& y = tp.val(self);
    auto& gx = tp.grad(xid);
    for (int b = 0; b < B; ++b) {
      double gsum = 0.0;
      for (int j = 0; j < n; ++j) gsum += g[static_cast<size_t>(b) * n + j];
      for (int j = 0; j < n; ++j)
        gx[static_cast<size_t>(b) * n + j] +=
            g[static_cast<size_t>(b) * n + j] - std::exp(y[static_cast<size_t>(b) * n + j]) * gsum;
    }
  });
}

// Row-major reinterpretation; element count must be preserved.
inline Ref reshape(const Ref& x, int rows, int cols) {
  if (rows * cols != x.size()) throw DimensionError("reshape: element count mismatch");
  Tape& t = *x.tape;
  const int xid = x.id;
  return t.apply(rows, cols, t.val(x.id), [xid](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(xid);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

// Cut the graph: value copy with no gradient path.
inline Ref detach(const Ref& x) {
  Tape& t = *x.tape;
  return t.constant(x.rows, x.cols, t.val(x.id));
}

inline void check_finite(const Ref& x, const char* what) {
  const auto& v = x.tape->val(x.id);
  for (double d : v)
    if (!std::isfinite(d)) throw NumericError(std::string(what) + ": non-finite value");
}

// ---------------------------------------------------------------------------
// Parameter store and optimizer
// ---------------------------------------------------------------------------

// Named parameter collection with stable (creation) order; the order defines
// checkpoint layout, optimizer state alignment and hashing. Deque so that
// references handed out by add() survive later insertions.
struct ParamStore {
  std::deque<std::pair<std::string, Tensor>> items;

  Tensor& add(const std::string& name, int rows, int cols) {
    if (find(name)) throw ConfigError("duplicate parameter name: " + name);
    items.emplace_back(name, Tensor::zeros(rows, cols));
    return items.back().second;
  }

  Tensor& add_uniform(const std::string& name, int rows, int cols, RandomStream& rng,
                      double bound = 0.0) {
    if (find(name)) throw ConfigError("duplicate parameter name: " + name);
    items.emplace_back(name, Tensor::uniform(rows, cols, rng, bound));
    return items.back().second;
  }

  Tensor* find(const std::string& name) {
    for (auto& [k, v] : items)
      if (k == name) return &v;
    return nullptr;
  }
  const Tensor* find(const std::string& name) const {
    for (const auto& [k, v] : items)
      if (k == name) return &v;
    return nullptr;
  }

  Tensor& at(const std::string& name) {
    Tensor* t = find(name);
    if (!t) throw ConfigError("unknown parameter: " + name);
    return *t;
  }
  const Tensor& at(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw ConfigError("unknown parameter: " + name);
    return *t;
  }

  void zero_grads() {
    for (auto& [k, v] : items) v.zero_grad();
  }

  // Copies values; shapes must match item-for-item (used for target syncs).
  void copy_values_from(const ParamStore& other) {
    if (items.size() != other.items.size())
      throw DimensionError("copy_values_from: item count mismatch");
    for (size_t i = 0; i < items.size(); ++i) {
      if (items[i].second.rows != other.items[i].second.rows ||
          items[i].second.cols != other.items[i].second.cols)
        throw DimensionError("copy_values_from: shape mismatch at " + items[i].first);
      items[i].second.data = other.items[i].second.data;
    }
  }

  // FNV-1a over raw value bytes; read-only-contract checks in tests.
  std::uint64_t value_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, size_t len) {
      const unsigned char* c = static_cast<const unsigned char*>(p);
      for (size_t i = 0; i < len; ++i) {
        h ^= c[i];
        h *= 1099511628211ULL;
      }
    };
    for (const auto& [k, v] : items) {
      mix(k.data(), k.size());
      mix(v.data.data(), v.data.size() * sizeof(double));
    }
    return h;
  }
};

inline double global_grad_norm(const std::vector<ParamStore*>& groups) {
  double sq = 0.0;
  for (const ParamStore* g : groups)
    for (const auto& [k, t] : g->items)
      for (double v : t.grad) sq += v * v;
  return std::sqrt(sq);
}

// Scales all gradients so the global norm is at most max_norm; returns the
// pre-clip norm. Direction is preserved exactly.
inline double clip_grad_norm(const std::vector<ParamStore*>& groups, double max_norm) {
  const double norm = global_grad_norm(groups);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (ParamStore* g : groups)
      for (auto& [k, t] : g->items)
        for (auto& v : t.grad) v *= s;
  }
  return norm;
}

// Standard bias-corrected Adam over one or more parameter stores.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<ParamStore*> groups, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : groups_(std::move(groups)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (ParamStore* g : groups_)
      for (auto& [k, t] : g->items) {
        m_.push_back(std::vector<double>(t.data.size(), 0.0));
        v_.push_back(std::vector<double>(t.data.size(), 0.0));
      }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  int steps() const { return t_; }

  void step() {
    // fail before touching any parameter
    for (ParamStore* g : groups_)
      for (auto& [k, t] : g->items)
        for (double v : t.grad)
          if (!std::isfinite(v)) throw NumericError("adam: non-finite gradient in " + k);
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    size_t slot = 0;
    for (ParamStore* g : groups_)
      for (auto& [k, t] : g->items) {
        t.ensure_grad();
        auto& m = m_[slot];
        auto& v = v_[slot];
        ++slot;
        for (size_t i = 0; i < t.data.size(); ++i) {
          const double gi = t.grad[i];
          m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
          v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
          t.data[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
      }
  }

 private:
  std::vector<ParamStore*> groups_;
  double lr_ = 0.0, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace ices
