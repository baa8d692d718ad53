#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sam/tensor.hpp"

namespace sam::ad {

// Reverse-mode tape over a dynamic graph. Backward passes are themselves
// built out of tape primitives, so gradients are ordinary graph nodes and a
// second backward through them yields exact higher-order derivatives (the
// meta-gradient path relies on this).
template <class S>
class Tape;

template <class S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Shape& shape() const;
  const std::vector<S>& val() const;
  std::size_t size() const { return val().size(); }
  S scalar() const {
    if (val().size() != 1) throw ShapeError("scalar() on non-scalar var");
    return val()[0];
  }
};

template <class S>
class Tape {
 public:
  using Vjp = std::function<std::vector<int>(Tape&, int self, int gout)>;

  struct Node {
    Shape shape;
    std::vector<S> val;
    bool needs_grad = false;
    std::vector<int> inputs;
    Vjp vjp;  // empty for leaves/constants
  };

  // When set, every op output is scanned for NaN/Inf (debug mode).
  bool check_finite = false;

  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_[id]; }

  Var<S> leaf(const TensorT<S>& t, bool needs_grad = true) {
    return wrap(make(t.shape, t.v, needs_grad, {}, {}, "leaf"));
  }
  Var<S> constant(const TensorT<S>& t) { return leaf(t, false); }
  Var<S> constant(Shape shape, std::vector<S> v) {
    return wrap(make(std::move(shape), std::move(v), false, {}, {}, "const"));
  }
  Var<S> scalar_const(S x) { return constant({1}, {x}); }

  // Copy of a var's current values with the graph connection severed.
  Var<S> detach(Var<S> a) {
    return wrap(make(nodes_[a.id].shape, nodes_[a.id].val, false, {}, {}, "detach"));
  }

  void release() {
    released_ = true;
    nodes_.clear();
    nodes_.shrink_to_fit();
  }
  bool released() const { return released_; }

  // ---- elementwise -------------------------------------------------------

  Var<S> add(Var<S> a, Var<S> b) {
    return binary_ew("add", a, b, [](S x, S y) { return x + y; },
                     [](Tape& t, int, int, int g) { return std::pair(g, g); });
  }

  Var<S> sub(Var<S> a, Var<S> b) {
    return binary_ew("sub", a, b, [](S x, S y) { return x - y; },
                     [](Tape& t, int, int, int g) {
                       return std::pair(g, t.scale(t.wrap(g), S(-1)).id);
                     });
  }

  Var<S> mul(Var<S> a, Var<S> b) {
    return binary_ew("mul", a, b, [](S x, S y) { return x * y; },
                     [](Tape& t, int ia, int ib, int g) {
                       return std::pair(t.mul(t.wrap(g), t.wrap(ib)).id,
                                        t.mul(t.wrap(g), t.wrap(ia)).id);
                     });
  }

  Var<S> div(Var<S> a, Var<S> b) {
    return binary_ew("div", a, b, [](S x, S y) { return x / y; },
                     [](Tape& t, int ia, int ib, int g) {
                       Var<S> gv = t.wrap(g), av = t.wrap(ia), bv = t.wrap(ib);
                       Var<S> ga = t.div(gv, bv);
                       Var<S> gb = t.scale(t.div(t.mul(gv, av), t.mul(bv, bv)), S(-1));
                       return std::pair(ga.id, gb.id);
                     });
  }

  Var<S> scale(Var<S> a, S c) {
    std::vector<S> out = nodes_[a.id].val;
    for (S& x : out) x *= c;
    return wrap(make(nodes_[a.id].shape, std::move(out), nodes_[a.id].needs_grad, {a.id},
                     [c](Tape& t, int, int g) {
                       return std::vector<int>{t.scale(t.wrap(g), c).id};
                     },
                     "scale"));
  }

  Var<S> add_const(Var<S> a, S c) {
    std::vector<S> out = nodes_[a.id].val;
    for (S& x : out) x += c;
    return wrap(make(nodes_[a.id].shape, std::move(out), nodes_[a.id].needs_grad, {a.id},
                     [](Tape&, int, int g) { return std::vector<int>{g}; }, "add_const"));
  }

  Var<S> relu(Var<S> a) {
    std::vector<S> out = nodes_[a.id].val;
    for (S& x : out) x = x > S(0) ? x : S(0);
    int ia = a.id;
    return wrap(make(nodes_[a.id].shape, std::move(out), nodes_[a.id].needs_grad, {a.id},
                     [ia](Tape& t, int, int g) {
                       // The 0/1 mask is piecewise constant; taped as data.
                       std::vector<S> m(t.nodes_[ia].val.size());
                       for (std::size_t i = 0; i < m.size(); ++i)
                         m[i] = t.nodes_[ia].val[i] > S(0) ? S(1) : S(0);
                       Var<S> mask = t.constant(t.nodes_[ia].shape, std::move(m));
                       return std::vector<int>{t.mul(t.wrap(g), mask).id};
                     },
                     "relu"));
  }

  Var<S> sigmoid(Var<S> a) {
    std::vector<S> out = nodes_[a.id].val;
    for (S& x : out) x = S(1) / (S(1) + std::exp(-x));
    return wrap(make(nodes_[a.id].shape, std::move(out), nodes_[a.id].needs_grad, {a.id},
                     [](Tape& t, int self, int g) {
                       Var<S> s = t.wrap(self);
                       Var<S> one = t.constant(t.nodes_[self].shape,
                                               std::vector<S>(t.nodes_[self].val.size(), S(1)));
                       return std::vector<int>{t.mul(t.wrap(g), t.mul(s, t.sub(one, s))).id};
                     },
                     "sigmoid"));
  }

  Var<S> exp(Var<S> a) {
    std::vector<S> out = nodes_[a.id].val;
    for (S& x : out) x = std::exp(x);
    return wrap(make(nodes_[a.id].shape, std::move(out), nodes_[a.id].needs_grad, {a.id},
                     [](Tape& t, int self, int g) {
                       return std::vector<int>{t.mul(t.wrap(g), t.wrap(self)).id};
                     },
                     "exp"));
  }

  Var<S> log(Var<S> a) {
    std::vector<S> out = nodes_[a.id].val;
    for (S& x : out) x = std::log(x);
    return wrap(make(nodes_[a.id].shape, std::move(out), nodes_[a.id].needs_grad, {a.id},
                     [](Tape& t, int self, int g) {
                       int ia = t.nodes_[self].inputs[0];
                       return std::vector<int>{t.div(t.wrap(g), t.wrap(ia)).id};
                     },
                     "log"));
  }

  Var<S> sqrt(Var<S> a) {
    std::vector<S> out = nodes_[a.id].val;
    for (S& x : out) x = std::sqrt(x);
    return wrap(make(nodes_[a.id].shape, std::move(out), nodes_[a.id].needs_grad, {a.id},
                     [](Tape& t, int self, int g) {
                       return std::vector<int>{
                           t.div(t.scale(t.wrap(g), S(0.5)), t.wrap(self)).id};
                     },
                     "sqrt"));
  }

  // ---- linear algebra ----------------------------------------------------

  // C = op(A) * op(B), 2-D only. trans flags select the transposed operand.
  Var<S> matmul(Var<S> a, Var<S> b, bool ta = false, bool tb = false) {
    const Shape& sa = nodes_[a.id].shape;
    const Shape& sb = nodes_[b.id].shape;
    if (sa.size() != 2 || sb.size() != 2)
      throw ShapeError("matmul expects 2-D operands, got " + shape_str(sa) + " and " +
                       shape_str(sb));
    int m = ta ? sa[1] : sa[0];
    int k = ta ? sa[0] : sa[1];
    int k2 = tb ? sb[1] : sb[0];
    int n = tb ? sb[0] : sb[1];
    if (k != k2)
      throw ShapeError("matmul inner dimensions disagree: " + shape_str(sa) +
                       (ta ? "^T" : "") + " * " + shape_str(sb) + (tb ? "^T" : ""));
    std::vector<S> out(static_cast<std::size_t>(m) * n);
    {
      using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
      Eigen::Map<const Mat> A(nodes_[a.id].val.data(), sa[0], sa[1]);
      Eigen::Map<const Mat> B(nodes_[b.id].val.data(), sb[0], sb[1]);
      Eigen::Map<Mat> C(out.data(), m, n);
      if (!ta && !tb) C.noalias() = A * B;
      else if (ta && !tb) C.noalias() = A.transpose() * B;
      else if (!ta && tb) C.noalias() = A * B.transpose();
      else C.noalias() = A.transpose() * B.transpose();
    }
    int ia = a.id, ib = b.id;
    return wrap(make({m, n}, std::move(out),
                     nodes_[a.id].needs_grad || nodes_[b.id].needs_grad, {a.id, b.id},
                     [ta, tb, ia, ib](Tape& t, int, int g) {
                       Var<S> gv = t.wrap(g), av = t.wrap(ia), bv = t.wrap(ib);
                       Var<S> da = ta ? t.matmul(bv, gv, tb, true)
                                      : t.matmul(gv, bv, false, !tb);
                       Var<S> db = tb ? t.matmul(gv, av, true, ta)
                                      : t.matmul(av, gv, !ta, false);
                       return std::vector<int>{da.id, db.id};
                     },
                     "matmul"));
  }

  // ---- broadcasts and reductions (2-D) -----------------------------------

  // [n] -> [m, n], rows all equal to v.
  Var<S> broadcast_row(Var<S> v, int m) {
    const Shape& sv = nodes_[v.id].shape;
    if (sv.size() != 1) throw ShapeError("broadcast_row expects a vector");
    int n = sv[0];
    std::vector<S> out(static_cast<std::size_t>(m) * n);
    for (int i = 0; i < m; ++i)
      std::memcpy(out.data() + static_cast<std::size_t>(i) * n, nodes_[v.id].val.data(),
                  sizeof(S) * n);
    return wrap(make({m, n}, std::move(out), nodes_[v.id].needs_grad, {v.id},
                     [](Tape& t, int, int g) {
                       return std::vector<int>{t.sum_rows(t.wrap(g)).id};
                     },
                     "broadcast_row"));
  }

  // [m] -> [m, n], columns all equal to v.
  Var<S> broadcast_col(Var<S> v, int n) {
    const Shape& sv = nodes_[v.id].shape;
    if (sv.size() != 1) throw ShapeError("broadcast_col expects a vector");
    int m = sv[0];
    std::vector<S> out(static_cast<std::size_t>(m) * n);
    for (int i = 0; i < m; ++i)
      std::fill_n(out.data() + static_cast<std::size_t>(i) * n, n, nodes_[v.id].val[i]);
    return wrap(make({m, n}, std::move(out), nodes_[v.id].needs_grad, {v.id},
                     [](Tape& t, int, int g) {
                       return std::vector<int>{t.sum_cols(t.wrap(g)).id};
                     },
                     "broadcast_col"));
  }

  // [m, n] -> [n] (sum over rows).
  Var<S> sum_rows(Var<S> a) {
    const Shape& sa = nodes_[a.id].shape;
    if (sa.size() != 2) throw ShapeError("sum_rows expects a matrix");
    int m = sa[0], n = sa[1];
    std::vector<S> out(n, S(0));
    const S* p = nodes_[a.id].val.data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out[j] += p[static_cast<std::size_t>(i) * n + j];
    return wrap(make({n}, std::move(out), nodes_[a.id].needs_grad, {a.id},
                     [m](Tape& t, int, int g) {
                       return std::vector<int>{t.broadcast_row(t.wrap(g), m).id};
                     },
                     "sum_rows"));
  }

  // [m, n] -> [m] (sum over columns).
  Var<S> sum_cols(Var<S> a) {
    const Shape& sa = nodes_[a.id].shape;
    if (sa.size() != 2) throw ShapeError("sum_cols expects a matrix");
    int m = sa[0], n = sa[1];
    std::vector<S> out(m, S(0));
    const S* p = nodes_[a.id].val.data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out[i] += p[static_cast<std::size_t>(i) * n + j];
    return wrap(make({m}, std::move(out), nodes_[a.id].needs_grad, {a.id},
                     [n](Tape& t, int, int g) {
                       return std::vector<int>{t.broadcast_col(t.wrap(g), n).id};
                     },
                     "sum_cols"));
  }

  Var<S> sum_all(Var<S> a) {
    S acc = 0;
    for (S x : nodes_[a.id].val) acc += x;
    Shape in_shape = nodes_[a.id].shape;
    return wrap(make({1}, {acc}, nodes_[a.id].needs_grad, {a.id},
                     [in_shape](Tape& t, int, int g) {
                       return std::vector<int>{t.broadcast_full(t.wrap(g), in_shape).id};
                     },
                     "sum_all"));
  }

  // scalar -> arbitrary shape, all entries equal.
  Var<S> broadcast_full(Var<S> a, Shape shape) {
    if (nodes_[a.id].val.size() != 1) throw ShapeError("broadcast_full expects a scalar");
    std::vector<S> out(numel(shape), nodes_[a.id].val[0]);
    return wrap(make(std::move(shape), std::move(out), nodes_[a.id].needs_grad, {a.id},
                     [](Tape& t, int, int g) {
                       return std::vector<int>{t.sum_all(t.wrap(g)).id};
                     },
                     "broadcast_full"));
  }

  Var<S> reshape(Var<S> a, Shape shape) {
    if (numel(shape) != nodes_[a.id].val.size())
      throw ShapeError("reshape from " + shape_str(nodes_[a.id].shape) + " to " +
                       shape_str(shape) + " changes element count");
    Shape in_shape = nodes_[a.id].shape;
    return wrap(make(std::move(shape), nodes_[a.id].val, nodes_[a.id].needs_grad, {a.id},
                     [in_shape](Tape& t, int, int g) {
                       return std::vector<int>{t.reshape(t.wrap(g), in_shape).id};
                     },
                     "reshape"));
  }

  // ---- column slicing / concatenation ------------------------------------

  Var<S> slice_cols(Var<S> a, int off, int n) {
    const Shape& sa = nodes_[a.id].shape;
    if (sa.size() != 2 || off < 0 || off + n > sa[1])
      throw ShapeError("slice_cols out of range");
    int m = sa[0], total = sa[1];
    std::vector<S> out(static_cast<std::size_t>(m) * n);
    const S* p = nodes_[a.id].val.data();
    for (int i = 0; i < m; ++i)
      std::memcpy(out.data() + static_cast<std::size_t>(i) * n,
                  p + static_cast<std::size_t>(i) * total + off, sizeof(S) * n);
    return wrap(make({m, n}, std::move(out), nodes_[a.id].needs_grad, {a.id},
                     [off, total](Tape& t, int, int g) {
                       return std::vector<int>{t.pad_cols(t.wrap(g), off, total).id};
                     },
                     "slice_cols"));
  }

  // Embed [m, n] into [m, total] at column offset `off`, zeros elsewhere.
  Var<S> pad_cols(Var<S> a, int off, int total) {
    const Shape& sa = nodes_[a.id].shape;
    if (sa.size() != 2 || off < 0 || off + sa[1] > total)
      throw ShapeError("pad_cols out of range");
    int m = sa[0], n = sa[1];
    std::vector<S> out(static_cast<std::size_t>(m) * total, S(0));
    const S* p = nodes_[a.id].val.data();
    for (int i = 0; i < m; ++i)
      std::memcpy(out.data() + static_cast<std::size_t>(i) * total + off,
                  p + static_cast<std::size_t>(i) * n, sizeof(S) * n);
    return wrap(make({m, total}, std::move(out), nodes_[a.id].needs_grad, {a.id},
                     [off, n](Tape& t, int, int g) {
                       return std::vector<int>{t.slice_cols(t.wrap(g), off, n).id};
                     },
                     "pad_cols"));
  }

  Var<S> concat_cols(const std::vector<Var<S>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols of nothing");
    int m = nodes_[parts[0].id].shape[0];
    int total = 0;
    for (auto p : parts) {
      const Shape& sp = nodes_[p.id].shape;
      if (sp.size() != 2 || sp[0] != m) throw ShapeError("concat_cols row mismatch");
      total += sp[1];
    }
    Var<S> acc;
    int off = 0;
    for (auto p : parts) {
      Var<S> padded = pad_cols(p, off, total);
      acc = acc.valid() ? add(acc, padded) : padded;
      off += nodes_[p.id].shape[1];
    }
    return acc;
  }

  // ---- spatial ops (NCHW) -------------------------------------------------

  // Same-padded stride-1 convolution; x [b,ci,h,w], w [co,ci,k,k], k odd.
  Var<S> conv2d(Var<S> x, Var<S> w) {
    const Shape& sx = nodes_[x.id].shape;
    const Shape& sw = nodes_[w.id].shape;
    check_conv_shapes(sx, sw);
    int b = sx[0], ci = sx[1], h = sx[2], wd = sx[3];
    int co = sw[0], k = sw[2], pad = k / 2;
    std::vector<S> out(static_cast<std::size_t>(b) * co * h * wd, S(0));
    conv_forward(nodes_[x.id].val.data(), nodes_[w.id].val.data(), out.data(), b, ci, h,
                 wd, co, k, pad);
    int ix = x.id, iw = w.id;
    return wrap(make({b, co, h, wd}, std::move(out),
                     nodes_[x.id].needs_grad || nodes_[w.id].needs_grad, {x.id, w.id},
                     [ix, iw](Tape& t, int, int g) {
                       Var<S> gv = t.wrap(g);
                       return std::vector<int>{t.conv2d_dinput(gv, t.wrap(iw)).id,
                                               t.conv2d_dweight(t.wrap(ix), gv).id};
                     },
                     "conv2d"));
  }

  // Adjoint of conv2d in its input: g [b,co,h,w], w [co,ci,k,k] -> [b,ci,h,w].
  Var<S> conv2d_dinput(Var<S> g, Var<S> w) {
    const Shape& sg = nodes_[g.id].shape;
    const Shape& sw = nodes_[w.id].shape;
    if (sg.size() != 4 || sw.size() != 4 || sg[1] != sw[0])
      throw ShapeError("conv2d_dinput shape mismatch");
    int b = sg[0], co = sg[1], h = sg[2], wd = sg[3];
    int ci = sw[1], k = sw[2], pad = k / 2;
    std::vector<S> out(static_cast<std::size_t>(b) * ci * h * wd, S(0));
    // dx[n,ci,a,e] = sum_{co,u,v} g[n,co,a+pad-u, e+pad-v] * w[co,ci,u,v]
    const S* gp = nodes_[g.id].val.data();
    const S* wp = nodes_[w.id].val.data();
    for (int n = 0; n < b; ++n)
      for (int oc = 0; oc < co; ++oc)
        for (int c = 0; c < ci; ++c)
          for (int u = 0; u < k; ++u)
            for (int v = 0; v < k; ++v) {
              S wv = wp[((static_cast<std::size_t>(oc) * ci + c) * k + u) * k + v];
              if (wv == S(0)) continue;
              for (int a = 0; a < h; ++a) {
                int gi = a + pad - u;
                if (gi < 0 || gi >= h) continue;
                const S* grow =
                    gp + ((static_cast<std::size_t>(n) * co + oc) * h + gi) * wd;
                S* orow = out.data() +
                          ((static_cast<std::size_t>(n) * ci + c) * h + a) * wd;
                int lo = std::max(0, v - pad);
                int hi = std::min(wd, wd + v - pad);
                for (int e = lo; e < hi; ++e) orow[e] += grow[e + pad - v] * wv;
              }
            }
    int ig = g.id, iw = w.id;
    return wrap(make({b, ci, h, wd}, std::move(out),
                     nodes_[g.id].needs_grad || nodes_[w.id].needs_grad, {g.id, w.id},
                     [ig, iw](Tape& t, int, int u) {
                       Var<S> uv = t.wrap(u);
                       return std::vector<int>{t.conv2d(uv, t.wrap(iw)).id,
                                               t.conv2d_dweight(uv, t.wrap(ig)).id};
                     },
                     "conv2d_dinput"));
  }

  // Adjoint of conv2d in its weights: x [b,ci,h,w], g [b,co,h,w] -> [co,ci,k,k].
  // The kernel size cannot be inferred, so it is passed explicitly.
  Var<S> conv2d_dweight(Var<S> x, Var<S> g, int k = 3) {
    const Shape& sx = nodes_[x.id].shape;
    const Shape& sg = nodes_[g.id].shape;
    if (sx.size() != 4 || sg.size() != 4 || sx[0] != sg[0] || sx[2] != sg[2] ||
        sx[3] != sg[3])
      throw ShapeError("conv2d_dweight shape mismatch");
    int b = sx[0], ci = sx[1], h = sx[2], wd = sx[3];
    int co = sg[1], pad = k / 2;
    std::vector<S> out(static_cast<std::size_t>(co) * ci * k * k, S(0));
    const S* xp = nodes_[x.id].val.data();
    const S* gp = nodes_[g.id].val.data();
    for (int n = 0; n < b; ++n)
      for (int oc = 0; oc < co; ++oc)
        for (int c = 0; c < ci; ++c)
          for (int u = 0; u < k; ++u)
            for (int v = 0; v < k; ++v) {
              S acc = 0;
              for (int i = 0; i < h; ++i) {
                int xi = i + u - pad;
                if (xi < 0 || xi >= h) continue;
                const S* xrow =
                    xp + ((static_cast<std::size_t>(n) * ci + c) * h + xi) * wd;
                const S* grow =
                    gp + ((static_cast<std::size_t>(n) * co + oc) * h + i) * wd;
                int lo = std::max(0, pad - v);
                int hi = std::min(wd, wd + pad - v);
                for (int j = lo; j < hi; ++j) acc += grow[j] * xrow[j + v - pad];
              }
              out[((static_cast<std::size_t>(oc) * ci + c) * k + u) * k + v] += acc;
            }
    int ix = x.id, ig = g.id;
    return wrap(make({co, ci, k, k}, std::move(out),
                     nodes_[x.id].needs_grad || nodes_[g.id].needs_grad, {x.id, g.id},
                     [ix, ig](Tape& t, int, int u) {
                       Var<S> uv = t.wrap(u);
                       return std::vector<int>{t.conv2d_dinput(t.wrap(ig), uv).id,
                                               t.conv2d(t.wrap(ix), uv).id};
                     },
                     "conv2d_dweight"));
  }

  // 2x2 stride-2 max pooling, floor semantics for odd extents.
  Var<S> maxpool2(Var<S> x) {
    const Shape& sx = nodes_[x.id].shape;
    if (sx.size() != 4) throw ShapeError("maxpool2 expects NCHW");
    int b = sx[0], c = sx[1], h = sx[2], w = sx[3];
    int oh = h / 2, ow = w / 2;
    if (oh < 1 || ow < 1) throw ShapeError("maxpool2 input too small");
    auto idx = std::make_shared<std::vector<int>>(
        static_cast<std::size_t>(b) * c * oh * ow);
    std::vector<S> out(idx->size());
    const S* p = nodes_[x.id].val.data();
    std::size_t o = 0;
    for (int n = 0; n < b; ++n)
      for (int ch = 0; ch < c; ++ch) {
        std::size_t base = (static_cast<std::size_t>(n) * c + ch) * h * w;
        for (int i = 0; i < oh; ++i)
          for (int j = 0; j < ow; ++j) {
            std::size_t p00 = base + static_cast<std::size_t>(2 * i) * w + 2 * j;
            std::size_t best = p00;
            if (p[p00 + 1] > p[best]) best = p00 + 1;
            if (p[p00 + w] > p[best]) best = p00 + w;
            if (p[p00 + w + 1] > p[best]) best = p00 + w + 1;
            (*idx)[o] = static_cast<int>(best);
            out[o++] = p[best];
          }
      }
    Shape in_shape = sx;
    return wrap(make({b, c, oh, ow}, std::move(out), nodes_[x.id].needs_grad, {x.id},
                     [idx, in_shape](Tape& t, int, int g) {
                       return std::vector<int>{t.scatter_add(t.wrap(g), idx, in_shape).id};
                     },
                     "maxpool2"));
  }

  // out[idx[p]] += src[p]; the fixed index list makes this linear.
  Var<S> scatter_add(Var<S> src, std::shared_ptr<std::vector<int>> idx, Shape out_shape) {
    if (nodes_[src.id].val.size() != idx->size())
      throw ShapeError("scatter_add index count mismatch");
    std::vector<S> out(numel(out_shape), S(0));
    const S* p = nodes_[src.id].val.data();
    for (std::size_t i = 0; i < idx->size(); ++i) out[(*idx)[i]] += p[i];
    Shape src_shape = nodes_[src.id].shape;
    return wrap(make(std::move(out_shape), std::move(out), nodes_[src.id].needs_grad,
                     {src.id},
                     [idx, src_shape](Tape& t, int, int g) {
                       return std::vector<int>{t.gather(t.wrap(g), idx, src_shape).id};
                     },
                     "scatter_add"));
  }

  Var<S> gather(Var<S> src, std::shared_ptr<std::vector<int>> idx, Shape out_shape) {
    if (numel(out_shape) != idx->size()) throw ShapeError("gather index count mismatch");
    std::vector<S> out(idx->size());
    const S* p = nodes_[src.id].val.data();
    for (std::size_t i = 0; i < idx->size(); ++i) out[i] = p[(*idx)[i]];
    Shape src_shape = nodes_[src.id].shape;
    return wrap(make(std::move(out_shape), std::move(out), nodes_[src.id].needs_grad,
                     {src.id},
                     [idx, src_shape](Tape& t, int, int g) {
                       return std::vector<int>{t.scatter_add(t.wrap(g), idx, src_shape).id};
                     },
                     "gather"));
  }

  // [b,c,h,w] -> [b,c], summed over the spatial extent.
  Var<S> sum_hw(Var<S> x) {
    const Shape& sx = nodes_[x.id].shape;
    if (sx.size() != 4) throw ShapeError("sum_hw expects NCHW");
    int b = sx[0], c = sx[1], h = sx[2], w = sx[3];
    std::vector<S> out(static_cast<std::size_t>(b) * c, S(0));
    const S* p = nodes_[x.id].val.data();
    for (std::size_t bc = 0; bc < out.size(); ++bc) {
      const S* q = p + bc * h * w;
      S acc = 0;
      for (int i = 0; i < h * w; ++i) acc += q[i];
      out[bc] = acc;
    }
    return wrap(make({b, c}, std::move(out), nodes_[x.id].needs_grad, {x.id},
                     [h, w](Tape& t, int, int g) {
                       return std::vector<int>{t.broadcast_hw(t.wrap(g), h, w).id};
                     },
                     "sum_hw"));
  }

  // [b,c] -> [b,c,h,w], constant over the spatial extent.
  Var<S> broadcast_hw(Var<S> v, int h, int w) {
    const Shape& sv = nodes_[v.id].shape;
    if (sv.size() != 2) throw ShapeError("broadcast_hw expects [b,c]");
    int b = sv[0], c = sv[1];
    std::vector<S> out(static_cast<std::size_t>(b) * c * h * w);
    const S* p = nodes_[v.id].val.data();
    for (std::size_t bc = 0; bc < static_cast<std::size_t>(b) * c; ++bc)
      std::fill_n(out.data() + bc * h * w, h * w, p[bc]);
    return wrap(make({b, c, h, w}, std::move(out), nodes_[v.id].needs_grad, {v.id},
                     [](Tape& t, int, int g) {
                       return std::vector<int>{t.sum_hw(t.wrap(g)).id};
                     },
                     "broadcast_hw"));
  }

  // ---- backward ----------------------------------------------------------

  // Gradient of a scalar loss with respect to the given vars. Entries for
  // vars that do not participate in the loss graph come back invalid; the
  // caller maps those to zero tensors. Gradients are themselves tape nodes,
  // so a further backward through them is well defined.
  std::vector<Var<S>> backward(Var<S> loss, const std::vector<Var<S>>& wrt) {
    if (released_) throw Error("backward on a released graph");
    if (nodes_[loss.id].val.size() != 1)
      throw ShapeError("backward expects a scalar loss, got shape " +
                       shape_str(nodes_[loss.id].shape));
    int top = loss.id;
    std::vector<int> grad(static_cast<std::size_t>(top) + 1, -1);
    grad[top] = scalar_const(S(1)).id;
    for (int i = top; i >= 0; --i) {
      if (grad[i] < 0) continue;
      if (!nodes_[i].needs_grad || !nodes_[i].vjp) continue;
      // The vjp appends nodes and may reallocate storage; copy what we need.
      std::vector<int> inputs = nodes_[i].inputs;
      Vjp vjp = nodes_[i].vjp;
      std::vector<int> gs = vjp(*this, i, grad[i]);
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        int in = inputs[k];
        if (gs[k] < 0 || !nodes_[in].needs_grad) continue;
        if (grad[in] < 0)
          grad[in] = gs[k];
        else
          grad[in] = add(wrap(grad[in]), wrap(gs[k])).id;
      }
    }
    std::vector<Var<S>> out;
    out.reserve(wrt.size());
    for (auto w : wrt) {
      if (w.id <= top && grad[w.id] >= 0)
        out.push_back(wrap(grad[w.id]));
      else
        out.push_back(Var<S>{});
    }
    return out;
  }

  Var<S> wrap(int id) { return Var<S>{this, id}; }

 private:
  std::vector<Node> nodes_;
  bool released_ = false;

  static void check_conv_shapes(const Shape& sx, const Shape& sw) {
    if (sx.size() != 4 || sw.size() != 4)
      throw ShapeError("conv2d expects NCHW input and OIKK weights");
    if (sx[1] != sw[1])
      throw ShapeError("conv2d channel mismatch: input " + shape_str(sx) + ", weights " +
                       shape_str(sw));
    if (sw[2] != sw[3] || sw[2] % 2 == 0) throw ShapeError("conv2d kernel must be odd square");
  }

  static void conv_forward(const S* x, const S* w, S* y, int b, int ci, int h, int wd,
                           int co, int k, int pad) {
    for (int n = 0; n < b; ++n)
      for (int oc = 0; oc < co; ++oc)
        for (int c = 0; c < ci; ++c)
          for (int u = 0; u < k; ++u)
            for (int v = 0; v < k; ++v) {
              S wv = w[((static_cast<std::size_t>(oc) * ci + c) * k + u) * k + v];
              if (wv == S(0)) continue;
              for (int i = 0; i < h; ++i) {
                int xi = i + u - pad;
                if (xi < 0 || xi >= h) continue;
                const S* xrow = x + ((static_cast<std::size_t>(n) * ci + c) * h + xi) * wd;
                S* yrow = y + ((static_cast<std::size_t>(n) * co + oc) * h + i) * wd;
                int lo = std::max(0, pad - v);
                int hi = std::min(wd, wd + pad - v);
                for (int j = lo; j < hi; ++j) yrow[j] += xrow[j + v - pad] * wv;
              }
            }
  }

  template <class F, class VjpPair>
  Var<S> binary_ew(const char* name, Var<S> a, Var<S> b, F f, VjpPair vp) {
    const Node& na = nodes_[a.id];
    const Node& nb = nodes_[b.id];
    if (na.shape != nb.shape)
      throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(na.shape) +
                       " vs " + shape_str(nb.shape));
    std::vector<S> out(na.val.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(na.val[i], nb.val[i]);
    int ia = a.id, ib = b.id;
    return wrap(make(na.shape, std::move(out), na.needs_grad || nb.needs_grad,
                     {a.id, b.id},
                     [ia, ib, vp](Tape& t, int self, int g) {
                       auto [ga, gb] = vp(t, ia, ib, g);
                       (void)self;
                       return std::vector<int>{ga, gb};
                     },
                     name));
  }

  int make(Shape shape, std::vector<S> val, bool needs_grad, std::vector<int> inputs,
           Vjp vjp, const char* opname) {
    if (released_) throw Error("op on a released graph");
    if (check_finite) {
      for (S x : val)
        if (!std::isfinite(static_cast<double>(x)))
          throw NumericError(std::string("non-finite value produced by op '") + opname +
                             "'");
    }
    nodes_.push_back(Node{std::move(shape), std::move(val), needs_grad,
                          std::move(inputs), std::move(vjp)});
    return static_cast<int>(nodes_.size()) - 1;
  }
};

template <class S>
const Shape& Var<S>::shape() const {
  return tape->node(id).shape;
}

template <class S>
const std::vector<S>& Var<S>::val() const {
  return tape->node(id).val;
}

}  // namespace sam::ad
