#pragma once

#include <vector>

#include "sam/tape.hpp"

namespace sam::ad {

// Mean softmax cross-entropy over a batch. `labels` are class indices into
// [0, nclasses). Implemented as shifted log-sum-exp so that the backward pass
// is itself a taped composition (needed for exact second-order gradients).
template <class S>
Var<S> softmax_cross_entropy(Tape<S>& t, Var<S> logits, const std::vector<int>& labels) {
  const Shape& sl = logits.shape();
  if (sl.size() != 2) throw ShapeError("softmax_cross_entropy expects [batch, classes]");
  int m = sl[0], n = sl[1];
  if (static_cast<int>(labels.size()) != m)
    throw ShapeError("label count does not match batch size");
  std::vector<S> onehot(static_cast<std::size_t>(m) * n, S(0));
  std::vector<S> rowmax(m);
  const std::vector<S>& lv = logits.val();
  for (int i = 0; i < m; ++i) {
    if (labels[i] < 0 || labels[i] >= n)
      throw Error("label " + std::to_string(labels[i]) + " outside class range 0.." +
                  std::to_string(n - 1));
    onehot[static_cast<std::size_t>(i) * n + labels[i]] = S(1);
    S mx = lv[static_cast<std::size_t>(i) * n];
    for (int j = 1; j < n; ++j) mx = std::max(mx, lv[static_cast<std::size_t>(i) * n + j]);
    rowmax[i] = mx;
  }
  Var<S> y = t.constant({m, n}, std::move(onehot));
  Var<S> mx = t.constant({m}, std::move(rowmax));  // piecewise constant shift
  Var<S> z = t.sub(logits, t.broadcast_col(mx, n));
  Var<S> lse = t.add(t.log(t.sum_cols(t.exp(z))), mx);
  Var<S> picked = t.sum_cols(t.mul(logits, y));
  return t.scale(t.sum_all(t.sub(lse, picked)), S(1) / S(m));
}

// Row-wise argmax of raw values, lowest index wins ties.
template <class S>
std::vector<int> argmax_rows(const Shape& shape, const std::vector<S>& v) {
  int m = shape[0], n = shape[1];
  std::vector<int> out(m);
  for (int i = 0; i < m; ++i) {
    const S* row = v.data() + static_cast<std::size_t>(i) * n;
    int best = 0;
    for (int j = 1; j < n; ++j)
      if (row[j] > row[best]) best = j;
    out[i] = best;
  }
  return out;
}

// Batch normalization over the batch axis of a [m, n] activation.
// Training mode computes per-batch statistics on the tape; the raw batch
// mean/variance values are exposed so the caller can maintain running stats.
template <class S>
Var<S> batchnorm_train(Tape<S>& t, Var<S> x, Var<S> gamma, Var<S> beta, S eps,
                       std::vector<S>* batch_mean = nullptr,
                       std::vector<S>* batch_var = nullptr) {
  const Shape& sx = x.shape();
  if (sx.size() != 2) throw ShapeError("batchnorm_train expects [batch, features]");
  int m = sx[0], n = sx[1];
  Var<S> mu = t.scale(t.sum_rows(x), S(1) / S(m));
  Var<S> xc = t.sub(x, t.broadcast_row(mu, m));
  Var<S> var = t.scale(t.sum_rows(t.mul(xc, xc)), S(1) / S(m));
  if (batch_mean) *batch_mean = mu.val();
  if (batch_var) *batch_var = var.val();
  Var<S> std_ = t.sqrt(t.add_const(var, eps));
  Var<S> y = t.mul(xc, t.broadcast_row(t.div(gamma, std_), m));
  return t.add(y, t.broadcast_row(beta, m));
}

// Evaluation-mode batch normalization with frozen statistics.
template <class S>
Var<S> batchnorm_eval(Tape<S>& t, Var<S> x, Var<S> gamma, Var<S> beta,
                      const std::vector<S>& mean, const std::vector<S>& var, S eps) {
  const Shape& sx = x.shape();
  if (sx.size() != 2) throw ShapeError("batchnorm_eval expects [batch, features]");
  int m = sx[0], n = sx[1];
  std::vector<S> inv(n);
  for (int j = 0; j < n; ++j) inv[j] = S(1) / std::sqrt(var[j] + eps);
  Var<S> muc = t.constant({n}, std::vector<S>(mean));
  Var<S> invc = t.constant({n}, std::move(inv));
  Var<S> xc = t.sub(x, t.broadcast_row(muc, m));
  Var<S> y = t.mul(xc, t.broadcast_row(t.mul(gamma, invc), m));
  return t.add(y, t.broadcast_row(beta, m));
}

// Channel batch normalization for NCHW activations; statistics over (b,h,w).
template <class S>
Var<S> batchnorm_train_nchw(Tape<S>& t, Var<S> x, Var<S> gamma, Var<S> beta, S eps,
                            std::vector<S>* batch_mean = nullptr,
                            std::vector<S>* batch_var = nullptr) {
  const Shape& sx = x.shape();
  if (sx.size() != 4) throw ShapeError("batchnorm_train_nchw expects NCHW");
  int b = sx[0], h = sx[2], w = sx[3];
  S cnt = S(b) * S(h) * S(w);
  auto spread = [&](Var<S> v) { return t.broadcast_hw(t.broadcast_row(v, b), h, w); };
  Var<S> mu = t.scale(t.sum_rows(t.sum_hw(x)), S(1) / cnt);
  Var<S> xc = t.sub(x, spread(mu));
  Var<S> var = t.scale(t.sum_rows(t.sum_hw(t.mul(xc, xc))), S(1) / cnt);
  if (batch_mean) *batch_mean = mu.val();
  if (batch_var) *batch_var = var.val();
  Var<S> std_ = t.sqrt(t.add_const(var, eps));
  Var<S> y = t.mul(xc, spread(t.div(gamma, std_)));
  return t.add(y, spread(beta));
}

template <class S>
Var<S> batchnorm_eval_nchw(Tape<S>& t, Var<S> x, Var<S> gamma, Var<S> beta,
                           const std::vector<S>& mean, const std::vector<S>& var, S eps) {
  const Shape& sx = x.shape();
  if (sx.size() != 4) throw ShapeError("batchnorm_eval_nchw expects NCHW");
  int b = sx[0], c = sx[1], h = sx[2], w = sx[3];
  std::vector<S> inv(c);
  for (int j = 0; j < c; ++j) inv[j] = S(1) / std::sqrt(var[j] + eps);
  auto spread = [&](Var<S> v) { return t.broadcast_hw(t.broadcast_row(v, b), h, w); };
  Var<S> xc = t.sub(x, spread(t.constant({c}, std::vector<S>(mean))));
  Var<S> y = t.mul(xc, spread(t.mul(gamma, t.constant({c}, std::move(inv)))));
  return t.add(y, spread(beta));
}

// Global average pooling: [b,c,h,w] -> [b,c].
template <class S>
Var<S> global_avg_pool(Tape<S>& t, Var<S> x) {
  const Shape& sx = x.shape();
  if (sx.size() != 4) throw ShapeError("global_avg_pool expects NCHW");
  return t.scale(t.sum_hw(x), S(1) / (S(sx[2]) * S(sx[3])));
}

}  // namespace sam::ad
