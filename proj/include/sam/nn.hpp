#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sam/ops.hpp"
#include "sam/params.hpp"
#include "sam/random.hpp"

namespace sam::nn {

using sam::ad::Tape;
using sam::ad::Var;

enum class LayerKind { Dense, Conv, BatchNorm, Relu, Attention, MaxPool, Flatten };

enum class AttentionPlacement { None, LastBlockOnly, AllBlocks };

struct LayerDesc {
  LayerKind kind;
  int width = 0;      // dense output features / conv output channels
  int reduction = 0;  // attention bottleneck ratio
};

// Ordered layer list for one network: shared trunk first, then the
// task-specific layers. The per-task output head (a dense layer of the task's
// class count) is kept separate and is always specific.
struct NetworkSpec {
  std::string name;
  Shape input_shape;              // {features} or {c,h,w}
  std::vector<LayerDesc> layers;
  int shared_count = 0;           // layers [0, shared_count) form theta
};

// ---- shape bookkeeping -----------------------------------------------------

// Activation shape (batch-free) after each prefix of the layer list; entry 0
// is the input shape, entry i+1 the shape after layer i.
inline std::vector<Shape> shape_trace(const NetworkSpec& spec) {
  std::vector<Shape> tr{spec.input_shape};
  Shape cur = spec.input_shape;
  for (const LayerDesc& L : spec.layers) {
    switch (L.kind) {
      case LayerKind::Dense:
        if (cur.size() != 1)
          throw ShapeError("dense layer needs a flat input; add a flatten layer");
        cur = {L.width};
        break;
      case LayerKind::Conv:
        if (cur.size() != 3) throw ShapeError("conv layer needs a c,h,w input");
        cur = {L.width, cur[1], cur[2]};
        break;
      case LayerKind::MaxPool:
        if (cur.size() != 3) throw ShapeError("max-pool needs a c,h,w input");
        cur = {cur[0], cur[1] / 2, cur[2] / 2};
        if (cur[1] < 1 || cur[2] < 1) throw ShapeError("max-pool input too small");
        break;
      case LayerKind::Flatten: {
        int n = 1;
        for (int d : cur) n *= d;
        cur = {n};
        break;
      }
      case LayerKind::Attention: {
        int c = cur[0];
        if (L.reduction <= 0 || c % L.reduction != 0)
          throw ShapeError("attention reduction ratio " + std::to_string(L.reduction) +
                           " does not divide channel count " + std::to_string(c));
        break;  // shape preserved
      }
      case LayerKind::BatchNorm:
      case LayerKind::Relu:
        break;
    }
    tr.push_back(cur);
  }
  return tr;
}

inline int feature_count(const Shape& s) {
  int n = 1;
  for (int d : s) n *= d;
  return n;
}

// ---- initialization --------------------------------------------------------

template <class S>
TensorT<S> init_weight(Shape shape, int fan_in, Rng& rng) {
  TensorT<S> t(std::move(shape));
  S stddev = S(1) / std::sqrt(S(fan_in));
  for (auto& x : t.v) x = static_cast<S>(rng.truncated_normal(stddev));
  return t;
}

// Appends the parameters for layers [begin, end) of `spec` to `store`,
// named "<prefix><layer-index>.<param>". Attention layers carry no biases.
template <class S>
void init_layers(ParamStoreT<S>& store, const NetworkSpec& spec, int begin, int end,
                 const std::string& prefix, Rng& rng) {
  auto tr = shape_trace(spec);
  for (int i = begin; i < end; ++i) {
    const LayerDesc& L = spec.layers[i];
    const Shape& in = tr[i];
    std::string base = prefix + std::to_string(i) + ".";
    switch (L.kind) {
      case LayerKind::Dense: {
        int fan_in = feature_count(in);
        store.add(base + "W", init_weight<S>({L.width, fan_in}, fan_in, rng));
        store.add(base + "b", TensorT<S>({L.width}));
        break;
      }
      case LayerKind::Conv: {
        int fan_in = in[0] * 9;
        store.add(base + "W", init_weight<S>({L.width, in[0], 3, 3}, fan_in, rng));
        store.add(base + "b", TensorT<S>({L.width}));
        break;
      }
      case LayerKind::BatchNorm: {
        int c = in[0];
        TensorT<S> ones({c});
        std::fill(ones.v.begin(), ones.v.end(), S(1));
        store.add(base + "gamma", ones);
        store.add(base + "beta", TensorT<S>({c}));
        store.add(base + "running_mean", TensorT<S>({c}), /*trainable=*/false);
        store.add(base + "running_var", ones, /*trainable=*/false);
        break;
      }
      case LayerKind::Attention: {
        int c = in[0];
        int mid = c / L.reduction;
        store.add(base + "W1", init_weight<S>({mid, c}, c, rng));
        // Damped second layer: gates start close to the neutral 0.5 instead
        // of random suppression/boost, so an untrained module modulates the
        // features only mildly and the strength of the gating is learned.
        TensorT<S> w2 = init_weight<S>({c, mid}, mid, rng);
        for (auto& x : w2.v) x *= S(0.1);
        store.add(base + "W2", w2);
        break;
      }
      default:
        break;
    }
  }
}

template <class S>
void init_head(ParamStoreT<S>& store, int in_features, int nclasses, Rng& rng,
               const std::string& name = "head") {
  store.add(name + ".W", init_weight<S>({nclasses, in_features}, in_features, rng));
  store.add(name + ".b", TensorT<S>({nclasses}));
}

// ---- attention primitives --------------------------------------------------

// Per-channel spatial mean: [b,c,h,w] -> [b,c]. The mlp variant passes the
// activation vector through unchanged.
template <class S>
Var<S> squeeze(Tape<S>& t, Var<S> x) {
  if (x.shape().size() == 2) return x;
  return ad::global_avg_pool(t, x);
}

// s = sigmoid(W2 relu(W1 z)), batched: z [b,c], W1 [c/r,c], W2 [c,c/r].
template <class S>
Var<S> excitation(Tape<S>& t, Var<S> z, Var<S> w1, Var<S> w2) {
  return t.sigmoid(t.matmul(t.relu(t.matmul(z, w1, false, true)), w2, false, true));
}

// Channel-wise (or element-wise for 2-D activations) rescaling by s.
template <class S>
Var<S> recalibrate(Tape<S>& t, Var<S> x, Var<S> s) {
  const Shape& sx = x.shape();
  if (sx.size() == 2) {
    if (s.shape() != sx) throw ShapeError("recalibrate: gate shape mismatch");
    return t.mul(x, s);
  }
  if (sx.size() != 4 || s.shape().size() != 2 || s.shape()[1] != sx[1])
    throw ShapeError("recalibrate: gate length must equal channel count");
  return t.mul(x, t.broadcast_hw(s, sx[2], sx[3]));
}

// ---- forward ---------------------------------------------------------------

// Per-attention-block activations of the first sample in the batch, for the
// visualization command.
template <class S>
struct Probe {
  struct BlockRecord {
    std::vector<S> pre, gate, post;
  };
  std::vector<BlockRecord> blocks;
};

template <class S>
struct ForwardOpts {
  bool training = false;           // batch statistics for BN layers
  ParamStoreT<S>* stats_sink = nullptr;  // receives running-stat updates
  std::string stats_prefix;
  S bn_momentum = S(0.1);
  Probe<S>* probe = nullptr;
};

namespace detail {
template <class S>
std::vector<S> first_row(Var<S> v) {
  const Shape& s = v.shape();
  std::size_t n = v.size() / s[0];
  return std::vector<S>(v.val().begin(), v.val().begin() + n);
}
}  // namespace detail

// Runs layers [begin, end), consuming parameter vars from `cursor` onward in
// the same order init_layers created them.
template <class S>
Var<S> forward_layers(Tape<S>& t, const NetworkSpec& spec, int begin, int end,
                      const std::vector<Var<S>>& pvars, std::size_t& cursor, Var<S> x,
                      const ForwardOpts<S>& opts = {}) {
  for (int i = begin; i < end; ++i) {
    const LayerDesc& L = spec.layers[i];
    switch (L.kind) {
      case LayerKind::Dense: {
        Var<S> W = pvars[cursor++], b = pvars[cursor++];
        x = t.add(t.matmul(x, W, false, true), t.broadcast_row(b, x.shape()[0]));
        break;
      }
      case LayerKind::Conv: {
        Var<S> W = pvars[cursor++], b = pvars[cursor++];
        Var<S> y = t.conv2d(x, W);
        const Shape& sy = y.shape();
        x = t.add(y, t.broadcast_hw(t.broadcast_row(b, sy[0]), sy[2], sy[3]));
        break;
      }
      case LayerKind::BatchNorm: {
        Var<S> gamma = pvars[cursor++], beta = pvars[cursor++];
        Var<S> rmean = pvars[cursor++], rvar = pvars[cursor++];
        bool conv = x.shape().size() == 4;
        if (opts.training) {
          std::vector<S> bm, bv;
          x = conv ? ad::batchnorm_train_nchw(t, x, gamma, beta, S(1e-5), &bm, &bv)
                   : ad::batchnorm_train(t, x, gamma, beta, S(1e-5), &bm, &bv);
          if (opts.stats_sink) {
            std::string base = opts.stats_prefix + std::to_string(i) + ".";
            auto& rm = opts.stats_sink->at(base + "running_mean").v;
            auto& rv = opts.stats_sink->at(base + "running_var").v;
            for (std::size_t k = 0; k < rm.size(); ++k) {
              rm[k] = (S(1) - opts.bn_momentum) * rm[k] + opts.bn_momentum * bm[k];
              rv[k] = (S(1) - opts.bn_momentum) * rv[k] + opts.bn_momentum * bv[k];
            }
          }
        } else {
          x = conv ? ad::batchnorm_eval_nchw(t, x, gamma, beta, rmean.val(), rvar.val(),
                                             S(1e-5))
                   : ad::batchnorm_eval(t, x, gamma, beta, rmean.val(), rvar.val(),
                                        S(1e-5));
        }
        break;
      }
      case LayerKind::Relu:
        x = t.relu(x);
        break;
      case LayerKind::Attention: {
        Var<S> w1 = pvars[cursor++], w2 = pvars[cursor++];
        Var<S> z = squeeze(t, x);
        Var<S> s = excitation(t, z, w1, w2);
        Var<S> out = recalibrate(t, x, s);
        if (opts.probe) {
          typename Probe<S>::BlockRecord rec;
          rec.pre = detail::first_row(x);
          rec.gate = detail::first_row(s);
          rec.post = detail::first_row(out);
          opts.probe->blocks.push_back(std::move(rec));
        }
        x = out;
        break;
      }
      case LayerKind::MaxPool:
        x = t.maxpool2(x);
        break;
      case LayerKind::Flatten: {
        const Shape& s = x.shape();
        int n = 1;
        for (std::size_t k = 1; k < s.size(); ++k) n *= s[k];
        x = t.reshape(x, {s[0], n});
        break;
      }
    }
  }
  return x;
}

template <class S>
Var<S> apply_head(Tape<S>& t, Var<S> features, Var<S> W, Var<S> b) {
  return t.add(t.matmul(features, W, false, true), t.broadcast_row(b, features.shape()[0]));
}

// Lifts an image batch (flat values, one image per row) onto the tape with
// the spec's input shape.
template <class S>
Var<S> input_batch(Tape<S>& t, const NetworkSpec& spec, const std::vector<S>& data,
                   int batch) {
  Shape sh{batch};
  for (int d : spec.input_shape) sh.push_back(d);
  if (spec.input_shape.size() == 1) sh = {batch, spec.input_shape[0]};
  return t.constant(std::move(sh), std::vector<S>(data));
}

// ---- spec builders ---------------------------------------------------------

namespace detail {
inline void add_block_attention(std::vector<LayerDesc>& ls, AttentionPlacement p,
                                bool last_block, int r) {
  bool want = p == AttentionPlacement::AllBlocks ||
              (p == AttentionPlacement::LastBlockOnly && last_block);
  if (want) ls.push_back({LayerKind::Attention, 0, r});
}
}  // namespace detail

// Two blocks of dense(400) + ReLU (+ batch-norm in the meta model) with an
// attention module per placement. Everything here is shared.
inline NetworkSpec mlp_trunk(AttentionPlacement p, bool with_bn, int r = 10,
                             int input_dim = 784, int hidden = 400) {
  NetworkSpec spec;
  spec.name = with_bn ? "mlp-meta" : "mlp-trunk";
  spec.input_shape = {input_dim};
  for (int blk = 0; blk < 2; ++blk) {
    spec.layers.push_back({LayerKind::Dense, hidden, 0});
    if (with_bn) spec.layers.push_back({LayerKind::BatchNorm, 0, 0});
    spec.layers.push_back({LayerKind::Relu, 0, 0});
    detail::add_block_attention(spec.layers, p, blk == 1, r);
  }
  spec.shared_count = static_cast<int>(spec.layers.size());
  return spec;
}

// Four conv blocks (32,32,64,64 maps) with a max-pool after every block; the
// episodic meta model for the convolutional pipeline.
inline NetworkSpec conv_meta(AttentionPlacement p, int r = 8, int in_channels = 1,
                             int image = 28) {
  NetworkSpec spec;
  spec.name = "conv-meta";
  spec.input_shape = {in_channels, image, image};
  const int maps[4] = {32, 32, 64, 64};
  for (int blk = 0; blk < 4; ++blk) {
    spec.layers.push_back({LayerKind::Conv, maps[blk], 0});
    spec.layers.push_back({LayerKind::BatchNorm, 0, 0});
    spec.layers.push_back({LayerKind::Relu, 0, 0});
    detail::add_block_attention(spec.layers, p, blk == 3, r);
    spec.layers.push_back({LayerKind::MaxPool, 0, 0});
  }
  spec.layers.push_back({LayerKind::Flatten, 0, 0});
  spec.shared_count = static_cast<int>(spec.layers.size());
  return spec;
}

// Split CIFAR continual network. shared_blocks selects the studied splits:
// 2 shared conv blocks + a conv/dense specific sub-network, or 4 shared
// blocks with a head-only specific part.
inline NetworkSpec cifar_net(int shared_blocks, AttentionPlacement p, int r = 8) {
  if (shared_blocks != 2 && shared_blocks != 4)
    throw ConfigError("cifar_net: shared_blocks must be 2 or 4");
  NetworkSpec spec;
  spec.name = "cifar-" + std::to_string(shared_blocks) + "blocks";
  spec.input_shape = {3, 32, 32};
  const int maps[4] = {32, 32, 64, 64};
  for (int blk = 0; blk < shared_blocks; ++blk) {
    spec.layers.push_back({LayerKind::Conv, maps[blk], 0});
    spec.layers.push_back({LayerKind::BatchNorm, 0, 0});
    spec.layers.push_back({LayerKind::Relu, 0, 0});
    detail::add_block_attention(spec.layers, p, blk == shared_blocks - 1, r);
    if (blk % 2 == 1) spec.layers.push_back({LayerKind::MaxPool, 0, 0});
  }
  if (shared_blocks == 2) {
    spec.shared_count = static_cast<int>(spec.layers.size());
    for (int blk = 0; blk < 2; ++blk) {
      spec.layers.push_back({LayerKind::Conv, 64, 0});
      spec.layers.push_back({LayerKind::Relu, 0, 0});
    }
    spec.layers.push_back({LayerKind::MaxPool, 0, 0});
    spec.layers.push_back({LayerKind::Flatten, 0, 0});
    spec.layers.push_back({LayerKind::Dense, 512, 0});
    spec.layers.push_back({LayerKind::Relu, 0, 0});
  } else {
    spec.layers.push_back({LayerKind::Flatten, 0, 0});
    spec.shared_count = static_cast<int>(spec.layers.size());
  }
  if (spec.shared_count == 0) spec.shared_count = static_cast<int>(spec.layers.size());
  return spec;
}

// ---- batch-norm folding ----------------------------------------------------

// Removes BatchNorm layers whose predecessor is a Dense layer by folding the
// frozen statistics and affine into that layer's weights. Used when a
// batch-norm-bearing meta checkpoint initializes the batch-norm-free
// continual trunk.
template <class S>
std::pair<NetworkSpec, ParamStoreT<S>> fold_batchnorm(const NetworkSpec& spec,
                                                      const ParamStoreT<S>& store,
                                                      const std::string& prefix) {
  NetworkSpec out_spec;
  out_spec.name = spec.name + "-folded";
  out_spec.input_shape = spec.input_shape;
  ParamStoreT<S> out;
  int out_index = 0;
  int shared_out = spec.shared_count;
  for (int i = 0; i < static_cast<int>(spec.layers.size()); ++i) {
    const LayerDesc& L = spec.layers[i];
    std::string base = prefix + std::to_string(i) + ".";
    std::string obase = prefix + std::to_string(out_index) + ".";
    if (L.kind == LayerKind::BatchNorm) {
      if (i == 0 || spec.layers[i - 1].kind != LayerKind::Dense)
        throw Error("fold_batchnorm: batch-norm without preceding dense layer");
      const auto& gamma = store.at(base + "gamma").v;
      const auto& beta = store.at(base + "beta").v;
      const auto& mean = store.at(base + "running_mean").v;
      const auto& var = store.at(base + "running_var").v;
      // The dense layer was already emitted; rescale it in place.
      std::string dbase = prefix + std::to_string(out_index - 1) + ".";
      auto& W = out.at(dbase + "W");
      auto& b = out.at(dbase + "b");
      int rows = W.shape[0], cols = W.shape[1];
      for (int r_ = 0; r_ < rows; ++r_) {
        S scale = gamma[r_] / std::sqrt(var[r_] + S(1e-5));
        for (int c = 0; c < cols; ++c) W.v[static_cast<std::size_t>(r_) * cols + c] *= scale;
        b.v[r_] = scale * (b.v[r_] - mean[r_]) + beta[r_];
      }
      if (i < spec.shared_count) --shared_out;
      continue;  // layer dropped
    }
    out_spec.layers.push_back(L);
    switch (L.kind) {
      case LayerKind::Dense:
      case LayerKind::Conv:
        out.add(obase + "W", store.at(base + "W"));
        out.add(obase + "b", store.at(base + "b"));
        break;
      case LayerKind::Attention:
        out.add(obase + "W1", store.at(base + "W1"));
        out.add(obase + "W2", store.at(base + "W2"));
        break;
      default:
        break;
    }
    ++out_index;
  }
  out_spec.shared_count = shared_out;
  return {std::move(out_spec), std::move(out)};
}

inline bool has_params(LayerKind k) {
  return k == LayerKind::Dense || k == LayerKind::Conv || k == LayerKind::BatchNorm ||
         k == LayerKind::Attention;
}

// Copies shared-trunk parameters from a source store into a destination
// store. Matching is positional over parameter-bearing layers only, so pool
// placement may differ between the meta model and the continual model.
template <class S>
void copy_shared(const NetworkSpec& src_spec, const ParamStoreT<S>& src,
                 const std::string& src_prefix, const NetworkSpec& dst_spec,
                 ParamStoreT<S>& dst, const std::string& dst_prefix) {
  std::vector<int> src_idx, dst_idx;
  for (int i = 0; i < static_cast<int>(src_spec.layers.size()); ++i)
    if (has_params(src_spec.layers[i].kind)) src_idx.push_back(i);
  for (int i = 0; i < dst_spec.shared_count; ++i)
    if (has_params(dst_spec.layers[i].kind)) dst_idx.push_back(i);
  if (dst_idx.size() > src_idx.size()) throw Error("copy_shared: source spec too shallow");
  for (std::size_t k = 0; k < dst_idx.size(); ++k) {
    LayerKind kind = dst_spec.layers[dst_idx[k]].kind;
    if (src_spec.layers[src_idx[k]].kind != kind)
      throw Error("copy_shared: layer kind mismatch at parametric layer " +
                  std::to_string(k));
    std::string sb = src_prefix + std::to_string(src_idx[k]) + ".";
    std::string db = dst_prefix + std::to_string(dst_idx[k]) + ".";
    switch (kind) {
      case LayerKind::Dense:
      case LayerKind::Conv:
        dst.at(db + "W") = src.at(sb + "W");
        dst.at(db + "b") = src.at(sb + "b");
        break;
      case LayerKind::Attention:
        dst.at(db + "W1") = src.at(sb + "W1");
        dst.at(db + "W2") = src.at(sb + "W2");
        break;
      case LayerKind::BatchNorm:
        dst.at(db + "gamma") = src.at(sb + "gamma");
        dst.at(db + "beta") = src.at(sb + "beta");
        dst.at(db + "running_mean") = src.at(sb + "running_mean");
        dst.at(db + "running_var") = src.at(sb + "running_var");
        break;
      default:
        break;
    }
  }
}

// Parameter scalar count of one attention module (two bias-free layers).
inline std::size_t attention_param_count(int channels, int reduction) {
  return 2ull * static_cast<std::size_t>(channels) * (channels / reduction);
}

}  // namespace sam::nn
