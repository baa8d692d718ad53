#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sam/data.hpp"
#include "sam/nn.hpp"
#include "sam/optim.hpp"

namespace sam::meta {

using sam::ad::Tape;
using sam::ad::Var;

struct EpisodeSpec {
  int n_way = 5;
  int k_shot = 1;
  int query_per_class = 15;
};

template <class S>
struct EpisodeT {
  std::vector<S> support_x, query_x;
  std::vector<int> support_y, query_y;  // remapped to 0..n_way-1
  int support_count = 0, query_count = 0;
};
using Episode = EpisodeT<float>;

// Draws n_way classes from `classes`, then k_shot + query_per_class distinct
// instances per class; support and query never share an instance.
inline Episode sample_episode(const data::ClassImages& pool, const std::vector<int>& classes,
                              const EpisodeSpec& es, Rng& rng) {
  if (es.n_way < 2) throw ConfigError("episode needs n_way >= 2");
  if (es.k_shot < 1) throw ConfigError("episode needs k_shot >= 1");
  if (static_cast<int>(classes.size()) < es.n_way)
    throw ConfigError("episode needs " + std::to_string(es.n_way) + " classes, pool has " +
                      std::to_string(classes.size()));
  std::vector<int> order = classes;
  rng.shuffle(order);
  Episode ep;
  for (int w = 0; w < es.n_way; ++w) {
    int c = order[w];
    const auto& inst = pool.images.at(c);
    int need = es.k_shot + es.query_per_class;
    if (static_cast<int>(inst.size()) < need)
      throw ConfigError("class " + std::to_string(c) + " has " +
                        std::to_string(inst.size()) + " instances, episode needs " +
                        std::to_string(need));
    std::vector<int> pick(inst.size());
    for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = static_cast<int>(i);
    rng.shuffle(pick);
    for (int k = 0; k < es.k_shot; ++k) {
      const auto& im = inst[pick[k]];
      ep.support_x.insert(ep.support_x.end(), im.begin(), im.end());
      ep.support_y.push_back(w);
    }
    for (int k = 0; k < es.query_per_class; ++k) {
      const auto& im = inst[pick[es.k_shot + k]];
      ep.query_x.insert(ep.query_x.end(), im.begin(), im.end());
      ep.query_y.push_back(w);
    }
  }
  ep.support_count = es.n_way * es.k_shot;
  ep.query_count = es.n_way * es.query_per_class;
  return ep;
}

// Forward through trunk + head, consuming all lifted vars in init order.
template <class S>
Var<S> episode_logits(Tape<S>& t, const nn::NetworkSpec& spec, const TapedParams<S>& p,
                      Var<S> x, const nn::ForwardOpts<S>& opts = {}) {
  std::size_t cursor = 0;
  Var<S> h = nn::forward_layers(t, spec, 0, static_cast<int>(spec.layers.size()), p.vars,
                                cursor, x, opts);
  if (cursor + 2 != p.vars.size())
    throw Error("episode_logits: parameter store does not end with a single head");
  return nn::apply_head(t, h, p.vars[cursor], p.vars[cursor + 1]);
}

// Inner-loop adaptation: `steps` plain gradient-descent updates on the
// support loss, each update built on the tape so the outer gradient can flow
// through it (exact second order) unless first_order detaches it.
template <class S>
TapedParams<S> inner_adapt(Tape<S>& t, const nn::NetworkSpec& spec, const TapedParams<S>& p,
                           const EpisodeT<S>& ep, int steps, S alpha, bool first_order,
                           const nn::ForwardOpts<S>& opts = {}) {
  TapedParams<S> cur = p;
  Var<S> sx = nn::input_batch(t, spec, ep.support_x, ep.support_count);
  for (int s = 0; s < steps; ++s) {
    Var<S> logits = episode_logits(t, spec, cur, sx, opts);
    Var<S> loss = ad::softmax_cross_entropy(t, logits, ep.support_y);
    auto grads = t.backward(loss, cur.vars);
    cur = adapted_parameters(t, cur, grads, alpha, first_order);
  }
  return cur;
}

// Query loss of the adapted parameters; also reports query predictions.
template <class S>
Var<S> adapted_query_loss(Tape<S>& t, const nn::NetworkSpec& spec, const TapedParams<S>& p,
                          const EpisodeT<S>& ep, int steps, S alpha, bool first_order,
                          const nn::ForwardOpts<S>& opts = {},
                          std::vector<int>* query_pred = nullptr) {
  TapedParams<S> adapted = inner_adapt(t, spec, p, ep, steps, alpha, first_order, opts);
  Var<S> qx = nn::input_batch(t, spec, ep.query_x, ep.query_count);
  Var<S> logits = episode_logits(t, spec, adapted, qx, opts);
  if (query_pred) *query_pred = ad::argmax_rows(logits.shape(), logits.val());
  return ad::softmax_cross_entropy(t, logits, ep.query_y);
}

struct MetaConfig {
  EpisodeSpec episode;
  int meta_batch = 32;
  int inner_steps = 5;
  float alpha = 0.4f;
  float beta = 0.001f;
  int iterations = 1000;
  bool second_order = true;
  std::uint64_t seed = 0;
};

struct MetaLogRow {
  int iteration = 0;
  double meta_loss = 0;
  double query_accuracy = 0;
};

// Trunk parameters plus a n_way head, the full theta of Alg. 1.
inline ParamStore init_meta_params(const nn::NetworkSpec& spec, int n_way, Rng& rng) {
  ParamStore store;
  Rng init = rng.substream("init");
  nn::init_layers(store, spec, 0, static_cast<int>(spec.layers.size()), "t", init);
  auto tr = nn::shape_trace(spec);
  nn::init_head(store, nn::feature_count(tr.back()), n_way, init);
  return store;
}

// MAML outer loop. Each meta-iteration samples `meta_batch` episodes, adapts
// each independently, backpropagates each query loss immediately (the tape is
// per-episode so memory stays bounded), and sums gradients in episode-index
// order before one plain gradient-descent outer step of size beta.
inline std::vector<MetaLogRow> meta_train(
    const nn::NetworkSpec& spec, ParamStore& params, const data::ClassImages& pool,
    const std::vector<int>& classes, const MetaConfig& cfg,
    const std::function<void(const MetaLogRow&)>& on_iteration = {}) {
  std::vector<MetaLogRow> log;
  Rng root(cfg.seed);
  Sgd outer(cfg.beta, 0.0f);
  for (int it = 0; it < cfg.iterations; ++it) {
    Rng ep_rng = root.substream("episode", static_cast<std::uint64_t>(it));
    std::vector<Tensor> grad_sum;
    for (std::size_t i = 0; i < params.size(); ++i)
      grad_sum.emplace_back(params.entry(i).value.shape);
    double loss_sum = 0;
    long correct = 0, total = 0;
    for (int b = 0; b < cfg.meta_batch; ++b) {
      Episode ep = sample_episode(pool, classes, cfg.episode, ep_rng);
      ad::Tape<float> t;
      TapedParams<float> p = lift(t, params);
      nn::ForwardOpts<float> opts;
      opts.training = true;
      opts.stats_sink = &params;
      opts.stats_prefix = "t";
      std::vector<int> pred;
      Var<float> qloss = adapted_query_loss(t, spec, p, ep, cfg.inner_steps, cfg.alpha,
                                            !cfg.second_order, opts, &pred);
      float lv = qloss.scalar();
      if (!std::isfinite(lv))
        throw NumericError("meta-training diverged: non-finite query loss at iteration " +
                           std::to_string(it) + ", episode " + std::to_string(b));
      loss_sum += lv;
      for (std::size_t k = 0; k < pred.size(); ++k) correct += (pred[k] == ep.query_y[k]);
      total += static_cast<long>(pred.size());
      auto grads = t.backward(qloss, p.vars);
      auto gv = grad_values(params, grads);
      for (std::size_t i = 0; i < grad_sum.size(); ++i)
        for (std::size_t k = 0; k < grad_sum[i].v.size(); ++k)
          grad_sum[i].v[k] += gv[i].v[k];
      t.release();
    }
    outer.step(params, grad_sum);
    MetaLogRow row{it, loss_sum / cfg.meta_batch,
                   total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0};
    log.push_back(row);
    if (on_iteration) on_iteration(row);
  }
  return log;
}

// Mean query accuracy over `episodes` held-out episodes, adapting from the
// current parameters each time. Used for the before/after sanity comparison.
inline double evaluate_episodes(const nn::NetworkSpec& spec, const ParamStore& params,
                                const data::ClassImages& pool,
                                const std::vector<int>& classes, const EpisodeSpec& es,
                                int inner_steps, float alpha, int episodes,
                                std::uint64_t seed) {
  Rng rng(seed);
  long correct = 0, total = 0;
  for (int e = 0; e < episodes; ++e) {
    Episode ep = sample_episode(pool, classes, es, rng);
    ad::Tape<float> t;
    TapedParams<float> p = lift(t, params);
    nn::ForwardOpts<float> opts;
    opts.training = true;  // episodic batch statistics, matching meta-training
    std::vector<int> pred;
    adapted_query_loss(t, spec, p, ep, inner_steps, alpha, /*first_order=*/true, opts,
                       &pred);
    for (std::size_t k = 0; k < pred.size(); ++k) correct += (pred[k] == ep.query_y[k]);
    total += static_cast<long>(pred.size());
    t.release();
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

}  // namespace sam::meta
