#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sam/data.hpp"
#include "sam/nn.hpp"
#include "sam/optim.hpp"

namespace sam::cl {

using sam::ad::Tape;
using sam::ad::Var;

struct TrainConfig {
  int epochs = 5;
  int batch_size = 64;
  bool adam = false;  // else SGD with Nesterov momentum
  float lr = 0.01f;
  float momentum = 0.9f;
};

// Task-specific parameters: the layers past the shared split plus the output
// head, frozen once the task's training window closes.
struct TaskHead {
  int id = 0;
  std::vector<int> global_labels;  // local class -> global class
  ParamStore phi;
};

// Shared trunk plus the heads trained so far.
struct Model {
  nn::NetworkSpec spec;
  ParamStore shared;  // parameters of layers [0, shared_count)
  std::vector<TaskHead> heads;
};

inline ParamStore init_shared(const nn::NetworkSpec& spec, Rng& rng) {
  ParamStore store;
  nn::init_layers(store, spec, 0, spec.shared_count, "t", rng);
  return store;
}

inline ParamStore init_specific(const nn::NetworkSpec& spec, int nclasses, Rng& rng) {
  ParamStore store;
  nn::init_layers(store, spec, spec.shared_count, static_cast<int>(spec.layers.size()), "s",
                  rng);
  auto tr = nn::shape_trace(spec);
  nn::init_head(store, nn::feature_count(tr.back()), nclasses, rng);
  return store;
}

// Shared features for a batch; frozen statistics unless `training`.
template <class S>
Var<S> shared_features(Tape<S>& t, const nn::NetworkSpec& spec, const TapedParams<S>& shared,
                       Var<S> x, const nn::ForwardOpts<S>& opts = {}) {
  std::size_t cursor = 0;
  return nn::forward_layers(t, spec, 0, spec.shared_count, shared.vars, cursor, x, opts);
}

// One head's pre-softmax logits from shared features.
template <class S>
Var<S> head_logits(Tape<S>& t, const nn::NetworkSpec& spec, const TapedParams<S>& phi,
                   Var<S> features, const nn::ForwardOpts<S>& opts = {}) {
  std::size_t cursor = 0;
  Var<S> h = nn::forward_layers(t, spec, spec.shared_count,
                                static_cast<int>(spec.layers.size()), phi.vars, cursor,
                                features, opts);
  return nn::apply_head(t, h, phi.vars[cursor], phi.vars[cursor + 1]);
}

// Eq. 6 decision: argmax over the concatenated raw logit vectors, lowest
// index winning ties. Returns (head index, local class).
inline std::pair<int, int> decide_concat(const std::vector<std::vector<float>>& head_outputs) {
  if (head_outputs.empty()) throw Error("decision needs at least one head output");
  int best_h = 0, best_j = 0;
  float best = head_outputs[0].at(0);
  for (int h = 0; h < static_cast<int>(head_outputs.size()); ++h)
    for (int j = 0; j < static_cast<int>(head_outputs[h].size()); ++j)
      if (head_outputs[h][j] > best) {
        best = head_outputs[h][j];
        best_h = h;
        best_j = j;
      }
  return {best_h, best_j};
}

// Trains the specific parameters of one task against the frozen trunk.
// `rng` drives both head initialization and minibatch shuffling and should be
// derived from (run seed, task id).
inline TaskHead train_task(const Model& m, const data::TaskDataset& task,
                           const TrainConfig& cfg, Rng rng) {
  TaskHead head;
  head.id = task.id;
  head.global_labels = task.global_labels;
  Rng init = rng.substream("init");
  head.phi = init_specific(m.spec, task.nclasses, init);

  Sgd sgd(cfg.lr, cfg.momentum, /*nesterov=*/true);
  Adam adam(cfg.lr);
  Rng shuffle_rng = rng.substream("shuffle");
  const int dim = task.input_dim();
  std::vector<int> order(task.train_count());
  for (int i = 0; i < task.train_count(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (int start = 0; start < task.train_count(); start += cfg.batch_size) {
      int bs = std::min(cfg.batch_size, task.train_count() - start);
      std::vector<float> xb(static_cast<std::size_t>(bs) * dim);
      std::vector<int> yb(bs);
      for (int k = 0; k < bs; ++k) {
        int idx = order[start + k];
        std::copy_n(task.train_x.data() + static_cast<std::size_t>(idx) * dim, dim,
                    xb.data() + static_cast<std::size_t>(k) * dim);
        yb[k] = task.train_y[idx];
      }
      Tape<float> t;
      TapedParams<float> sh = lift(t, m.shared, /*needs_grad=*/false);
      TapedParams<float> ph = lift(t, head.phi);
      Var<float> x = nn::input_batch(t, m.spec, xb, bs);
      Var<float> logits = head_logits(t, m.spec, ph, shared_features(t, m.spec, sh, x));
      Var<float> loss = ad::softmax_cross_entropy(t, logits, yb);
      if (!std::isfinite(loss.scalar()))
        throw NumericError("task " + std::to_string(task.id) +
                           " training diverged at epoch " + std::to_string(epoch));
      auto grads = t.backward(loss, ph.vars);
      auto gv = grad_values(head.phi, grads);
      if (cfg.adam)
        adam.step(head.phi, gv);
      else
        sgd.step(head.phi, gv);
      t.release();
    }
  }
  return head;
}

// All heads' raw logits for a test batch, shared features computed once.
inline std::vector<std::vector<std::vector<float>>> batch_head_outputs(
    const Model& m, const std::vector<float>& xb, int bs) {
  Tape<float> t;
  TapedParams<float> sh = lift(t, m.shared, false);
  Var<float> x = nn::input_batch(t, m.spec, xb, bs);
  Var<float> features = shared_features(t, m.spec, sh, x);
  std::vector<std::vector<std::vector<float>>> out(bs);
  for (const TaskHead& head : m.heads) {
    TapedParams<float> ph = lift(t, head.phi, false);
    Var<float> logits = head_logits(t, m.spec, ph, features);
    const auto& v = logits.val();
    int n = logits.shape()[1];
    for (int k = 0; k < bs; ++k)
      out[k].emplace_back(v.begin() + static_cast<std::size_t>(k) * n,
                          v.begin() + static_cast<std::size_t>(k + 1) * n);
  }
  return out;
}

enum class Protocol { Agnostic, Conditioned };

// Accuracy of `task`'s test set. Conditioned restricts the decision to the
// head with matching task id; agnostic concatenates every trained head.
inline double evaluate_task(const Model& m, const data::TaskDataset& task, Protocol proto,
                            int eval_batch = 256) {
  int head_index = -1;
  for (int h = 0; h < static_cast<int>(m.heads.size()); ++h)
    if (m.heads[h].id == task.id) head_index = h;
  if (head_index < 0) throw Error("no trained head for task " + std::to_string(task.id));
  const int dim = task.input_dim();
  long correct = 0;
  for (int start = 0; start < task.test_count(); start += eval_batch) {
    int bs = std::min(eval_batch, task.test_count() - start);
    std::vector<float> xb(task.test_x.begin() + static_cast<std::size_t>(start) * dim,
                          task.test_x.begin() + static_cast<std::size_t>(start + bs) * dim);
    auto outputs = batch_head_outputs(m, xb, bs);
    for (int k = 0; k < bs; ++k) {
      int truth = task.global_labels[task.test_y[start + k]];
      int pred;
      if (proto == Protocol::Conditioned) {
        auto local = ad::argmax_rows<float>({1, static_cast<int>(outputs[k][head_index].size())},
                                            outputs[k][head_index]);
        pred = m.heads[head_index].global_labels[local[0]];
      } else {
        auto [h, j] = decide_concat(outputs[k]);
        pred = m.heads[h].global_labels[j];
      }
      correct += (pred == truth);
    }
  }
  return task.test_count() ? 100.0 * static_cast<double>(correct) / task.test_count() : 0.0;
}

// Accuracy matrix over the run: entry [j][i] is task i's accuracy after the
// stage that trained task j (defined for i <= j).
struct RunReport {
  std::vector<std::vector<double>> agnostic, conditioned;
  std::string fingerprint;

  double average(Protocol proto, int stage = -1) const {
    const auto& mat = proto == Protocol::Agnostic ? agnostic : conditioned;
    if (mat.empty()) return 0.0;
    const auto& row = stage < 0 ? mat.back() : mat.at(stage);
    double s = 0;
    for (double a : row) s += a;
    return s / static_cast<double>(row.size());
  }
};

// Sequential continual phase with frozen trunk: trains each task's head in
// order and evaluates all earlier tasks after every stage.
inline RunReport run_sequence(Model& m, const data::CLSequence& seq, const TrainConfig& cfg,
                             std::uint64_t seed) {
  RunReport report;
  Rng root(seed);
  for (const auto& task : seq.tasks) {
    m.heads.push_back(train_task(m, task, cfg, root.substream("task", task.id)));
    std::vector<double> ag, cond;
    for (std::size_t i = 0; i < m.heads.size(); ++i) {
      ag.push_back(evaluate_task(m, seq.tasks[i], Protocol::Agnostic));
      cond.push_back(evaluate_task(m, seq.tasks[i], Protocol::Conditioned));
    }
    report.agnostic.push_back(std::move(ag));
    report.conditioned.push_back(std::move(cond));
  }
  return report;
}

// Forward-transfer probe: trains only the specific sub-network on each probe
// task against the fixed trunk and reports its conditioned test accuracy.
inline std::vector<double> fwt_eval(const nn::NetworkSpec& spec, const ParamStore& shared,
                                    const std::vector<data::TaskDataset>& probes,
                                    const TrainConfig& cfg, std::uint64_t seed) {
  std::vector<double> acc;
  Rng root(seed);
  for (const auto& probe : probes) {
    Model m{spec, shared, {}};
    m.heads.push_back(train_task(m, probe, cfg, root.substream("probe", probe.id)));
    acc.push_back(evaluate_task(m, probe, Protocol::Conditioned));
  }
  return acc;
}

}  // namespace sam::cl
