#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sam/continual.hpp"

namespace sam::strat {

using sam::ad::Tape;
using sam::ad::Var;

enum class Strategy { Frozen, FineTune, SI };
enum class TrunkInit { Meta, Random, Task1 };

// Synaptic-intelligence bookkeeping over the shared trunk's trainable
// entries, indexed like the ParamStore.
struct SIState {
  std::vector<Tensor> omega;       // running path integral, reset per task
  std::vector<Tensor> importance;  // consolidated, non-negative
  std::vector<Tensor> anchor;      // theta* at the last consolidation
  float c = 0.1f;
  float xi = 0.1f;

  void init(const ParamStore& shared, float c_, float xi_) {
    c = c_;
    xi = xi_;
    omega.clear();
    importance.clear();
    anchor.clear();
    for (std::size_t i = 0; i < shared.size(); ++i) {
      const Shape& sh = shared.entry(i).value.shape;
      omega.emplace_back(sh);
      importance.emplace_back(sh);
      anchor.push_back(shared.entry(i).value);
    }
  }

  // omega += -grad ⊙ delta, once per optimizer step with the pre-update
  // gradient and the applied parameter change.
  void accumulate(const std::vector<Tensor>& grads, const std::vector<Tensor>& deltas) {
    if (grads.size() != omega.size() || deltas.size() != omega.size())
      throw ShapeError("si_accumulate: tracked parameter count mismatch");
    for (std::size_t i = 0; i < omega.size(); ++i) {
      if (grads[i].v.size() != omega[i].v.size())
        throw ShapeError("si_accumulate: shape mismatch at entry " + std::to_string(i));
      for (std::size_t k = 0; k < omega[i].v.size(); ++k)
        omega[i].v[k] -= grads[i].v[k] * deltas[i].v[k];
    }
  }

  // Omega += max(omega, 0) / ((theta_end - theta*)^2 + xi); anchors move to
  // theta_end and the path integral resets. Negative contributions clamp to
  // zero so importance stays a weight, not a sign.
  void consolidate(const ParamStore& theta_end) {
    for (std::size_t i = 0; i < omega.size(); ++i) {
      const auto& now = theta_end.entry(i).value.v;
      for (std::size_t k = 0; k < omega[i].v.size(); ++k) {
        float w = std::max(omega[i].v[k], 0.0f);
        float d = now[k] - anchor[i].v[k];
        importance[i].v[k] += w / (d * d + xi);
        omega[i].v[k] = 0.0f;
      }
      anchor[i].v = now;
    }
  }
};

// total = task_loss + c * sum Omega ⊙ (theta - theta*)^2 over the shared vars.
inline Var<float> si_loss(Tape<float>& t, Var<float> task_loss,
                          const TapedParams<float>& shared, const SIState& state) {
  if (state.c == 0.0f) return task_loss;
  Var<float> reg;
  for (std::size_t i = 0; i < shared.vars.size(); ++i) {
    if (!shared.store->entry(i).trainable) continue;
    Var<float> d = t.sub(shared.vars[i], t.constant(state.anchor[i]));
    Var<float> term = t.sum_all(t.mul(t.constant(state.importance[i]), t.mul(d, d)));
    reg = reg.valid() ? t.add(reg, term) : term;
  }
  if (!reg.valid()) return task_loss;
  return t.add(task_loss, t.scale(reg, state.c));
}

// Optimizer for the joint (trunk + head) phase, following the configured
// choice the same way the head-only trainer does.
struct JointOpt {
  bool adam;
  Sgd sgd;
  Adam ad;
  explicit JointOpt(const cl::TrainConfig& cfg)
      : adam(cfg.adam), sgd(cfg.lr, cfg.momentum, /*nesterov=*/true), ad(cfg.lr) {}
  void step(ParamStore& store, const std::vector<Tensor>& grads) {
    if (adam)
      ad.step(store, grads);
    else
      sgd.step(store, grads);
  }
};

// One joint optimizer step over trunk and head on a single minibatch; both
// parameter sets move. With `si`, the regularizer joins the loss and the
// path integral records this step.
inline void fine_tune_step(const nn::NetworkSpec& spec, ParamStore& shared, ParamStore& phi,
                           JointOpt& trunk_opt, JointOpt& head_opt, const std::vector<float>& xb,
                           const std::vector<int>& yb, int bs, SIState* si) {
  Tape<float> t;
  TapedParams<float> sh = lift(t, shared);
  TapedParams<float> ph = lift(t, phi);
  Var<float> x = nn::input_batch(t, spec, xb, bs);
  Var<float> logits = cl::head_logits(t, spec, ph, cl::shared_features(t, spec, sh, x));
  Var<float> loss = ad::softmax_cross_entropy(t, logits, yb);
  if (si) loss = si_loss(t, loss, sh, *si);
  if (!std::isfinite(loss.scalar())) throw NumericError("fine-tuning step diverged");
  std::vector<Var<float>> wrt = sh.vars;
  wrt.insert(wrt.end(), ph.vars.begin(), ph.vars.end());
  auto grads = t.backward(loss, wrt);
  std::vector<Var<float>> gs(grads.begin(), grads.begin() + sh.vars.size());
  std::vector<Var<float>> gp(grads.begin() + sh.vars.size(), grads.end());
  auto gsv = grad_values(shared, gs);
  auto gpv = grad_values(phi, gp);
  std::vector<Tensor> before;
  if (si)
    for (std::size_t i = 0; i < shared.size(); ++i) before.push_back(shared.entry(i).value);
  trunk_opt.step(shared, gsv);
  head_opt.step(phi, gpv);
  if (si) {
    std::vector<Tensor> deltas;
    for (std::size_t i = 0; i < shared.size(); ++i) {
      Tensor d(shared.entry(i).value.shape);
      for (std::size_t k = 0; k < d.v.size(); ++k)
        d.v[k] = shared.entry(i).value.v[k] - before[i].v[k];
      deltas.push_back(std::move(d));
    }
    si->accumulate(gsv, deltas);
  }
  t.release();
}

// Trains one task with the trunk unfrozen (fine-tuning / SI).
inline cl::TaskHead train_task_joint(const nn::NetworkSpec& spec, ParamStore& shared,
                                     const data::TaskDataset& task,
                                     const cl::TrainConfig& cfg, Rng rng, SIState* si) {
  cl::TaskHead head;
  head.id = task.id;
  head.global_labels = task.global_labels;
  Rng init = rng.substream("init");
  head.phi = cl::init_specific(spec, task.nclasses, init);

  JointOpt trunk_opt(cfg);
  JointOpt head_opt(cfg);
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
      fine_tune_step(spec, shared, head.phi, trunk_opt, head_opt, xb, yb, bs, si);
    }
  }
  if (si) si->consolidate(shared);
  return head;
}

struct StrategyConfig {
  Strategy strategy = Strategy::Frozen;
  TrunkInit init = TrunkInit::Random;
  cl::TrainConfig train;
  float si_c = 0.1f;
  float si_xi = 0.1f;
  std::uint64_t seed = 0;
};

// "Standard" trunk: conventional joint training on one task, head discarded.
inline ParamStore task1_trunk(const nn::NetworkSpec& spec, const data::TaskDataset& task,
                              const cl::TrainConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Rng init = rng.substream("trunk-init");
  ParamStore shared = cl::init_shared(spec, init);
  train_task_joint(spec, shared, task, cfg, rng.substream("trunk-task"), nullptr);
  return shared;
}

// Continual phase under one strategy/init combination. `meta_shared` supplies
// the trunk for TrunkInit::Meta and is ignored otherwise. The trained model
// is left in `out` when non-null.
inline cl::RunReport run_strategy(const nn::NetworkSpec& spec, const ParamStore* meta_shared,
                                  const data::CLSequence& seq, const StrategyConfig& cfg,
                                  cl::Model* out = nullptr) {
  Rng root(cfg.seed);
  cl::Model m;
  m.spec = spec;
  switch (cfg.init) {
    case TrunkInit::Meta:
      if (!meta_shared) throw ConfigError("meta trunk initialization needs a checkpoint");
      m.shared = *meta_shared;
      break;
    case TrunkInit::Random: {
      Rng init = root.substream("trunk-init");
      m.shared = cl::init_shared(spec, init);
      break;
    }
    case TrunkInit::Task1:
      m.shared = task1_trunk(spec, seq.tasks.at(0), cfg.train, cfg.seed);
      break;
  }

  SIState si;
  bool use_si = cfg.strategy == Strategy::SI;
  if (use_si) si.init(m.shared, cfg.si_c, cfg.si_xi);

  cl::RunReport report;
  for (const auto& task : seq.tasks) {
    Rng task_rng = root.substream("task", task.id);
    if (cfg.strategy == Strategy::Frozen)
      m.heads.push_back(cl::train_task(m, task, cfg.train, task_rng));
    else
      m.heads.push_back(
          train_task_joint(spec, m.shared, task, cfg.train, task_rng, use_si ? &si : nullptr));
    std::vector<double> ag, cond;
    for (std::size_t i = 0; i < m.heads.size(); ++i) {
      ag.push_back(cl::evaluate_task(m, seq.tasks[i], cl::Protocol::Agnostic));
      cond.push_back(cl::evaluate_task(m, seq.tasks[i], cl::Protocol::Conditioned));
    }
    report.agnostic.push_back(std::move(ag));
    report.conditioned.push_back(std::move(cond));
  }
  if (out) *out = std::move(m);
  return report;
}

// Scratch(TA): one independent full network per task, trained jointly from
// its own random initialization; Eq. 6 then spans the per-network heads.
inline cl::RunReport run_scratch_ta(const nn::NetworkSpec& spec, const data::CLSequence& seq,
                                    const cl::TrainConfig& cfg, std::uint64_t seed) {
  Rng root(seed);
  std::vector<cl::Model> nets;
  cl::RunReport report;

  auto eval_task = [&](const data::TaskDataset& task, bool conditioned) {
    const int dim = task.input_dim();
    long correct = 0;
    const int eval_batch = 256;
    for (int start = 0; start < task.test_count(); start += eval_batch) {
      int bs = std::min(eval_batch, task.test_count() - start);
      std::vector<float> xb(task.test_x.begin() + static_cast<std::size_t>(start) * dim,
                            task.test_x.begin() + static_cast<std::size_t>(start + bs) * dim);
      // Each network produces its own head's logits for the batch.
      std::vector<std::vector<std::vector<float>>> outs(bs);
      for (auto& net : nets) {
        auto one = cl::batch_head_outputs(net, xb, bs);
        for (int k = 0; k < bs; ++k) outs[k].push_back(std::move(one[k][0]));
      }
      for (int k = 0; k < bs; ++k) {
        int truth = task.global_labels[task.test_y[start + k]];
        int pred;
        if (conditioned) {
          const auto& own = outs[k][task.id];
          auto local = ad::argmax_rows<float>({1, static_cast<int>(own.size())}, own);
          pred = nets[task.id].heads[0].global_labels[local[0]];
        } else {
          auto [h, j] = cl::decide_concat(outs[k]);
          pred = nets[h].heads[0].global_labels[j];
        }
        correct += (pred == truth);
      }
    }
    return task.test_count() ? 100.0 * static_cast<double>(correct) / task.test_count()
                             : 0.0;
  };

  for (const auto& task : seq.tasks) {
    Rng task_rng = root.substream("scratch", task.id);
    cl::Model net;
    net.spec = spec;
    Rng init = task_rng.substream("trunk-init");
    net.shared = cl::init_shared(spec, init);
    net.heads.push_back(
        train_task_joint(spec, net.shared, task, cfg, task_rng.substream("train"), nullptr));
    nets.push_back(std::move(net));

    std::vector<double> ag, cond;
    for (std::size_t i = 0; i < nets.size(); ++i) {
      ag.push_back(eval_task(seq.tasks[i], false));
      cond.push_back(eval_task(seq.tasks[i], true));
    }
    report.agnostic.push_back(std::move(ag));
    report.conditioned.push_back(std::move(cond));
  }
  return report;
}

}  // namespace sam::strat
