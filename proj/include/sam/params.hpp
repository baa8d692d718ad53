#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "sam/tape.hpp"
#include "sam/tensor.hpp"

namespace sam {

// Ordered collection of named tensors. Order is load-bearing: gradient
// reductions, SGD updates, and checksums all walk entries in insertion order
// so runs are reproducible. Non-trainable entries hold state such as batch
// normalization running statistics.
template <class S>
class ParamStoreT {
 public:
  struct Entry {
    std::string name;
    TensorT<S> value;
    bool trainable = true;
  };

  void add(std::string name, TensorT<S> value, bool trainable = true) {
    if (index_.count(name)) throw Error("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.push_back(Entry{std::move(name), std::move(value), trainable});
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  TensorT<S>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return entries_[it->second].value;
  }
  const TensorT<S>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return entries_[it->second].value;
  }

  std::size_t size() const { return entries_.size(); }
  Entry& entry(std::size_t i) { return entries_[i]; }
  const Entry& entry(std::size_t i) const { return entries_[i]; }

  std::size_t trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.value.size();
    return n;
  }

  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& e : entries_) {
      for (char c : e.name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
      }
      h = tensor_checksum(e.value, h);
    }
    return h;
  }

  template <class T>
  ParamStoreT<T> cast() const {
    ParamStoreT<T> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<T>(), e.trainable);
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ParamStore = ParamStoreT<float>;

// A parameter store lifted onto a tape: one Var per entry, aligned by index.
template <class S>
struct TapedParams {
  const ParamStoreT<S>* store = nullptr;
  std::vector<ad::Var<S>> vars;

  ad::Var<S> operator[](const std::string& name) const {
    for (std::size_t i = 0; i < store->size(); ++i)
      if (store->entry(i).name == name) return vars[i];
    throw Error("unknown parameter: " + name);
  }
};

template <class S>
TapedParams<S> lift(ad::Tape<S>& t, const ParamStoreT<S>& store, bool needs_grad = true) {
  TapedParams<S> out;
  out.store = &store;
  out.vars.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& e = store.entry(i);
    out.vars.push_back(t.leaf(e.value, needs_grad && e.trainable));
  }
  return out;
}

// theta' = theta - alpha * grad, built as tape nodes so the update itself is
// differentiable (the exact second-order meta-gradient path). Invalid grad
// entries (parameter absent from the loss graph) leave the var unchanged.
template <class S>
TapedParams<S> adapted_parameters(ad::Tape<S>& t, const TapedParams<S>& params,
                                  const std::vector<ad::Var<S>>& grads, S alpha,
                                  bool first_order = false) {
  if (grads.size() != params.vars.size())
    throw Error("adapted_parameters: gradient count mismatch");
  TapedParams<S> out;
  out.store = params.store;
  out.vars.reserve(params.vars.size());
  for (std::size_t i = 0; i < params.vars.size(); ++i) {
    if (!grads[i].valid()) {
      out.vars.push_back(params.vars[i]);
      continue;
    }
    ad::Var<S> g = first_order ? t.detach(grads[i]) : grads[i];
    out.vars.push_back(t.sub(params.vars[i], t.scale(g, alpha)));
  }
  return out;
}

// Reads gradient values out of the tape into plain tensors, zeros for
// parameters that did not participate in the loss.
template <class S>
std::vector<TensorT<S>> grad_values(const ParamStoreT<S>& store,
                                    const std::vector<ad::Var<S>>& grads) {
  std::vector<TensorT<S>> out;
  out.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (grads[i].valid())
      out.push_back(TensorT<S>(grads[i].shape(), grads[i].val()));
    else
      out.push_back(TensorT<S>(store.entry(i).value.shape));
  }
  return out;
}

}  // namespace sam
