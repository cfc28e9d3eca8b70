#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "uformer/graph.hpp"
#include "uformer/rng.hpp"
#include "uformer/tensor.hpp"

namespace uformer {

// Flat registry of named tensors: trainable weights plus persistent buffers
// (batch norm running statistics). Slots are stable integer handles; names
// are unique and drive checkpoint layout and branch audits.
template <std::floating_point T>
class ParameterStore {
 public:
  struct Slot {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;
  };

  int add(std::string name, Tensor<T> value, bool trainable = true) {
    require<ConfigError>(!index_.count(name),
                         "duplicate parameter name: " + name);
    Slot s;
    s.name = std::move(name);
    s.grad = Tensor<T>(value.shape());
    s.value = std::move(value);
    s.trainable = trainable;
    slots_.push_back(std::move(s));
    const int id = static_cast<int>(slots_.size()) - 1;
    index_.emplace(slots_.back().name, id);
    return id;
  }

  Slot& at(int id) { return slots_[static_cast<std::size_t>(id)]; }
  const Slot& at(int id) const { return slots_[static_cast<std::size_t>(id)]; }

  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }

  std::size_t size() const { return slots_.size(); }

  std::int64_t trainable_count() const {
    std::int64_t n = 0;
    for (const auto& s : slots_)
      if (s.trainable) n += s.value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& s : slots_)
      std::fill(s.grad.vec().begin(), s.grad.vec().end(), T(0));
  }

  double grad_norm() const {
    double acc = 0.0;
    for (const auto& s : slots_) {
      if (!s.trainable) continue;
      for (std::int64_t i = 0; i < s.grad.numel(); ++i) {
        const double v = static_cast<double>(s.grad[i]);
        acc += v * v;
      }
    }
    return std::sqrt(acc);
  }

  auto begin() { return slots_.begin(); }
  auto end() { return slots_.end(); }
  auto begin() const { return slots_.begin(); }
  auto end() const { return slots_.end(); }

 private:
  std::vector<Slot> slots_;
  std::unordered_map<std::string, int> index_;
};

// Per-forward-pass state: the tape, the store, train/eval switches, and the
// dropout stream. Parameters enter the tape lazily, once per graph, so the
// same slot used twice shares one node and its gradients accumulate.
template <std::floating_point T>
struct RunContext {
  RunContext(Graph<T>& g, ParameterStore<T>& p) : graph(g), params(p) {}

  Graph<T>& graph;
  ParameterStore<T>& params;
  bool train = false;
  bool update_stats = false;
  bool no_grad = false;  // pure evaluation, e.g. finite-difference probes
  double dropout = 0.0;
  double bn_momentum = 0.1;  // running-statistics update rate
  Rng* rng = nullptr;

  Value<T> use(int slot) {
    auto it = bound_.find(slot);
    if (it != bound_.end()) return Value<T>{&graph, it->second};
    auto& s = params.at(slot);
    Value<T> v = graph.leaf(s.value, s.trainable && !no_grad, s.name);
    bound_.emplace(slot, v.id);
    return v;
  }

  // Copies tape gradients back into the store after graph.backward().
  void harvest_grads() {
    for (const auto& [slot, node_id] : bound_) {
      if (!graph.has_grad(node_id)) continue;
      auto& s = params.at(slot);
      const Tensor<T>& gsrc = graph.grad(node_id);
      for (std::int64_t i = 0; i < gsrc.numel(); ++i) s.grad[i] += gsrc[i];
    }
  }

 private:
  std::unordered_map<int, std::int64_t> bound_;
};

// Uniform Kaiming-style initialisation, U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
template <std::floating_point T>
Tensor<T> init_uniform(const Shape& shape, std::int64_t fan_in, Rng& rng) {
  require(fan_in > 0, "fan_in must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor<T> t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace uformer
