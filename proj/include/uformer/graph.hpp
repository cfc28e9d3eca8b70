#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "uformer/tensor.hpp"

namespace uformer {

template <std::floating_point T>
class Graph;

// Lightweight handle to a node on a Graph tape. Copyable, trivially cheap;
// all storage lives in the graph.
template <std::floating_point T>
struct Value {
  Graph<T>* graph = nullptr;
  std::int64_t id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Tensor<T>& val() const;
  const Shape& shape() const { return val().shape(); }
};

template <std::floating_point T>
struct CValue {
  Value<T> re, im;
};

// Define-by-run reverse-mode tape. Every op appends one node holding the
// forward result and a closure that scatters the node's gradient back to its
// parents. backward() seeds a scalar root with 1 and replays the tape in
// reverse; node order is already topological because ops only consume
// existing nodes.
template <std::floating_point T>
class Graph {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void()> backward;
    std::vector<std::int64_t> parents;
    std::string name;
    bool needs_grad = false;
    bool grad_ready = false;
  };

  // Constants and parameters enter the tape as leaves.
  Value<T> leaf(Tensor<T> v, bool needs_grad, std::string label = "leaf") {
    return emplace(std::move(v), needs_grad, {}, nullptr, std::move(label));
  }

  Value<T> emplace(Tensor<T> v, bool needs_grad,
                   std::vector<std::int64_t> parents,
                   std::function<void()> backward, std::string op_name) {
    if (finite_checks_ && !v.all_finite())
      throw NumericError("non-finite values out of " + scoped(op_name));
    Node n;
    n.value = std::move(v);
    n.backward = std::move(backward);
    n.parents = std::move(parents);
    n.name = scoped(op_name);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Value<T>{this, static_cast<std::int64_t>(nodes_.size()) - 1};
  }

  Node& node(std::int64_t id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(std::int64_t id) const {
    return nodes_[static_cast<std::size_t>(id)];
  }
  std::int64_t size() const { return static_cast<std::int64_t>(nodes_.size()); }

  // Gradient accumulation slot for a node, allocated on first touch.
  Tensor<T>& grad(std::int64_t id) {
    Node& n = node(id);
    if (!n.grad_ready) {
      n.grad = Tensor<T>(n.value.shape());
      n.grad_ready = true;
    }
    return n.grad;
  }

  bool has_grad(std::int64_t id) const { return node(id).grad_ready; }

  // Reverse sweep from a scalar root.
  void backward(Value<T> root) {
    require<ShapeError>(root.graph == this, "backward root from another graph");
    require<ShapeError>(root.val().numel() == 1,
                        "backward root must be scalar, got " +
                            shape_str(root.val().shape()));
    grad(root.id)[0] = T(1);
    for (std::int64_t id = root.id; id >= 0; --id) {
      Node& n = node(id);
      if (!n.grad_ready || !n.backward) continue;
      n.backward();
      if (finite_checks_) {
        for (std::int64_t p : n.parents) {
          if (node(p).grad_ready && !node(p).grad.all_finite())
            throw NumericError("non-finite gradient into " + node(p).name +
                               " from " + n.name);
        }
      }
    }
  }

  // Does any ancestor of this node carry gradients? Lets ops skip backward
  // closures for constant subgraphs.
  bool tracks(std::initializer_list<Value<T>> inputs) const {
    for (const Value<T>& v : inputs)
      if (v.valid() && node(v.id).needs_grad) return true;
    return false;
  }

  void push_scope(const std::string& s) { scopes_.push_back(s); }
  void pop_scope() { scopes_.pop_back(); }

  void set_finite_checks(bool on) { finite_checks_ = on; }

 private:
  std::string scoped(const std::string& op) const {
    std::string out;
    for (const auto& s : scopes_) {
      out += s;
      out += '/';
    }
    out += op;
    return out;
  }

  std::vector<Node> nodes_;
  std::vector<std::string> scopes_;
  bool finite_checks_ = true;
};

template <std::floating_point T>
const Tensor<T>& Value<T>::val() const {
  return graph->node(id).value;
}

// RAII helper that prefixes op names with the current layer path, so numeric
// failures report e.g. "enc2/cplx_conv/conv2d" instead of a bare op name.
template <std::floating_point T>
class Scope {
 public:
  Scope(Graph<T>& g, std::string name) : g_(&g) { g_->push_scope(name); }
  ~Scope() { g_->pop_scope(); }
  Scope(const Scope&) = delete;
  Scope& operator=(const Scope&) = delete;

 private:
  Graph<T>* g_;
};

}  // namespace uformer
