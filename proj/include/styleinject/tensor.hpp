// Copyright (c) 2026 The StyleInject Lab Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "styleinject/errors.hpp"

namespace styleinject {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

namespace detail {

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward pass or zero_grad()
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t id = next_node_id();
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

// Dense row-major tensor of doubles. Copies share storage (handle
// semantics), so a parameter can be referenced from a model and an optimizer
// at the same time; use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor of shape " + shape_string(shape) +
                           " needs " + std::to_string(shape_numel(shape)) +
                           " values, got " + std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t numel() const { return node().values.size(); }
  std::size_t dim(std::size_t axis) const { return node().shape.at(axis); }
  std::uint64_t id() const { return node().id; }

  std::span<const double> values() const { return node().values; }
  // Direct buffer access for optimizers, finite-difference probes and
  // initialisation. Must not be used while a tape holds this tensor.
  std::span<double> mutable_values() { return node().values; }
  double item() const {
    if (numel() != 1) {
      throw ContractError("item() on tensor of shape " +
                          shape_string(shape()));
    }
    return node().values[0];
  }
  double operator[](std::size_t i) const { return node().values[i]; }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool flag) { node().requires_grad = flag; }
  bool is_leaf() const { return node().is_leaf; }

  bool has_grad() const { return !node().grad.empty(); }
  std::span<const double> grad() const { return node().grad; }
  void zero_grad() { node().grad.assign(numel(), 0.0); }
  void clear_grad() { node().grad.clear(); }

  Tensor clone() const {
    return Tensor(node().shape, node().values, node().requires_grad);
  }

  // Same storage, no autograd history and no gradient tracking.
  Tensor detach() const { return Tensor(node().shape, node().values); }

  const detail::NodePtr& node_ptr() const { return node_; }

 private:
  friend class Tape;
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
  detail::Node& node() const {
    if (!node_) throw ContractError("use of an undefined tensor");
    return *node_;
  }

  detail::NodePtr node_;

  friend Tensor make_op_result(Shape, std::vector<double>, const char*,
                               std::initializer_list<Tensor>,
                               std::function<void(std::span<const double>,
                                                  std::vector<std::vector<double>>&)>);
};

// Backward rule: receives d(loss)/d(output) and accumulates into one buffer
// per input. A buffer is empty when the matching input needs no gradient.
using BackwardFn = std::function<void(std::span<const double> grad_output,
                                      std::vector<std::vector<double>>& grad_inputs)>;

struct TapeEntry {
  const char* op = "";
  std::vector<detail::NodePtr> inputs;
  detail::NodePtr output;
  BackwardFn backward;
};

// Records differentiable operations while a Recording guard is alive on the
// current thread. Entries are appended in execution order, so the list is
// topologically sorted by construction.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Recording {
   public:
    explicit Recording(Tape& tape) : previous_(current()) { current() = &tape; }
    ~Recording() { current() = previous_; }
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    Tape* previous_;
  };

  [[nodiscard]] Recording record() { return Recording(*this); }

  static Tape* active() { return current(); }

  std::span<const TapeEntry> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  void push(TapeEntry entry) { entries_.push_back(std::move(entry)); }

  // Reverse sweep from a scalar loss. Leaf gradients accumulate across calls.
  void backward(const Tensor& loss) const {
    if (!loss.defined() || loss.numel() != 1) {
      throw ContractError(
          "backward requires a scalar loss, got shape " +
          (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
    }
    const auto& loss_node = loss.node_ptr();
    if (loss_node->is_leaf) {
      if (loss_node->requires_grad) {
        const double one = 1.0;
        accumulate_leaf(*loss_node, std::span<const double>(&one, 1));
      }
      return;
    }
    auto produced = std::find_if(entries_.begin(), entries_.end(),
                                 [&](const TapeEntry& e) { return e.output == loss_node; });
    if (produced == entries_.end()) {
      throw ContractError("backward: loss was not produced on this tape");
    }

    std::unordered_map<const detail::Node*, std::vector<double>> grads;
    grads[loss_node.get()] = {1.0};
    for (auto it = std::make_reverse_iterator(produced + 1); it != entries_.rend(); ++it) {
      auto found = grads.find(it->output.get());
      if (found == grads.end()) continue;
      std::vector<double> grad_out = std::move(found->second);
      grads.erase(found);

      std::vector<std::vector<double>> grad_in(it->inputs.size());
      for (std::size_t i = 0; i < it->inputs.size(); ++i) {
        if (it->inputs[i]->requires_grad) grad_in[i].assign(it->inputs[i]->values.size(), 0.0);
      }
      it->backward(grad_out, grad_in);

      for (std::size_t i = 0; i < it->inputs.size(); ++i) {
        auto& input = *it->inputs[i];
        if (!input.requires_grad) continue;
        if (input.is_leaf) {
          accumulate_leaf(input, grad_in[i]);
        } else {
          auto& slot = grads[&input];
          if (slot.empty()) {
            slot = std::move(grad_in[i]);
          } else {
            for (std::size_t k = 0; k < slot.size(); ++k) slot[k] += grad_in[i][k];
          }
        }
      }
    }
  }

 private:
  static void accumulate_leaf(detail::Node& node, std::span<const double> g) {
    if (node.grad.empty()) node.grad.assign(node.values.size(), 0.0);
    for (std::size_t k = 0; k < g.size(); ++k) node.grad[k] += g[k];
  }

  static Tape*& current() {
    thread_local Tape* tape = nullptr;
    return tape;
  }

  std::vector<TapeEntry> entries_;
};

inline void backward(const Tape& tape, const Tensor& loss) { tape.backward(loss); }

// Builds an op output. The entry is recorded only when a tape is active and
// at least one input requires a gradient.
inline Tensor make_op_result(Shape shape, std::vector<double> values, const char* op,
                             std::initializer_list<Tensor> inputs, BackwardFn fn) {
  Tensor out(std::move(shape), std::move(values));
  Tape* tape = Tape::active();
  if (!tape) return out;
  bool needs_grad = std::any_of(inputs.begin(), inputs.end(),
                                [](const Tensor& t) { return t.requires_grad(); });
  if (!needs_grad) return out;
  out.node_->requires_grad = true;
  out.node_->is_leaf = false;
  TapeEntry entry;
  entry.op = op;
  entry.output = out.node_;
  for (const auto& t : inputs) entry.inputs.push_back(t.node_ptr());
  entry.backward = std::move(fn);
  tape->push(std::move(entry));
  return out;
}

}  // namespace styleinject
