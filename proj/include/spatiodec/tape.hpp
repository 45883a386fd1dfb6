#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <utility>

#include "spatiodec/tensor.hpp"

namespace spatiodec {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
/// lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const { return tape_->value(id_); }
  // Zeros until a backward pass reaches this value.
  const Tensor<T>& grad() const { return tape_->grad_buffer(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  std::uint64_t tape_id() const { return tape_->id(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode gradient tape. Nodes are appended in execution order, so the
/// record is topologically sorted by construction; backward replays it in
/// reverse. A non-recording tape evaluates values only.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  explicit Tape(bool recording = true)
      : recording_(recording), id_(next_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::uint64_t id() const { return id_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  Var<T> variable(Tensor<T> value) {
    return push(std::move(value), recording_, nullptr);
  }

  // Leaf whose gradient is added into `grad_sink` when backward finishes.
  Var<T> parameter(const Tensor<T>& value, Tensor<T>* grad_sink) {
    Var<T> v = push(value, recording_ && grad_sink != nullptr, nullptr);
    nodes_.back().sink = grad_sink;
    return v;
  }

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    if (recording_) {
      for (const auto& in : inputs) needs = needs || requires_grad(in.id());
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool wants_grad(const Var<T>& v) const { return requires_grad(v.id()); }

  Tensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.grad_ready) {
      n.grad = Tensor<T>::zeros(n.value.shape());
      n.grad_ready = true;
    }
    return n.grad;
  }

  void accumulate(const Var<T>& v, const Tensor<T>& g) {
    if (!requires_grad(v.id())) return;
    Tensor<T>& dst = grad_buffer(v.id());
    if (dst.numel() != g.numel()) {
      throw ShapeError("gradient shape " + shape_str(g.shape()) +
                       " does not match value shape " + shape_str(dst.shape()));
    }
    for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
  }

  void backward(const Var<T>& loss) {
    if (nodes_.empty()) throw ContractError("backward on an empty tape");
    if (&loss.tape() != this) throw ContractError("loss belongs to another tape");
    if (loss.value().numel() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " +
                          shape_str(loss.value().shape()));
    }
    grad_buffer(loss.id())[0] = T{1};
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.grad_ready || !n.requires_grad) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.sink) {
        if (n.sink->numel() != n.grad.numel()) {
          throw ShapeError("parameter gradient sink has the wrong shape");
        }
        for (std::size_t i = 0; i < n.grad.numel(); ++i) (*n.sink)[i] += n.grad[i];
      }
    }
    // Saved activations held by closures are released; values and grads stay
    // readable for inspection.
    for (auto& n : nodes_) n.backward = nullptr;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool grad_ready = false;
    bool requires_grad = false;
    BackwardFn backward;
    Tensor<T>* sink = nullptr;
  };

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter++;
  }

  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  bool recording_;
  std::uint64_t id_;
  std::deque<Node> nodes_;
};

}  // namespace spatiodec
