#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "binaural/core/tensor.hpp"

namespace binaural::ad {

template <typename T>
class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::int32_t id = -1;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
  std::int64_t dim(std::size_t i) const { return value().dim(i); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Records a forward computation and replays it in reverse to accumulate
/// gradients. Parameters are registered with a gradient sink that receives
/// their accumulated gradient once backward() has passed them.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(Tensor<T> v) {
    Node n;
    n.owned = std::move(v);
    return push(std::move(n));
  }

  /// Borrowed constant; `v` must outlive the tape.
  Var<T> constant_ref(const Tensor<T>& v) {
    Node n;
    n.external = &v;
    return push(std::move(n));
  }

  /// Borrowed parameter value; its gradient is added into `*sink` during
  /// backward. A null sink (or a grad-disabled tape) makes it a constant.
  Var<T> parameter(const Tensor<T>& v, Tensor<T>* sink) {
    Node n;
    n.external = &v;
    if (grad_enabled_ && sink != nullptr) {
      n.needs_grad = true;
      n.sink = sink;
    }
    return push(std::move(n));
  }

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()),
                  std::move(fn));
  }

  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    if (grad_enabled_) {
      for (const auto& in : inputs) {
        if (in.tape != this) throw ShapeError("tape: input recorded on a different tape");
        if (nodes_[static_cast<std::size_t>(in.id)].needs_grad) n.needs_grad = true;
      }
      if (n.needs_grad) n.backward = std::move(fn);
    }
    return push(std::move(n));
  }

  const Tensor<T>& value(Var<T> v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    return n.external ? *n.external : n.owned;
  }

  bool needs_grad(Var<T> v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

  /// Gradient buffer of `v`, zero-initialized on first access; nullptr when
  /// `v` does not participate in differentiation.
  Tensor<T>* grad_if(Var<T> v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.needs_grad) return nullptr;
    if (n.grad.empty() && value(v).numel() > 0) n.grad = Tensor<T>(value(v).shape());
    return &n.grad;
  }

  const Tensor<T>& grad(Var<T> v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }

  void backward(Var<T> root) {
    if (value(root).numel() != 1) throw ShapeError("backward: root must be a scalar");
    backward(root, Tensor<T>(value(root).shape(), T{1}));
  }

  void backward(Var<T> root, Tensor<T> seed) {
    if (!grad_enabled_) throw ConfigError("backward on a grad-disabled tape");
    value(root).require_same_shape(seed, "backward seed");
    Node& r = nodes_[static_cast<std::size_t>(root.id)];
    if (!r.needs_grad) return;
    r.grad = std::move(seed);
    for (std::int32_t i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.backward) {
        // Keep a stable reference: backward may not grow nodes_, so this is safe.
        n.backward(*this, n.grad);
      }
      if (n.sink != nullptr) *n.sink += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

  /// Sign patterns of non-smooth activations are folded into this hash when
  /// tracking is enabled; gradient checks use it to detect kink crossings.
  void set_track_kinks(bool on) { track_kinks_ = on; }
  bool track_kinks() const { return track_kinks_; }
  std::uint64_t kink_signature() const { return kink_hash_; }
  void mix_kink_bits(std::span<const T> pre_activation) {
    for (T x : pre_activation) {
      kink_hash_ ^= (x > T{0}) ? 0x9e3779b97f4a7c15ULL : 0x7f4a7c159e3779b9ULL;
      kink_hash_ *= 0x100000001b3ULL;
    }
  }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    Tensor<T>* sink = nullptr;
    BackwardFn backward;
    bool needs_grad = false;
  };

  Var<T> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
  bool grad_enabled_;
  bool track_kinks_ = false;
  std::uint64_t kink_hash_ = 0xcbf29ce484222325ULL;
};

}  // namespace binaural::ad
