#pragma once

#include <map>
#include <string>
#include <vector>

#include "binaural/core/tape.hpp"
#include "binaural/core/tensor.hpp"

namespace binaural {

/// Named parameter tensors kept in registration order. The same structure
/// doubles as a gradient buffer (zeros_like) and as optimizer state.
template <typename T>
class ParamStore {
 public:
  void add(const std::string& name, Tensor<T> init) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name: " + name);
    index_.emplace(name, tensors_.size());
    names_.push_back(name);
    tensors_.push_back(std::move(init));
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  Tensor<T>& operator[](const std::string& name) { return tensors_[lookup(name)]; }
  const Tensor<T>& operator[](const std::string& name) const { return tensors_[lookup(name)]; }

  Tensor<T>& at(std::size_t i) { return tensors_[i]; }
  const Tensor<T>& at(std::size_t i) const { return tensors_[i]; }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return tensors_.size(); }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

  /// Scalar count over parameters whose name starts with `prefix`.
  std::int64_t scalar_count(const std::string& prefix) const {
    std::int64_t n = 0;
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i].rfind(prefix, 0) == 0) n += tensors_[i].numel();
    return n;
  }

  ParamStore zeros_like() const {
    ParamStore z;
    for (std::size_t i = 0; i < names_.size(); ++i) z.add(names_[i], Tensor<T>(tensors_[i].shape()));
    return z;
  }

  void set_zero() {
    for (auto& t : tensors_) t.fill(T{});
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (std::size_t i = 0; i < names_.size(); ++i) out.add(names_[i], tensors_[i].template cast<U>());
    return out;
  }

  /// Registers parameter `name` on the tape; gradients go to `grads` when given.
  ad::Var<T> bind(ad::Tape<T>& tape, const std::string& name, ParamStore* grads) const {
    return tape.parameter((*this)[name], grads ? &(*grads)[name] : nullptr);
  }

  bool same_layout(const ParamStore& o) const {
    if (names_ != o.names_) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i)
      if (tensors_[i].shape() != o.tensors_[i].shape()) return false;
    return true;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::map<std::string, std::size_t> index_;
};

/// Binds parameters of one store to a tape under a common name prefix.
template <typename T>
struct Binder {
  ad::Tape<T>& tape;
  const ParamStore<T>& params;
  ParamStore<T>* grads = nullptr;
  std::string prefix;

  ad::Var<T> operator()(const std::string& name) const { return params.bind(tape, prefix + name, grads); }
  Binder scoped(const std::string& sub) const { return Binder{tape, params, grads, prefix + sub}; }
};

}  // namespace binaural
