#pragma once

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <string_view>

#include "pssc/tensor.hpp"

namespace pssc {

template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
};

/// Named parameters, iterated in name order so serialization and
/// optimizer updates are deterministic.
template <typename T>
class ParameterTable {
 public:
  using Map = std::map<std::string, Parameter<T>, std::less<>>;

  Parameter<T>& add(const std::string& name, Tensor<T> init);
  Parameter<T>& at(std::string_view name);
  const Parameter<T>& at(std::string_view name) const;
  bool contains(std::string_view name) const { return params_.find(name) != params_.end(); }
  std::size_t size() const noexcept { return params_.size(); }
  std::size_t num_values() const;

  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  template <typename U>
  ParameterTable<U> cast() const {
    ParameterTable<U> out;
    for (const auto& [name, p] : params_) out.add(name, p.value.template cast<U>());
    return out;
  }

  /// Values equal element for element (bitwise for identical types).
  bool same_values(const ParameterTable& other) const;

 private:
  Map params_;
};

template <typename T>
class Tape;

/// Handle to a node on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  int dim(int axis) const { return value().dim(axis); }
};

/// Reverse-mode tape. Every op appends a node; backward() walks the nodes in
/// reverse creation order. Nodes whose inputs need no gradient record no
/// backward function, so evaluating frozen networks costs a plain forward.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad, const Tensor<T>& out_value)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  /// Leaf whose gradient is kept on the tape (read it with grad()).
  Var<T> variable(Tensor<T> value);
  /// Leaf bound to a parameter; backward() accumulates into param.grad when
  /// `trainable` is set.
  Var<T> parameter(Parameter<T>& param, bool trainable = true);

  /// Records an op result. `fn` may be empty when no parent needs a gradient.
  Var<T> record(Tensor<T> value, bool requires_grad, BackwardFn fn);

  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }
  const Tensor<T>& value(Var<T> v) const { return nodes_[v.id].value; }
  /// Gradient of the last backward() root with respect to v (empty if unreached).
  const Tensor<T>& grad(Var<T> v) const { return nodes_[v.id].grad; }

  /// Adds `g` into the gradient slot of `v` (allocated on first use).
  void accumulate(Var<T> v, const Tensor<T>& g);
  /// Mutable gradient buffer for `v`, zero-initialised on first access.
  Tensor<T>& grad_buffer(Var<T> v);

  /// Seeds d(root)/d(root) = 1 for a single-element root and propagates.
  void backward(Var<T> root);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
  };
  std::deque<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(*this);
}

extern template class ParameterTable<float>;
extern template class ParameterTable<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace pssc
