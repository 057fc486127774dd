#include "pssc/autograd.hpp"

#include <cstring>
#include <stdexcept>

namespace pssc {

template <typename T>
Parameter<T>& ParameterTable<T>::add(const std::string& name, Tensor<T> init) {
  auto [it, inserted] = params_.try_emplace(name);
  if (!inserted) throw std::invalid_argument("duplicate parameter '" + name + "'");
  it->second.value = std::move(init);
  return it->second;
}

template <typename T>
Parameter<T>& ParameterTable<T>::at(std::string_view name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

template <typename T>
const Parameter<T>& ParameterTable<T>::at(std::string_view name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

template <typename T>
std::size_t ParameterTable<T>::num_values() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

template <typename T>
void ParameterTable<T>::zero_grad() {
  for (auto& [name, p] : params_) {
    if (p.grad.shape() != p.value.shape()) {
      p.grad = Tensor<T>(p.value.shape());
    } else {
      p.grad.fill(T(0));
    }
  }
}

template <typename T>
bool ParameterTable<T>::same_values(const ParameterTable& other) const {
  if (params_.size() != other.params_.size()) return false;
  auto a = params_.begin();
  auto b = other.params_.begin();
  for (; a != params_.end(); ++a, ++b) {
    if (a->first != b->first || a->second.value.shape() != b->second.value.shape()) return false;
    const auto& va = a->second.value;
    const auto& vb = b->second.value;
    if (std::memcmp(va.data(), vb.data(), va.size() * sizeof(T)) != 0) return false;
  }
  return true;
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return record(std::move(value), false, {});
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  Var<T> v = record(std::move(value), true, {});
  return v;
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& param, bool trainable) {
  Var<T> v = record(param.value, trainable, {});
  if (trainable) nodes_[v.id].param = &param;
  return v;
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, bool requires_grad, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(Var<T> v) {
  Node& n = nodes_[v.id];
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Tape<T>::accumulate(Var<T> v, const Tensor<T>& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (g.size() != n.value.size()) {
    throw std::logic_error("gradient shape " + shape_string(g.shape()) + " does not match value " +
                           shape_string(n.value.shape()));
  }
  Tensor<T>& dst = grad_buffer(v);
  T* d = dst.data();
  const T* s = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

template <typename T>
void Tape<T>::backward(Var<T> root) {
  if (root.tape != this) throw std::invalid_argument("root belongs to a different tape");
  if (nodes_[root.id].value.size() != 1) throw std::invalid_argument("backward root must be a scalar");
  for (auto& n : nodes_) n.grad = Tensor<T>();
  if (!nodes_[root.id].requires_grad) return;
  grad_buffer(root)[0] = T(1);
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.empty() && !n.value.empty()) continue;
    if (n.backward) n.backward(*this, n.grad, n.value);
    if (n.param != nullptr) {
      Parameter<T>& p = *n.param;
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor<T>(p.value.shape());
      for (std::size_t k = 0; k < p.grad.size(); ++k) p.grad[k] += n.grad[k];
    }
  }
}

template class ParameterTable<float>;
template class ParameterTable<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace pssc
