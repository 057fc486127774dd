#include "pssc/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace pssc {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  if (data_.size() != shape_size(shape_)) {
    throw std::invalid_argument("tensor data has " + std::to_string(data_.size()) +
                                " elements, shape " + shape_string(shape_) + " needs " +
                                std::to_string(shape_size(shape_)));
  }
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  Tensor out(std::move(shape));
  out.data_ = data_;
  return out;
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> take_sample(const Tensor<T>& batch, int index) {
  if (batch.rank() < 1 || index < 0 || index >= batch.dim(0)) {
    throw std::out_of_range("sample index out of range");
  }
  Shape shape = batch.shape();
  shape[0] = 1;
  const std::size_t stride = shape_size(shape);
  std::vector<T> values(batch.data() + stride * index, batch.data() + stride * (index + 1));
  return Tensor<T>(std::move(shape), std::move(values));
}

template <typename T>
Tensor<T> concat_batch(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_batch needs at least one tensor");
  Shape shape = parts.front().shape();
  int total = 0;
  std::vector<T> values;
  for (const auto& p : parts) {
    Shape s = p.shape();
    s[0] = shape[0];
    if (s != shape) throw std::invalid_argument("concat_batch shape mismatch");
    total += p.dim(0);
    values.insert(values.end(), p.storage().begin(), p.storage().end());
  }
  shape[0] = total;
  return Tensor<T>(std::move(shape), std::move(values));
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> take_sample(const Tensor<float>&, int);
template Tensor<double> take_sample(const Tensor<double>&, int);
template Tensor<float> concat_batch(std::span<const Tensor<float>>);
template Tensor<double> concat_batch(std::span<const Tensor<double>>);

}  // namespace pssc
