#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <vector>

#include "unetmer/common.hpp"

namespace unetmer {

// Dense row-major n-d array. Activations use [N, C, H, W], token
// sequences [N, T, D], label maps [H, W] or [N, H, W].
template <class T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)),
        data_(std::accumulate(shape_.begin(), shape_.end(), std::size_t{1},
                              std::multiplies<>())) {}

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check(data_.size() == count(shape_), "tensor data size does not match shape");
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, T value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  T& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  Tensor reshaped(std::vector<std::size_t> shape) const {
    check(count(shape) == numel(), "reshape changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> t(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) t[i] = static_cast<U>(data_[i]);
    return t;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << ']';
    return os.str();
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

template <class T>
bool tensors_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace unetmer
