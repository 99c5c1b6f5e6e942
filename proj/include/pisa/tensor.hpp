#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "pisa/errors.hpp"

namespace pisa {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of rank 0, 1 or 2. Training runs on float; gradient
// verification instantiates the same code with double.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }
  static Tensor vector(std::initializer_list<T> v) {
    return Tensor(Shape{v.size()}, std::vector<T>(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> data) {
    return Tensor(Shape{rows, cols}, std::move(data));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }

  // Rank-1 tensors are viewed as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  T item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return !grad_.empty(); }
  std::span<T> grad() { return grad_; }
  std::span<const T> grad() const { return grad_; }
  // Allocates a zero gradient if absent. The gradient is an accumulator that
  // tapes write through const references to parameters.
  std::span<T> mutable_grad() const;
  void zero_grad();
  void clear_grad() { grad_.clear(); }

  void reshape(Shape shape);

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    out.set_requires_grad(requires_grad_);
    return out;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
  bool requires_grad_ = false;
  mutable std::vector<T> grad_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

}  // namespace pisa
