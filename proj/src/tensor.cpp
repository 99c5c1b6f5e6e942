#include "pisa/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace pisa {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad)
    : shape_(std::move(shape)),
      data_(shape_numel(shape_), T(0)),
      requires_grad_(requires_grad) {
  if (rank() > 2) throw DimensionError("tensor rank > 2 unsupported: " + shape_str(shape_));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : shape_(std::move(shape)), data_(std::move(data)), requires_grad_(requires_grad) {
  if (rank() > 2) throw DimensionError("tensor rank > 2 unsupported: " + shape_str(shape_));
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
  }
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  return rank() == 2 ? shape_[0] : 1;
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  if (rank() == 0) return 1;
  return rank() == 2 ? shape_[1] : shape_[0];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() const {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), T(0));
  return grad_;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), T(0));
}

template <typename T>
void Tensor<T>::reshape(Shape shape) {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace pisa
