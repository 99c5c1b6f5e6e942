#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pisa/tensor.hpp"

namespace pisa {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One bias-corrected Adam update on a flat parameter array. `step` is the
// 1-based step count after incrementing.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 std::int64_t step, const AdamConfig& cfg);

// Moment buffers for a fixed list of parameter tensors. Parameters are bound
// by position; the list passed to step() must have the shapes it was built with.
template <typename T>
class Adam {
 public:
  Adam(std::span<Tensor<T>* const> params, AdamConfig cfg = {});

  // Applies one update from each parameter's accumulated grad; parameters
  // without a grad buffer are treated as having zero gradient.
  void step(std::span<Tensor<T>* const> params);
  void zero_grad(std::span<Tensor<T>* const> params) const;

  std::int64_t steps() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

 private:
  AdamConfig cfg_;
  std::int64_t step_ = 0;
  std::vector<Shape> shapes_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace pisa
