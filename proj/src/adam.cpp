#include "pisa/adam.hpp"

#include <cmath>

namespace pisa {

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 std::int64_t step, const AdamConfig& cfg) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw DimensionError("adam_update: parameter, gradient and moment sizes differ");
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.learning_rate), eps = static_cast<T>(cfg.epsilon);
  const T inv_c1 = static_cast<T>(1.0 / c1), inv_c2 = static_cast<T>(1.0 / c2);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    const T m_hat = m[i] * inv_c1;
    const T v_hat = v[i] * inv_c2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

template <typename T>
Adam<T>::Adam(std::span<Tensor<T>* const> params, AdamConfig cfg) : cfg_(cfg) {
  for (const Tensor<T>* p : params) {
    shapes_.push_back(p->shape());
    m_.emplace_back(p->numel(), T(0));
    v_.emplace_back(p->numel(), T(0));
  }
}

template <typename T>
void Adam<T>::step(std::span<Tensor<T>* const> params) {
  if (params.size() != shapes_.size()) throw DimensionError("Adam::step: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != shapes_[i]) {
      throw DimensionError("Adam::step: parameter " + std::to_string(i) + " has shape " +
                           shape_str(params[i]->shape()) + ", expected " + shape_str(shapes_[i]));
    }
  }
  ++step_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    std::span<const T> g = p.mutable_grad();
    adam_update<T>(p.data(), g, m_[i], v_[i], step_, cfg_);
  }
}

template <typename T>
void Adam<T>::zero_grad(std::span<Tensor<T>* const> params) const {
  for (Tensor<T>* p : params) p->zero_grad();
}

template void adam_update<float>(std::span<float>, std::span<const float>, std::span<float>,
                                 std::span<float>, std::int64_t, const AdamConfig&);
template void adam_update<double>(std::span<double>, std::span<const double>, std::span<double>,
                                  std::span<double>, std::int64_t, const AdamConfig&);
template class Adam<float>;
template class Adam<double>;

}  // namespace pisa
