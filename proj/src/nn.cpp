#include "pisa/nn.hpp"

#include <cmath>

namespace pisa {

template <typename T>
Var<T> LinearLayer<T>::forward(Tape<T>& tape, Var<T> x) const {
  Var<T> w = tape.leaf(weight);
  const Tensor<T>& xv = x.value();
  if (xv.cols() != in_features() || xv.rank() == 0) {
    throw DimensionError("linear: input " + shape_str(xv.shape()) + " vs weight " +
                         shape_str(weight.shape()));
  }
  Var<T> y = xv.rank() == 1 ? matvec(w, x) : matmul_t(x, w);
  if (!bias) return y;
  Var<T> b = tape.leaf(*bias);
  if (xv.rank() == 1) return add(y, b);
  return add_bias(y, b);
}

template <typename T>
void LinearLayer<T>::collect(const std::string& prefix, NamedTensors<T>& out) {
  out.emplace_back(prefix + ".weight", &weight);
  if (bias) out.emplace_back(prefix + ".bias", &*bias);
}

template <typename T>
Var<T> Mlp<T>::forward(Tape<T>& tape, Var<T> x) const {
  return mlp_forward(*this, tape, x);
}

template <typename T>
void Mlp<T>::collect(const std::string& prefix, NamedTensors<T>& out) {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + "." + std::to_string(i), out);
}

template <typename T>
LinearLayer<T> init_linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
  if (in < 1 || out < 1) throw DimensionError("init_linear: sizes must be >= 1");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  LinearLayer<T> layer;
  layer.weight = Tensor<T>(Shape{out, in}, true);
  for (T& w : layer.weight.data()) w = static_cast<T>(dist(rng));
  if (with_bias) {
    layer.bias = Tensor<T>(Shape{out}, true);
    for (T& b : layer.bias->data()) b = static_cast<T>(dist(rng));
  }
  return layer;
}

template <typename T>
LinearLayer<T> init_linear(std::size_t in, std::size_t out, bool with_bias, std::uint64_t seed) {
  Rng rng(seed);
  return init_linear<T>(in, out, with_bias, rng);
}

template <typename T>
Mlp<T> init_mlp(const std::vector<std::size_t>& sizes, Rng& rng) {
  if (sizes.size() < 2) throw DimensionError("init_mlp: need at least input and output sizes");
  Mlp<T> mlp;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    mlp.layers.push_back(init_linear<T>(sizes[i], sizes[i + 1], true, rng));
  }
  return mlp;
}

template <typename T>
Var<T> mlp_forward(const Mlp<T>& mlp, Tape<T>& tape, Var<T> x) {
  if (mlp.layers.empty()) throw DimensionError("mlp_forward: empty network");
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    x = mlp.layers[i].forward(tape, x);
    if (i + 1 < mlp.layers.size()) x = relu(x);
  }
  return x;
}

template <typename T>
std::vector<T> mlp_apply(const Mlp<T>& mlp, std::span<const T> x) {
  Tape<T> tape;
  Var<T> in = tape.constant(Tensor<T>(Shape{x.size()}, std::vector<T>(x.begin(), x.end())));
  const Tensor<T>& y = mlp_forward(mlp, tape, in).value();
  return {y.data().begin(), y.data().end()};
}

#define PISA_INSTANTIATE_NN(T)                                                              \
  template struct LinearLayer<T>;                                                           \
  template struct Mlp<T>;                                                                   \
  template LinearLayer<T> init_linear<T>(std::size_t, std::size_t, bool, Rng&);             \
  template LinearLayer<T> init_linear<T>(std::size_t, std::size_t, bool, std::uint64_t);    \
  template Mlp<T> init_mlp<T>(const std::vector<std::size_t>&, Rng&);                       \
  template Var<T> mlp_forward<T>(const Mlp<T>&, Tape<T>&, Var<T>);                          \
  template std::vector<T> mlp_apply<T>(const Mlp<T>&, std::span<const T>);

PISA_INSTANTIATE_NN(float)
PISA_INSTANTIATE_NN(double)

}  // namespace pisa
