#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pisa/autodiff.hpp"
#include "pisa/tensor.hpp"

namespace pisa {

using Rng = std::mt19937_64;

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>*>>;

template <typename T>
struct LinearLayer {
  Tensor<T> weight;  // [out x in]
  std::optional<Tensor<T>> bias;  // [out]

  std::size_t in_features() const { return weight.cols(); }
  std::size_t out_features() const { return weight.rows(); }

  // x is [in] or [N x in]; result has the matching rank.
  Var<T> forward(Tape<T>& tape, Var<T> x) const;
  void collect(const std::string& prefix, NamedTensors<T>& out);
};

enum class Activation { kRelu };

template <typename T>
struct Mlp {
  std::vector<LinearLayer<T>> layers;
  Activation hidden_activation = Activation::kRelu;

  std::size_t in_features() const { return layers.front().in_features(); }
  std::size_t out_features() const { return layers.back().out_features(); }

  Var<T> forward(Tape<T>& tape, Var<T> x) const;
  void collect(const std::string& prefix, NamedTensors<T>& out);
};

// Weights and bias ~ U(-1/sqrt(in), 1/sqrt(in)).
template <typename T>
LinearLayer<T> init_linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng);
template <typename T>
LinearLayer<T> init_linear(std::size_t in, std::size_t out, bool with_bias, std::uint64_t seed);

// sizes = {in, hidden..., out}; every layer has a bias.
template <typename T>
Mlp<T> init_mlp(const std::vector<std::size_t>& sizes, Rng& rng);

// Alternating linear / ReLU, no activation after the last layer.
template <typename T>
Var<T> mlp_forward(const Mlp<T>& mlp, Tape<T>& tape, Var<T> x);

// Convenience for inference on a single vector.
template <typename T>
std::vector<T> mlp_apply(const Mlp<T>& mlp, std::span<const T> x);

}  // namespace pisa
