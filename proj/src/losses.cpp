#include "pisa/losses.hpp"

#include <limits>
#include <string>

namespace pisa {

double correspondence_mse(const ElementSet& x, const ElementSet& x_hat, const KeyAssignment& keys) {
  if (x.size() != x_hat.size() || keys.keys.size() != x.size()) {
    throw ContractError("correspondence_mse: |X| = " + std::to_string(x.size()) + ", |X_hat| = " +
                        std::to_string(x_hat.size()) + ", keys = " + std::to_string(keys.keys.size()));
  }
  if (x.empty()) return 0.0;
  if (x.dim() != x_hat.dim()) throw DimensionError("correspondence_mse: feature dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t k = keys.keys[i];
    if (k < 1 || k > x.size()) throw ContractError("correspondence_mse: keys are not a bijection onto 1..n");
    acc += squared_distance(x[i], x_hat[k - 1]);
  }
  return acc / static_cast<double>(x.size() * x.dim());
}

template <typename T>
double size_loss(std::size_t n, const LatentState<T>& z, const PisaParams<T>& params) {
  const double d = static_cast<double>(n) - static_cast<double>(raw_cardinality(z, params));
  return d * d;
}

CostMatrix squared_distance_costs(const ElementSet& targets, const ElementSet& predictions) {
  CostMatrix cost(predictions.size(), targets.size());
  for (std::size_t r = 0; r < predictions.size(); ++r)
    for (std::size_t c = 0; c < targets.size(); ++c) cost(r, c) = squared_distance(predictions[r], targets[c]);
  return cost;
}

double hungarian_loss(const ElementSet& x, const ElementSet& x_hat) {
  if (x.size() != x_hat.size()) throw ContractError("hungarian_loss: set sizes differ");
  if (x.empty()) return 0.0;
  return hungarian(squared_distance_costs(x, x_hat)).cost;
}

double chamfer_loss(const ElementSet& x, const ElementSet& x_hat) {
  if (x.empty() || x_hat.empty()) throw ContractError("chamfer_loss: both sets must be nonempty");
  auto one_way = [](const ElementSet& from, const ElementSet& to) {
    double acc = 0.0;
    for (std::size_t i = 0; i < from.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < to.size(); ++j) best = std::min(best, squared_distance(from[i], to[j]));
      acc += best;
    }
    return acc;
  };
  return one_way(x, x_hat) + one_way(x_hat, x);
}

template <typename T>
LossParts total_loss(const ElementSet& x, const LatentState<T>& z, const ElementSet& x_hat,
                     const KeyAssignment& keys, const PisaParams<T>& params) {
  return {correspondence_mse(x, x_hat, keys), size_loss(x.size(), z, params)};
}

template <typename T>
Var<T> mse_to(Var<T> prediction, const Tensor<T>& target) {
  if (prediction.shape() != target.shape()) throw DimensionError("mse: prediction/target shape mismatch");
  if (target.numel() == 0) return prediction.tape->constant(Tensor<T>::scalar(T(0)));
  return mean(square(sub(prediction, prediction.tape->constant(target))));
}

template <typename T>
Var<T> size_loss(Var<T> raw, std::span<const std::size_t> counts) {
  if (raw.value().numel() != counts.size()) throw DimensionError("size_loss: one count per prediction required");
  Tensor<T> n(raw.shape());
  for (std::size_t i = 0; i < counts.size(); ++i) n[i] = static_cast<T>(counts[i]);
  return mean(square(sub(raw.tape->constant(std::move(n)), raw)));
}

template <typename T>
Tensor<T> hungarian_targets(const Tensor<T>& predictions, std::span<const ElementSet> sets, std::size_t d_x) {
  Tensor<T> out(predictions.shape());
  std::size_t row = 0;
  for (const ElementSet& set : sets) {
    const std::size_t n = set.size();
    ElementSet pred(d_x);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> r(d_x);
      for (std::size_t c = 0; c < d_x; ++c) r[c] = static_cast<double>(predictions.at(row + i, c));
      pred.push_back(r);
    }
    if (n > 0) {
      const Assignment a = hungarian(squared_distance_costs(set, pred));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d_x; ++c) out.at(row + i, c) = static_cast<T>(set[a.mapping[i]][c]);
    }
    row += n;
  }
  if (row != predictions.rows()) throw DimensionError("hungarian_targets: prediction rows do not match sets");
  return out;
}

#define PISA_INSTANTIATE_LOSSES(T)                                                                     \
  template double size_loss<T>(std::size_t, const LatentState<T>&, const PisaParams<T>&);              \
  template LossParts total_loss<T>(const ElementSet&, const LatentState<T>&, const ElementSet&,        \
                                   const KeyAssignment&, const PisaParams<T>&);                        \
  template Var<T> mse_to<T>(Var<T>, const Tensor<T>&);                                                 \
  template Var<T> size_loss<T>(Var<T>, std::span<const std::size_t>);                                 \
  template Tensor<T> hungarian_targets<T>(const Tensor<T>&, std::span<const ElementSet>, std::size_t);

PISA_INSTANTIATE_LOSSES(float)
PISA_INSTANTIATE_LOSSES(double)

}  // namespace pisa
