#pragma once

#include <span>
#include <vector>

#include "pisa/autodiff.hpp"
#include "pisa/element_set.hpp"
#include "pisa/hungarian.hpp"
#include "pisa/model.hpp"

namespace pisa {

// Mean over elements and features of (x_hat[k] - x[key k])^2, where
// x_hat is in key order and `keys` assigns a key to every input element.
double correspondence_mse(const ElementSet& x, const ElementSet& x_hat, const KeyAssignment& keys);

// (n - lambda_dec(z))^2 on the raw cardinality prediction.
template <typename T>
double size_loss(std::size_t n, const LatentState<T>& z, const PisaParams<T>& params);

// Squared-Euclidean cost, rows = predictions, cols = targets.
CostMatrix squared_distance_costs(const ElementSet& targets, const ElementSet& predictions);

// min over permutations of the summed squared error.
double hungarian_loss(const ElementSet& x, const ElementSet& x_hat);

// Symmetric nearest-neighbour squared distance sum.
double chamfer_loss(const ElementSet& x, const ElementSet& x_hat);

struct LossParts {
  double mse = 0.0;
  double size = 0.0;
  double total() const { return mse + size; }
};

// correspondence_mse + size_loss with unit weights.
template <typename T>
LossParts total_loss(const ElementSet& x, const LatentState<T>& z, const ElementSet& x_hat,
                     const KeyAssignment& keys, const PisaParams<T>& params);

// ---- tape versions ------------------------------------------------------------

// Mean squared error against constant targets of the same shape.
template <typename T>
Var<T> mse_to(Var<T> prediction, const Tensor<T>& target);

// Mean over sets of (n_s - raw_s)^2 for raw cardinality predictions [S x 1].
template <typename T>
Var<T> size_loss(Var<T> raw, std::span<const std::size_t> counts);

// Targets re-ordered per set so that the squared error to the stacked
// predictions is minimal (the matching is held constant for the gradient).
// `predictions` holds sum(|sets|) rows grouped by set.
template <typename T>
Tensor<T> hungarian_targets(const Tensor<T>& predictions, std::span<const ElementSet> sets, std::size_t d_x);

}  // namespace pisa
