#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "pisa/element_set.hpp"
#include "pisa/model.hpp"
#include "pisa/training.hpp"

namespace pisa {

// Pearson r. Throws ContractError for mismatched or too-short input and
// UndefinedError when either side has zero variance.
double correlation(std::span<const double> truth, std::span<const double> pred);

double cardinality_accuracy(std::span<const std::size_t> truth, std::span<const std::size_t> predicted);

struct CardinalityRow {
  std::size_t n = 0;
  std::size_t sets = 0;
  std::optional<double> correlation;  // absent when undefined (no data / zero variance)
  double mse = 0.0;
};

struct ReconstructionReport {
  double correlation = 0.0;
  double mse_mean = 0.0;  // per scalar, pooled
  double mse_sum = 0.0;   // summed squared error per set, averaged over sets
  double cardinality_accuracy = 0.0;
  std::vector<CardinalityRow> per_cardinality;  // n = 0..n_max
};

struct Reconstruction {
  std::vector<ElementSet> targets;  // inputs in decoder slot order
  std::vector<ElementSet> outputs;  // decoded with predicted cardinality
  std::vector<std::size_t> predicted_n;
};

// Batched encode / predict-cardinality / decode without gradients.
template <typename T>
Reconstruction reconstruct(const PisaParams<T>& params, std::span<const ElementSet> sets, Variant variant);

// Pairs decoded slots with targets (slot order, or a min-cost matching for
// the Hungarian variant) over the first min(n, n_hat) slots and pools every
// matched scalar into one Pearson r.
template <typename T>
ReconstructionReport evaluate_reconstruction(const PisaParams<T>& params, std::span<const ElementSet> sets,
                                             Variant variant);

struct InterpolationTrace {
  std::vector<double> alphas;
  std::vector<ElementSet> sets;
  std::optional<std::size_t> forced_n;
};

// Decodes (1 - a) z0 + a z1 on an evenly spaced grid of `grid` points.
template <typename T>
InterpolationTrace interpolate_decode(const LatentState<T>& z0, const LatentState<T>& z1, std::size_t grid,
                                      std::optional<std::size_t> forced_n, const PisaParams<T>& params);

// Piecewise-linear path length of all elements, matched by slot.
double arc_length(const InterpolationTrace& trace);

// Total Euclidean distance of the min-cost matching between the two sets.
double min_assignment_length(const ElementSet& x0, const ElementSet& x1);

}  // namespace pisa
