#pragma once

// Test-only reference computations, deliberately naive.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "pisa/element_set.hpp"

namespace pisa::testing {

// Minimum over all n! permutations of sum_i cost[i][perm[i]].
inline double brute_force_assignment(const std::vector<std::vector<double>>& cost) {
  std::vector<std::size_t> perm(cost.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) c += cost[i][perm[i]];
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline ElementSet random_set(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
  std::normal_distribution<double> dist;
  ElementSet s(dim);
  std::vector<double> row(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& v : row) v = dist(rng);
    s.push_back(row);
  }
  return s;
}

inline ElementSet shuffled(const ElementSet& s, std::mt19937_64& rng) {
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return s.permuted(order);
}

}  // namespace pisa::testing
