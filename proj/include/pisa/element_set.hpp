#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pisa/errors.hpp"

namespace pisa {

// Variable-cardinality collection of feature vectors in R^dim, stored row-major.
// Order is storage order only; set semantics are up to the caller.
class ElementSet {
 public:
  explicit ElementSet(std::size_t dim = 0) : dim_(dim) {}
  ElementSet(std::size_t dim, std::vector<double> flat);
  ElementSet(std::size_t dim, const std::vector<std::vector<double>>& rows);

  std::size_t size() const { return dim_ == 0 ? 0 : flat_.size() / dim_; }
  std::size_t dim() const { return dim_; }
  bool empty() const { return flat_.empty(); }

  std::span<const double> operator[](std::size_t i) const { return {flat_.data() + i * dim_, dim_}; }
  std::span<double> operator[](std::size_t i) { return {flat_.data() + i * dim_, dim_}; }

  void push_back(std::span<const double> element);
  const std::vector<double>& flat() const { return flat_; }

  // Rows reordered so that row j of the result is row order[j] of this set.
  ElementSet permuted(std::span<const std::size_t> order) const;

  bool operator==(const ElementSet&) const = default;

 private:
  std::size_t dim_;
  std::vector<double> flat_;
};

double squared_distance(std::span<const double> a, std::span<const double> b);
double euclidean_distance(std::span<const double> a, std::span<const double> b);

}  // namespace pisa
