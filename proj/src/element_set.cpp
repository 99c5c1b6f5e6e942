#include "pisa/element_set.hpp"

#include <cmath>
#include <string>

namespace pisa {

ElementSet::ElementSet(std::size_t dim, std::vector<double> flat) : dim_(dim), flat_(std::move(flat)) {
  if (dim_ == 0 ? !flat_.empty() : flat_.size() % dim_ != 0) {
    throw DimensionError("ElementSet: " + std::to_string(flat_.size()) + " values do not form rows of " +
                         std::to_string(dim_));
  }
}

ElementSet::ElementSet(std::size_t dim, const std::vector<std::vector<double>>& rows) : dim_(dim) {
  for (const auto& r : rows) push_back(r);
}

void ElementSet::push_back(std::span<const double> element) {
  if (element.size() != dim_) {
    throw DimensionError("ElementSet: element of dim " + std::to_string(element.size()) + " in set of dim " +
                         std::to_string(dim_));
  }
  flat_.insert(flat_.end(), element.begin(), element.end());
}

ElementSet ElementSet::permuted(std::span<const std::size_t> order) const {
  if (order.size() != size()) throw ContractError("ElementSet::permuted: order length mismatch");
  ElementSet out(dim_);
  out.flat_.reserve(flat_.size());
  for (std::size_t i : order) out.push_back((*this)[i]);
  return out;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("squared_distance: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_distance(a, b));
}

}  // namespace pisa
