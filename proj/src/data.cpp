#include "pisa/data.hpp"

#include <random>

namespace pisa {

ElementSet sample_set(Rng& rng, std::size_t dim, CardinalityRange range) {
  if (range.min > range.max) throw ContractError("sample_set: empty cardinality range");
  std::uniform_int_distribution<std::size_t> card(range.min, range.max);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = card(rng);
  std::vector<double> flat(n * dim);
  for (double& v : flat) v = normal(rng);
  return ElementSet(dim, std::move(flat));
}

SetBatch sample_batch(std::uint64_t seed, std::size_t count, std::size_t dim, CardinalityRange range) {
  Rng rng(seed);
  SetBatch batch{{}, seed, dim};
  batch.sets.reserve(count);
  for (std::size_t i = 0; i < count; ++i) batch.sets.push_back(sample_set(rng, dim, range));
  return batch;
}

}  // namespace pisa
