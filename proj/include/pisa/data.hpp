#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "pisa/element_set.hpp"
#include "pisa/nn.hpp"

namespace pisa {

struct CardinalityRange {
  std::size_t min = 0;
  std::size_t max = 16;
};

// n ~ U{range.min..range.max}, elements ~ N(0, I_dim).
ElementSet sample_set(Rng& rng, std::size_t dim = 6, CardinalityRange range = {});

struct SetBatch {
  std::vector<ElementSet> sets;
  std::uint64_t seed = 0;
  std::size_t dim = 0;
};

SetBatch sample_batch(std::uint64_t seed, std::size_t count, std::size_t dim = 6, CardinalityRange range = {});

}  // namespace pisa
