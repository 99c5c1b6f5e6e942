#include "pisa/hungarian.hpp"

#include <cmath>
#include <limits>

#include "pisa/errors.hpp"

namespace pisa {

Assignment hungarian(const CostMatrix& cost) {
  if (cost.rows() != cost.cols()) throw ContractError("hungarian: cost matrix must be square");
  const std::size_t n = cost.rows();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c)
      if (!std::isfinite(cost(r, c))) throw ContractError("hungarian: non-finite cost");

  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is the virtual root of each augmenting tree.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment out;
  out.mapping.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) out.mapping[match[j] - 1] = j - 1;
  for (std::size_t i = 0; i < n; ++i) out.cost += cost(i, out.mapping[i]);
  return out;
}

}  // namespace pisa
