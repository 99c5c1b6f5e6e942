#pragma once

#include <cstddef>
#include <vector>

namespace pisa {

// Perfect matching: row i is matched to column mapping[i].
struct Assignment {
  std::vector<std::size_t> mapping;
  double cost = 0.0;
};

// Row-major square cost matrix.
class CostMatrix {
 public:
  CostMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

 private:
  std::size_t rows_, cols_;
  std::vector<double> data_;
};

// Minimum-cost perfect matching in O(n^3) (shortest augmenting paths with
// potentials). Rows are inserted in index order, which fixes the tie-break.
// The reported cost is the matched entries summed in row order.
Assignment hungarian(const CostMatrix& cost);

}  // namespace pisa
