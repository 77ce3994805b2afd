#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace rtknet {

// Dense row-major cost matrix; rows are predictions, columns targets.
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  CostMatrix() = default;
  CostMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (prediction, target)
  std::vector<std::size_t> unmatched;                       // predictions, ascending
};

// Minimum-cost assignment covering every column (requires rows >= cols).
// Among optimal assignments the one whose row sequence, read in column
// order, is lexicographically smallest is returned. Pairs are ordered by
// column. Throws InputError on non-finite costs.
Assignment hungarian_assign(const CostMatrix& cost);

// Sum of the assigned costs, accumulated in pair order.
double assignment_cost(const CostMatrix& cost, const Assignment& assignment);

}  // namespace rtknet
