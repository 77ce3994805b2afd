#include "rtknet/hungarian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "rtknet/errors.hpp"

namespace rtknet {

namespace {

// Shortest augmenting path with potentials over the transposed problem
// (targets as the smaller side), restricted to the given rows and columns.
// Returns the row chosen for each listed column.
std::vector<std::size_t> solve(const CostMatrix& cost, const std::vector<std::size_t>& col_ids,
                               const std::vector<std::size_t>& row_ids) {
  const std::size_t n = col_ids.size(), m = row_ids.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays as in the classic formulation.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> owner(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = owner[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(row_ids[j - 1], col_ids[i0 - 1]) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_of_col(n);
  for (std::size_t j = 1; j <= m; ++j) {
    if (owner[j] != 0) row_of_col[owner[j] - 1] = row_ids[j - 1];
  }
  return row_of_col;
}

double total(const CostMatrix& cost, const std::vector<std::size_t>& row_of_col) {
  double t = 0.0;
  for (std::size_t c = 0; c < row_of_col.size(); ++c) t += cost(row_of_col[c], c);
  return t;
}

}  // namespace

Assignment hungarian_assign(const CostMatrix& cost) {
  if (cost.rows < cost.cols) {
    throw AssignmentError("cost matrix has " + std::to_string(cost.rows) + " rows for " + std::to_string(cost.cols) +
                          " columns");
  }
  for (double x : cost.values) {
    if (!std::isfinite(x)) throw InputError("cost matrix contains a non-finite entry");
  }
  Assignment out;
  std::vector<std::size_t> all_rows(cost.rows), all_cols(cost.cols);
  for (std::size_t r = 0; r < cost.rows; ++r) all_rows[r] = r;
  for (std::size_t c = 0; c < cost.cols; ++c) all_cols[c] = c;

  std::vector<std::size_t> best = cost.cols ? solve(cost, all_cols, all_rows) : std::vector<std::size_t>{};
  const double optimum = total(cost, best);
  double scale = 1.0;
  for (double x : cost.values) scale = std::max(scale, std::abs(x));
  const double tolerance = 1e-12 * scale * static_cast<double>(std::max<std::size_t>(cost.cols, 1));

  // Lexicographic tie-break: walk the columns and try every smaller free
  // row, re-solving the remainder, until one keeps the optimal total.
  std::vector<bool> row_taken(cost.rows, false);
  for (std::size_t c = 0; c < cost.cols; ++c) {
    for (std::size_t r = 0; r < best[c]; ++r) {
      if (row_taken[r]) continue;
      std::vector<std::size_t> rest_cols, rest_rows;
      for (std::size_t k = c + 1; k < cost.cols; ++k) rest_cols.push_back(k);
      for (std::size_t k = 0; k < cost.rows; ++k) {
        if (!row_taken[k] && k != r) rest_rows.push_back(k);
      }
      std::vector<std::size_t> candidate(best.begin(), best.begin() + static_cast<std::ptrdiff_t>(c));
      candidate.push_back(r);
      if (!rest_cols.empty()) {
        const auto tail = solve(cost, rest_cols, rest_rows);
        candidate.insert(candidate.end(), tail.begin(), tail.end());
      }
      if (total(cost, candidate) <= optimum + tolerance) {
        best = std::move(candidate);
        break;
      }
    }
    row_taken[best[c]] = true;
  }

  for (std::size_t c = 0; c < cost.cols; ++c) out.pairs.emplace_back(best[c], c);
  for (std::size_t r = 0; r < cost.rows; ++r) {
    if (!row_taken[r]) out.unmatched.push_back(r);
  }
  return out;
}

double assignment_cost(const CostMatrix& cost, const Assignment& assignment) {
  double t = 0.0;
  for (const auto& [r, c] : assignment.pairs) t += cost(r, c);
  return t;
}

}  // namespace rtknet
