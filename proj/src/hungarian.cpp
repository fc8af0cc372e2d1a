#include <cmath>
#include <limits>
#include <vector>

#include "choreo/errors.hpp"
#include "choreo/longform.hpp"

namespace choreo {

// potentials formulation, one augmenting row at a time, O(n^3)
DancerAssignment match_dancers_hungarian(const Mat& cost) {
  const int n = static_cast<int>(cost.rows());
  if (n == 0 || cost.cols() != cost.rows())
    throw BadMatrix("cost matrix must be square and non-empty");
  for (Eigen::Index r = 0; r < cost.rows(); ++r)
    for (Eigen::Index c = 0; c < cost.cols(); ++c) {
      const double v = cost(r, c);
      if (!std::isfinite(v) || v < 0.0)
        throw BadMatrix("cost entries must be finite and nonnegative");
    }

  const double inf = std::numeric_limits<double>::infinity();
  // 1-indexed; p[j] is the row matched to column j, column 0 is virtual
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
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
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  DancerAssignment out;
  out.permutation.resize(n);
  for (int j = 1; j <= n; ++j) out.permutation[j - 1] = p[j] - 1;
  // total summed in row order so it is comparable digit-for-digit with an
  // exhaustive search accumulating the same way
  std::vector<int> col_of(n, 0);
  for (int j = 0; j < n; ++j) col_of[out.permutation[j]] = j;
  for (int i = 0; i < n; ++i) out.total_cost += cost(i, col_of[i]);
  return out;
}

}  // namespace choreo
