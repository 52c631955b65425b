#include "oral/assignment.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace oral {

namespace {

// Minimum-cost perfect matching on an n x n cost matrix (1-based potentials
// formulation). Returns col_of_row.
std::vector<int> hungarian_min(const std::vector<double>& cost, std::size_t n) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> col_of_row(n, -1);
  for (std::size_t j = 1; j <= n; ++j)
    if (p[j]) col_of_row[p[j] - 1] = static_cast<int>(j - 1);
  return col_of_row;
}

}  // namespace

Assignment max_weight_assignment(const Matrix& weight) {
  Assignment out;
  const std::size_t rows = weight.rows(), cols = weight.cols();
  out.row_to_col.assign(rows, -1);
  if (rows == 0 || cols == 0) return out;
  if (!weight.all_finite()) throw std::invalid_argument("max_weight_assignment: non-finite weight");
  const std::size_t n = std::max(rows, cols);
  double wmax = 0.0;
  for (double w : weight.data()) wmax = std::max(wmax, w);
  // cost = wmax - w on real cells, wmax on dummy cells (weight 0).
  std::vector<double> cost(n * n, wmax);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) cost[i * n + j] = wmax - weight(i, j);
  const auto col_of_row = hungarian_min(cost, n);
  for (std::size_t i = 0; i < rows; ++i) {
    const int c = col_of_row[i];
    if (c >= 0 && static_cast<std::size_t>(c) < cols) {
      out.row_to_col[i] = c;
      out.total += weight(i, static_cast<std::size_t>(c));
    }
  }
  return out;
}

ClusterMatch best_cluster_match(std::span<const int> predicted, std::span<const ClassId> truth,
                                std::size_t n_clusters) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("best_cluster_match: length mismatch");
  ClusterMatch m;
  m.total = truth.size();
  m.classes.assign(truth.begin(), truth.end());
  std::sort(m.classes.begin(), m.classes.end());
  m.classes.erase(std::unique(m.classes.begin(), m.classes.end()), m.classes.end());
  m.cluster_to_class.assign(n_clusters, std::nullopt);

  Matrix agree(n_clusters, m.classes.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] < 0 || static_cast<std::size_t>(predicted[i]) >= n_clusters)
      throw std::invalid_argument("best_cluster_match: cluster id out of range");
    const auto c = std::lower_bound(m.classes.begin(), m.classes.end(), truth[i]) - m.classes.begin();
    agree(static_cast<std::size_t>(predicted[i]), static_cast<std::size_t>(c)) += 1.0;
  }
  const Assignment a = max_weight_assignment(agree);
  for (std::size_t g = 0; g < n_clusters; ++g) {
    const int c = a.row_to_col[g];
    if (c < 0) continue;
    const ClassId cls = m.classes[static_cast<std::size_t>(c)];
    m.cluster_to_class[g] = cls;
    m.class_to_cluster[cls] = static_cast<int>(g);
    m.matched += static_cast<std::size_t>(agree(g, static_cast<std::size_t>(c)));
  }
  return m;
}

}  // namespace oral
