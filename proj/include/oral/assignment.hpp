#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "oral/graph.hpp"
#include "oral/matrix.hpp"

namespace oral {

// Maximum-weight injective assignment on a rectangular weight matrix. The
// smaller side is padded with zero-weight dummies; rows matched to a dummy
// get -1. Kuhn-Munkres with potentials, O(n^3) in the padded size.
struct Assignment {
  std::vector<int> row_to_col;
  double total = 0.0;
};

Assignment max_weight_assignment(const Matrix& weight);

// Best injective matching between predicted cluster ids (0..n_clusters-1)
// and true class ids, scored by agreement count.
struct ClusterMatch {
  std::vector<ClassId> classes;                 // distinct truth classes, ascending
  std::vector<std::optional<ClassId>> cluster_to_class;  // per cluster
  std::map<ClassId, int> class_to_cluster;
  std::size_t matched = 0;                      // agreeing items under the matching
  std::size_t total = 0;

  double accuracy() const { return total ? static_cast<double>(matched) / static_cast<double>(total) : 0.0; }
};

ClusterMatch best_cluster_match(std::span<const int> predicted, std::span<const ClassId> truth,
                                std::size_t n_clusters);

}  // namespace oral
