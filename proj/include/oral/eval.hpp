#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "oral/graph.hpp"

namespace oral {

struct OpenWorldMetrics {
  double acc_all = 0.0;
  double acc_known = 0.0;
  double acc_novel = 0.0;
  std::size_t known_count = 0;   // test nodes of known classes
  std::size_t novel_count = 0;
  std::size_t predicted_class_count = 0;  // distinct predicted groups
  std::optional<double> class_count_mae;
};

// One rectangular Hungarian matching over all items; subset accuracies reuse
// it. Predictions are non-negative group ids.
OpenWorldMetrics open_world_accuracy(std::span<const int> predictions, std::span<const ClassId> truth,
                                     std::span<const ClassId> known_classes);

double class_count_error(double estimated, double truth);

// k-means (10 restarts) on the raw features of split.test_nodes; one cluster
// id per test node in split order.
std::vector<int> kmeans_feature_baseline(const AttributedGraph& g, const OpenWorldSplit& split,
                                         std::size_t n_clusters, std::uint64_t seed);

}  // namespace oral
