#include "oral/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "oral/assignment.hpp"
#include "oral/cluster.hpp"

namespace oral {

OpenWorldMetrics open_world_accuracy(std::span<const int> predictions, std::span<const ClassId> truth,
                                     std::span<const ClassId> known_classes) {
  if (predictions.empty()) throw std::invalid_argument("open_world_accuracy: empty test set");
  if (predictions.size() != truth.size()) throw std::invalid_argument("open_world_accuracy: size mismatch");
  int max_pred = 0;
  for (int p : predictions) {
    if (p < 0) throw std::invalid_argument("open_world_accuracy: negative group id");
    max_pred = std::max(max_pred, p);
  }
  const ClusterMatch m = best_cluster_match(predictions, truth, static_cast<std::size_t>(max_pred) + 1);
  const std::set<ClassId> known(known_classes.begin(), known_classes.end());

  OpenWorldMetrics out;
  std::size_t hit_known = 0, hit_novel = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const bool is_known = known.count(truth[i]) > 0;
    const auto& mapped = m.cluster_to_class[static_cast<std::size_t>(predictions[i])];
    const bool hit = mapped && *mapped == truth[i];
    if (is_known) {
      ++out.known_count;
      hit_known += hit;
    } else {
      ++out.novel_count;
      hit_novel += hit;
    }
  }
  const auto frac = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  out.acc_all = m.accuracy();
  out.acc_known = frac(hit_known, out.known_count);
  out.acc_novel = frac(hit_novel, out.novel_count);
  out.predicted_class_count = std::set<int>(predictions.begin(), predictions.end()).size();
  return out;
}

double class_count_error(double estimated, double truth) { return std::abs(estimated - truth); }

std::vector<int> kmeans_feature_baseline(const AttributedGraph& g, const OpenWorldSplit& split,
                                         std::size_t n_clusters, std::uint64_t seed) {
  if (n_clusters < 2) throw std::invalid_argument("kmeans_feature_baseline: n_clusters must be >= 2");
  if (split.test_nodes.size() < n_clusters)
    throw std::invalid_argument("kmeans_feature_baseline: fewer test nodes than clusters");
  Matrix points(split.test_nodes.size(), g.feature_dim());
  for (std::size_t t = 0; t < split.test_nodes.size(); ++t) {
    const auto src = g.features.row(split.test_nodes[t]);
    std::copy(src.begin(), src.end(), points.row(t).begin());
  }
  return kmeans(points, n_clusters, 10, seed).labels;
}

}  // namespace oral
