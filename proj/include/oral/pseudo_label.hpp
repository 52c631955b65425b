#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "oral/graph.hpp"
#include "oral/matrix.hpp"

namespace oral {

// Right-pads every prediction matrix with zero columns to the widest one.
std::vector<Matrix> pad_predictions(std::span<const Matrix> preds);

struct AlignedLayers {
  std::vector<Matrix> aligned;
  // alignment[l][g] = reference column that layer l's column g moved to.
  std::vector<std::vector<int>> alignment;
};

// Hungarian alignment of every layer onto layer 0 by argmax agreement.
AlignedLayers align_layers(std::span<const Matrix> padded);

// Elementwise mean.
Matrix ensemble(std::span<const Matrix> aligned);

struct Suppressed {
  Matrix p_hat;            // suppressed columns zeroed, rows not renormalized
  std::vector<bool> mask;  // true = group kept
};

// Keeps column j iff its mean over rows exceeds eta. Throws when every
// column is suppressed.
Suppressed suppress(const Matrix& p_hat, double eta);

struct ConfidentSet {
  std::vector<std::vector<NodeId>> per_group;  // Λ^k, ordered by confidence
  double gamma = 0.0;

  std::size_t size() const;
  // (node, group) pairs in group order.
  std::vector<std::pair<NodeId, int>> members() const;
};

ConfidentSet select_confident(const Matrix& masked, std::span<const NodeId> unlabeled, double gamma);

struct EnsemblePrediction {
  AlignedLayers layers;
  Matrix averaged;
  Suppressed suppressed;

  std::vector<int> labels() const;     // masked argmax per node
  std::size_t group_count() const;     // kept groups
};

EnsemblePrediction ensemble_predict(std::span<const Matrix> preds, double eta);

// Rows `node_id,group_id,confidence`.
void write_pseudo_labels(const ConfidentSet& confident, const Matrix& masked, const std::filesystem::path& file);

}  // namespace oral
