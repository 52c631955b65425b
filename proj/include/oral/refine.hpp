#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "oral/graph.hpp"
#include "oral/matrix.hpp"
#include "oral/pseudo_label.hpp"

namespace oral {

// s(i, j) = mean over layers of cos(r_i, r_j); a zero-norm row contributes 0.
double node_similarity(std::span<const Matrix> r_layers, NodeId i, NodeId j);
std::vector<double> node_similarity(std::span<const Matrix> r_layers,
                                    std::span<const std::pair<NodeId, NodeId>> pairs);

// Within each confident group, the floor(mu * |pairs|) non-adjacent pairs of
// lowest similarity.
EdgeSet recover_edges(const ConfidentSet& confident, std::span<const Matrix> r_layers, double mu,
                      const EdgeSet& current);

// Existing edges whose endpoints are both confident with different groups.
EdgeSet remove_edges(const ConfidentSet& confident, const EdgeSet& edges);

// (edges \ removed) ∪ recovered, after checking removed ⊆ edges and
// recovered ∩ edges = ∅.
EdgeSet apply_refinement(const EdgeSet& edges, const EdgeSet& recovered, const EdgeSet& removed);

struct RefinementResult {
  EdgeSet recovered;
  EdgeSet removed;
  EdgeSet refined;
  double mu = 0.0;
};

RefinementResult refine_structure(const ConfidentSet& confident, std::span<const Matrix> r_layers, double mu,
                                  const EdgeSet& edges);

struct AugmentedView {
  EdgeSet edges;
  Matrix features;
};

// Degree-adaptive edge dropping plus per-entry feature masking.
AugmentedView augment(const Matrix& features, const EdgeSet& edges, double edge_drop_rate,
                      double feature_mask_rate, std::uint64_t seed);

// Per-edge drop probabilities used by augment (same order as edges).
std::vector<double> edge_drop_probabilities(std::size_t node_count, const EdgeSet& edges, double edge_drop_rate);

// sum over layers and nodes of KL(p_i || pbar_i), pbar clamped at 1e-12.
double consistency_loss(std::span<const Matrix> p_layers, std::span<const Matrix> p_bar_layers);

}  // namespace oral
