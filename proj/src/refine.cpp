#include "oral/refine.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace oral {

namespace {

double row_cosine(const Matrix& r, NodeId i, NodeId j) {
  double dot = 0.0, ni = 0.0, nj = 0.0;
  for (std::size_t c = 0; c < r.cols(); ++c) {
    dot += r(i, c) * r(j, c);
    ni += r(i, c) * r(i, c);
    nj += r(j, c) * r(j, c);
  }
  if (ni == 0.0 || nj == 0.0) return 0.0;
  return dot / std::sqrt(ni * nj);
}

}  // namespace

double node_similarity(std::span<const Matrix> r_layers, NodeId i, NodeId j) {
  if (r_layers.empty()) throw std::invalid_argument("node_similarity: no layers");
  double s = 0.0;
  for (const auto& r : r_layers) {
    if (r.rows() != r_layers.front().rows()) throw std::invalid_argument("node_similarity: layers disagree on nodes");
    if (i >= r.rows() || j >= r.rows()) throw std::invalid_argument("node_similarity: node out of range");
    s += row_cosine(r, i, j);
  }
  return s / static_cast<double>(r_layers.size());
}

std::vector<double> node_similarity(std::span<const Matrix> r_layers,
                                    std::span<const std::pair<NodeId, NodeId>> pairs) {
  std::vector<double> out;
  out.reserve(pairs.size());
  for (auto [i, j] : pairs) out.push_back(node_similarity(r_layers, i, j));
  return out;
}

EdgeSet recover_edges(const ConfidentSet& confident, std::span<const Matrix> r_layers, double mu,
                      const EdgeSet& current) {
  if (!(mu >= 0.0 && mu <= 1.0)) throw std::invalid_argument("recover_edges: mu must lie in [0,1]");
  std::vector<Edge> picked;
  for (const auto& group : confident.per_group) {
    std::vector<std::pair<NodeId, NodeId>> pairs;
    for (std::size_t a = 0; a < group.size(); ++a)
      for (std::size_t b = a + 1; b < group.size(); ++b)
        if (!current.contains(group[a], group[b])) {
          const Edge e = Edge::make(group[a], group[b]);
          pairs.emplace_back(e.u, e.v);
        }
    const auto take = static_cast<std::size_t>(std::floor(mu * static_cast<double>(pairs.size()) + 1e-9));
    if (take == 0) continue;
    const auto sim = node_similarity(r_layers, pairs);
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t t = 0; t < order.size(); ++t) order[t] = t;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return sim[x] < sim[y] || (sim[x] == sim[y] && pairs[x] < pairs[y]);
    });
    for (std::size_t t = 0; t < take; ++t) picked.push_back(Edge{pairs[order[t]].first, pairs[order[t]].second});
  }
  return EdgeSet(std::move(picked));
}

EdgeSet remove_edges(const ConfidentSet& confident, const EdgeSet& edges) {
  const NodeId n = edges.empty() ? 0 : edges.max_node() + 1;
  std::vector<int> group(n, -1);
  for (auto [v, k] : confident.members())
    if (v < n) group[v] = k;
  std::vector<Edge> out;
  for (const auto& e : edges)
    if (group[e.u] >= 0 && group[e.v] >= 0 && group[e.u] != group[e.v]) out.push_back(e);
  return EdgeSet(std::move(out));
}

EdgeSet apply_refinement(const EdgeSet& edges, const EdgeSet& recovered, const EdgeSet& removed) {
  if (removed.difference(edges).size() != 0) throw std::invalid_argument("apply_refinement: removed edges not in graph");
  if (recovered.intersection(edges).size() != 0)
    throw std::invalid_argument("apply_refinement: recovered edges already in graph");
  return edges.difference(removed).union_with(recovered);
}

RefinementResult refine_structure(const ConfidentSet& confident, std::span<const Matrix> r_layers, double mu,
                                  const EdgeSet& edges) {
  RefinementResult out;
  out.mu = mu;
  out.recovered = recover_edges(confident, r_layers, mu, edges);
  out.removed = remove_edges(confident, edges);
  out.refined = apply_refinement(edges, out.recovered, out.removed);
  return out;
}

std::vector<double> edge_drop_probabilities(std::size_t node_count, const EdgeSet& edges, double edge_drop_rate) {
  std::vector<double> probs;
  if (edges.empty() || edge_drop_rate <= 0.0) return std::vector<double>(edges.size(), 0.0);
  std::vector<double> degree(node_count, 0.0);
  for (const auto& e : edges) {
    degree[e.u] += 1.0;
    degree[e.v] += 1.0;
  }
  // Weight ∝ 1 / mean endpoint degree, rescaled to mean edge_drop_rate.
  probs.reserve(edges.size());
  double total = 0.0;
  for (const auto& e : edges) {
    const double w = 2.0 / (degree[e.u] + degree[e.v]);
    probs.push_back(w);
    total += w;
  }
  const double scale = edge_drop_rate * static_cast<double>(edges.size()) / total;
  for (auto& p : probs) p = std::clamp(p * scale, 0.0, 0.9);
  return probs;
}

AugmentedView augment(const Matrix& features, const EdgeSet& edges, double edge_drop_rate, double feature_mask_rate,
                      std::uint64_t seed) {
  if (!(edge_drop_rate >= 0.0 && edge_drop_rate < 1.0) || !(feature_mask_rate >= 0.0 && feature_mask_rate < 1.0))
    throw std::invalid_argument("augment: rates must lie in [0,1)");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentedView view;
  const auto probs = edge_drop_probabilities(features.rows(), edges, edge_drop_rate);
  std::vector<Edge> kept;
  kept.reserve(edges.size());
  std::size_t t = 0;
  for (const auto& e : edges) {
    const double u = unit(rng);
    if (!(u < probs[t++])) kept.push_back(e);
  }
  view.edges = EdgeSet(std::move(kept));
  view.features = features;
  if (feature_mask_rate > 0.0)
    for (auto& v : view.features.data())
      if (unit(rng) < feature_mask_rate) v = 0.0;
  return view;
}

double consistency_loss(std::span<const Matrix> p_layers, std::span<const Matrix> p_bar_layers) {
  if (p_layers.size() != p_bar_layers.size()) throw std::invalid_argument("consistency_loss: layer count mismatch");
  double loss = 0.0;
  for (std::size_t l = 0; l < p_layers.size(); ++l) {
    const Matrix& p = p_layers[l];
    const Matrix& q = p_bar_layers[l];
    require_shape(q, p.rows(), p.cols(), "consistency_loss");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double a = p.data()[i];
      if (a > 0.0) loss += a * (std::log(a) - std::log(std::max(q.data()[i], 1e-12)));
    }
  }
  return std::max(loss, 0.0);
}

}  // namespace oral
