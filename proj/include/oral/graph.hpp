#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "oral/kernels.hpp"
#include "oral/matrix.hpp"

namespace oral {

using NodeId = std::uint32_t;
using ClassId = int;

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unordered edge stored canonically with u < v.
struct Edge {
  NodeId u = 0;
  NodeId v = 0;

  static Edge make(NodeId a, NodeId b) { return a < b ? Edge{a, b} : Edge{b, a}; }
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

// Set of undirected edges, kept sorted and deduplicated. Self-loops are
// rejected: the self contribution is added at aggregation time.
class EdgeSet {
 public:
  EdgeSet() = default;
  explicit EdgeSet(std::vector<Edge> edges);

  static EdgeSet from_pairs(const std::vector<std::pair<NodeId, NodeId>>& pairs);

  bool contains(NodeId a, NodeId b) const;
  bool insert(NodeId a, NodeId b);
  std::size_t size() const { return edges_.size(); }
  bool empty() const { return edges_.empty(); }

  const std::vector<Edge>& edges() const { return edges_; }
  auto begin() const { return edges_.begin(); }
  auto end() const { return edges_.end(); }

  EdgeSet difference(const EdgeSet& other) const;
  EdgeSet union_with(const EdgeSet& other) const;
  EdgeSet intersection(const EdgeSet& other) const;

  NodeId max_node() const;

  friend bool operator==(const EdgeSet&, const EdgeSet&) = default;

 private:
  std::vector<Edge> edges_;
};

struct AttributedGraph {
  std::size_t node_count = 0;
  Matrix features;                          // node_count x feature_dim
  EdgeSet edges;
  std::vector<std::optional<ClassId>> labels;  // ground truth where known
  std::vector<bool> label_mask;             // visible to training

  std::size_t feature_dim() const { return features.cols(); }
  bool fully_labeled() const;
  // Throws GraphError if any structural invariant is broken.
  void validate() const;
};

// Sorted distinct class ids present in the graph's labels.
std::vector<ClassId> class_ids(const AttributedGraph& g);

Adjacency build_adjacency(std::size_t node_count, const EdgeSet& edges);

// All u adjacent to v, ascending; v itself excluded.
std::vector<NodeId> neighborhood(const AttributedGraph& g, NodeId v);

// Dataset directory: features.csv, edges.csv, labels.csv (optional).
AttributedGraph load_graph(const std::filesystem::path& dir);
void save_graph(const AttributedGraph& g, const std::filesystem::path& dir);

void write_edges_csv(const EdgeSet& edges, const std::filesystem::path& file);

struct OpenWorldSplit {
  std::vector<ClassId> known_classes;
  std::vector<ClassId> all_classes;
  std::vector<NodeId> train_nodes;
  std::vector<NodeId> val_nodes;
  std::vector<NodeId> test_nodes;

  bool is_known(ClassId c) const;
};

OpenWorldSplit make_open_world_split(const AttributedGraph& g, double known_class_fraction,
                                     double train_fraction, double val_fraction,
                                     std::uint64_t seed);

// Copy of g with label_mask true exactly on the split's training nodes.
AttributedGraph apply_split(const AttributedGraph& g, const OpenWorldSplit& split);

void save_split(const OpenWorldSplit& split, const std::filesystem::path& file);
OpenWorldSplit load_split(const std::filesystem::path& file);

struct SbmSpec {
  std::vector<std::size_t> class_sizes;
  double intra_edge_prob = 0.1;
  double inter_edge_prob = 0.01;
  std::size_t feature_dim = 16;
  double class_mean_separation = 4.0;
  double feature_noise_std = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SbmGraph {
  AttributedGraph graph;
  std::vector<ClassId> ground_truth;
};

// Planted-partition graph; class c has mean separation * e_c plus isotropic
// Gaussian noise. Labels are fully populated, label_mask all false.
SbmGraph generate_sbm(const SbmSpec& spec);

}  // namespace oral
