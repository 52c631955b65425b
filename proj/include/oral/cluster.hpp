#pragma once

// Semi-supervised clustering of the prototype graph: spectral partitioning,
// node-to-group assignment, Hungarian matching against labeled nodes and the
// granularity (cluster count) search.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "oral/assignment.hpp"
#include "oral/graph.hpp"
#include "oral/matrix.hpp"
#include "oral/prototype.hpp"

namespace oral {

struct GroupPartition {
  std::vector<int> group_of;  // per prototype
  std::size_t n_groups = 0;

  std::vector<std::vector<std::size_t>> groups() const;
  // Throws unless the groups cover every prototype and none is empty.
  void validate() const;
};

// Relabels groups so that ids follow the order of each group's smallest
// prototype index.
GroupPartition canonical_partition(std::vector<int> group_of);

struct KMeansResult {
  std::vector<int> labels;
  Matrix centroids;
  double inertia = 0.0;
};

// Lloyd's algorithm with k-means++ seeding; best of `restarts` by inertia.
// Empty clusters take the point farthest from its centroid.
KMeansResult kmeans(const Matrix& points, std::size_t k, std::size_t restarts, std::uint64_t seed,
                    std::size_t max_iterations = 100);

// Eigen-decomposition of the symmetric normalized Laplacian of a similarity
// matrix, restricted to the prototypes that have at least one neighbour.
struct SpectralEmbedding {
  std::vector<std::size_t> active;  // prototypes with nonzero degree
  std::vector<double> eigenvalues;  // ascending
  Matrix eigenvectors;              // active.size() x active.size(), columns
};

SpectralEmbedding spectral_embedding(const Matrix& similarity);

struct ClusterOptions {
  std::size_t kmeans_restarts = 10;
  // Optional prototype x prototype affinity used to attach prototypes that
  // have no similarity edge; defaults to attaching them to the first group.
  const Matrix* attach_affinity = nullptr;
};

GroupPartition cluster_prototypes(const PrototypeGraph& pg, std::size_t n_clusters, std::uint64_t seed,
                                  const ClusterOptions& options = {});
GroupPartition cluster_prototypes(const SpectralEmbedding& emb, std::size_t n_prototypes,
                                  std::size_t n_clusters, std::uint64_t seed,
                                  const ClusterOptions& options = {});

// p(i, k) = sum over prototypes j in group k of r(i, j).
Matrix node_group_assignment(const Matrix& r, const GroupPartition& part);

// Row argmax, ties to the lower column.
std::vector<int> row_argmax(const Matrix& m);

struct LabeledNode {
  NodeId node;
  ClassId label;
};

struct ClassMatching {
  std::vector<std::optional<ClassId>> group_to_class;
  std::vector<int> novel_group_ids;
  double accuracy = 0.0;

  std::optional<int> group_of_class(ClassId c) const;
};

ClassMatching match_and_score(const Matrix& p, std::span<const LabeledNode> labeled);

enum class GranularityTieBreak { kSmallestN, kLargestEigengap };

struct GranularityOptions {
  // Candidates whose labeled accuracy is within this distance of the best
  // are treated as tied.
  double accuracy_tolerance = 0.0;
  GranularityTieBreak tie_break = GranularityTieBreak::kSmallestN;
  ClusterOptions cluster;
};

struct GranularityCandidate {
  std::size_t n = 0;
  double accuracy = 0.0;
  double eigengap = 0.0;
};

struct GranularityResult {
  std::size_t best_n = 0;
  GroupPartition partition;
  ClassMatching matching;
  std::vector<GranularityCandidate> candidates;
};

// Evaluates every n in [lo, hi] (or only fixed_n when given) and returns the
// labeled-accuracy argmax. Candidates are evaluated in parallel and merged in
// order of n.
GranularityResult search_granularity(const PrototypeGraph& pg, const Matrix& r,
                                     std::span<const LabeledNode> labeled,
                                     std::pair<std::size_t, std::size_t> range,
                                     std::optional<std::size_t> fixed_n, std::uint64_t seed,
                                     const GranularityOptions& options = {});

}  // namespace oral
