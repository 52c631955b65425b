#pragma once

// Stacked prototypical attention network.
//
// Each layer scores its input representations against its own prototypes,
// clusters the prototype graph into groups, turns representativeness into
// group-assignment probabilities p, and aggregates neighbours with attention
// weights given by the cosine similarity of p rows. Discrete steps
// (top-k association, clustering, Hungarian matching) are recomputed in the
// forward pass and held fixed for differentiation.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oral/autodiff.hpp"
#include "oral/cluster.hpp"
#include "oral/graph.hpp"
#include "oral/matrix.hpp"
#include "oral/prototype.hpp"

namespace oral {

enum class AttentionMode { kGroupAware, kUniform };

struct PanLayer {
  Matrix weight;  // d_in x d_out
  PrototypeSet prototypes;  // count x d_in

  std::size_t input_dim() const { return weight.rows(); }
  std::size_t output_dim() const { return weight.cols(); }
};

struct PanStack {
  std::vector<PanLayer> layers;

  // Throws if dimensions do not chain or parameters are non-finite.
  void validate(std::size_t feature_dim) const;
};

// Normalized attention weight per adjacency slot (rows of the adjacency are
// N(i) ∪ {i}). Group-aware: softmax of cos(p_i, p_k); uniform: 1/(deg+1).
std::vector<double> attention_scores(const Matrix& p, const Adjacency& adj,
                                     AttentionMode mode = AttentionMode::kGroupAware);

// How a layer obtains its prototype partition in one forward pass.
struct LayerPlan {
  enum class Kind { kSearch, kClusterAt, kFrozen };
  Kind kind = Kind::kSearch;
  std::size_t n_clusters = 0;   // kClusterAt
  GroupPartition partition;     // kFrozen
  ClassMatching matching;       // kFrozen
};

struct ForwardOptions {
  AttentionMode attention = AttentionMode::kGroupAware;
  std::pair<std::size_t, std::size_t> granularity_range{2, 2};
  std::optional<std::size_t> prior_n;  // "with prior" mode
  GranularityOptions granularity;
  std::uint64_t cluster_seed = 0;
};

struct LayerCache {
  Matrix r;
  PrototypeGraph prototype_graph;
  GroupPartition partition;
  ClassMatching matching;
  Matrix p;
  std::vector<double> alpha;
  Matrix h;  // output representation
  std::vector<GranularityCandidate> candidates;  // filled on search
};

// Handles into a tape for one layer.
struct TapeLayer {
  ad::Var h_in, r, p, h_out;
};

struct TapeForward {
  std::vector<TapeLayer> vars;
  std::vector<LayerCache> caches;
};

struct StackParams {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> prototypes;
};

// Registers the stack's parameters on a tape.
StackParams register_params(ad::Tape& tape, const PanStack& stack, bool requires_grad);

// Runs every layer on the tape. `plans` has one entry per layer. `labeled`
// supplies the nodes scored by granularity search and matching.
TapeForward forward_on_tape(ad::Tape& tape, const StackParams& params, const PanStack& stack,
                            const Matrix& features, const ad::AdjacencyPtr& adj,
                            std::span<const LayerPlan> plans, std::span<const LabeledNode> labeled,
                            const ForwardOptions& options);

// Value-only layer and stack forward (no gradients kept).
LayerCache layer_forward(const Adjacency& adj, const Matrix& h_in, const PanLayer& layer, const LayerPlan& plan,
                         std::span<const LabeledNode> labeled, const ForwardOptions& options);
std::vector<LayerCache> stack_forward(const AttributedGraph& g, const EdgeSet& edges, const PanStack& stack,
                                      std::span<const LayerPlan> plans, std::span<const LabeledNode> labeled,
                                      const ForwardOptions& options);

// A supervised node: label is a known class id or a pseudo class id.
struct SupervisedNode {
  NodeId node;
  ClassId label;
};

// Per-layer (node, group) targets. Known classes go through the layer's
// matching; other labels are matched to the layer's novel groups by a second
// Hungarian step over the supervised nodes carrying them.
std::vector<std::pair<std::size_t, std::size_t>> ce_targets(const Matrix& p, const ClassMatching& matching,
                                                             std::span<const SupervisedNode> supervised);

// Value-level losses.
double ce_loss(std::span<const Matrix> p_layers, std::span<const ClassMatching> matchings,
               std::span<const SupervisedNode> supervised);
double total_loss(double ce, double reg, double con);

struct PanConfig {
  std::size_t layers = 3;
  std::size_t hidden = 64;
  std::size_t n_prototypes = 40;
  std::size_t topk = 3;
  double learning_rate = 0.01;
  double weight_decay = 0.0;
  std::size_t max_iterations = 200;
  std::size_t refine_period = 50;
  double convergence_tol = 1e-4;
  std::size_t convergence_window = 10;
  double eta = 0.01;
  double gamma = 0.3;
  double mu = 0.015;
  double edge_drop_rate = 0.2;
  double feature_mask_rate = 0.1;
  AttentionMode attention = AttentionMode::kGroupAware;
  bool use_refinement = true;     // pseudo-labels + structure refinement
  bool use_consistency = true;
  bool pseudo_supervision = true; // confident nodes join the ce set
  std::optional<std::size_t> prior_n;
  std::optional<std::pair<std::size_t, std::size_t>> granularity_range;
  double granularity_tolerance = 0.05;
  GranularityTieBreak granularity_tie_break = GranularityTieBreak::kLargestEigengap;
  double prototype_jitter = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossRecord {
  std::size_t epoch = 0;
  double ce = 0.0, reg = 0.0, con = 0.0, total = 0.0;
};

struct RefinementRecord {
  std::size_t epoch = 0;
  std::size_t recovered = 0, removed = 0, confident = 0, edges_after = 0;
};

struct AdamState {
  std::vector<Matrix> m, v;
  std::size_t step = 0;
};

struct TrainState {
  std::size_t epoch = 0;
  AdamState optimizer;
  std::uint64_t seed = 0;
  std::vector<LossRecord> losses;
  std::vector<RefinementRecord> refinements;
  EdgeSet edges;
  std::vector<std::size_t> best_n;  // per layer
  std::vector<SupervisedNode> pseudo_labels;
  bool converged = false;
};

struct FitResult {
  PanStack stack;
  TrainState state;
  EdgeSet final_edges;
  std::vector<LayerCache> caches;  // clean forward with the final parameters
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, TrainState state)
      : std::runtime_error(what), state_(std::move(state)) {}
  const TrainState& state() const { return state_; }

 private:
  TrainState state_;
};

// Labeled training nodes of g (label_mask true).
std::vector<LabeledNode> labeled_nodes(const AttributedGraph& g);

std::pair<std::size_t, std::size_t> default_granularity_range(std::size_t n_known, std::size_t n_prototypes);

PanStack init_stack(const AttributedGraph& g, const PanConfig& config);

// Trains on g (labels visible only where label_mask is set).
FitResult fit(const AttributedGraph& g, const PanConfig& config);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t probes = 0;
  std::size_t kinks_resampled = 0;
};

// Central differences (step 1e-5) against the analytic gradient of the total
// loss on sampled weight and prototype entries, with partitions, matchings,
// augmentation and supervision frozen.
GradCheckReport grad_check(const PanStack& stack, const AttributedGraph& g, const PanConfig& config,
                           std::size_t probes_per_tensor, std::uint64_t seed);

// Versioned text checkpoint, exact round trip (hex floats).
void save_checkpoint(const PanStack& stack, const std::vector<std::size_t>& best_n, const EdgeSet& edges,
                     const std::string& path);
struct Checkpoint {
  PanStack stack;
  std::vector<std::size_t> best_n;
  EdgeSet edges;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace oral
