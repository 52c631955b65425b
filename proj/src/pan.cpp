#include "oral/pan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "oral/assignment.hpp"
#include "oral/kernels.hpp"
#include "oral/pseudo_label.hpp"
#include "oral/refine.hpp"

namespace oral {

namespace {

// Pseudo classes of groups without a known class are offset past any real id.
constexpr ClassId kPseudoClassBase = 1 << 20;

Matrix column_cosine(const Matrix& r) {
  Matrix g = kernels::matmul_at_b(r, r);
  std::vector<double> norm(g.rows());
  for (std::size_t j = 0; j < g.rows(); ++j) norm[j] = std::sqrt(g(j, j));
  for (std::size_t a = 0; a < g.rows(); ++a)
    for (std::size_t b = 0; b < g.cols(); ++b) {
      const double d = norm[a] * norm[b];
      g(a, b) = d > 0.0 ? g(a, b) / d : 0.0;
    }
  return g;
}

ClassMatching match_or_empty(const Matrix& p, std::span<const LabeledNode> labeled) {
  if (!labeled.empty()) return match_and_score(p, labeled);
  ClassMatching m;
  m.group_to_class.assign(p.cols(), std::nullopt);
  for (std::size_t g = 0; g < p.cols(); ++g) m.novel_group_ids.push_back(static_cast<int>(g));
  return m;
}

std::vector<double> uniform_attention(const Adjacency& adj) {
  std::vector<double> a(adj.slot_count());
  for (std::size_t i = 0; i < adj.node_count; ++i)
    for (std::size_t s = adj.offsets[i]; s < adj.offsets[i + 1]; ++s)
      a[s] = 1.0 / static_cast<double>(adj.degree_with_self(i));
  return a;
}

Matrix row_vector(std::vector<double> v) {
  Matrix m(1, v.size());
  m.data() = std::move(v);
  return m;
}

// Resolves the partition and matching of one layer from its representativeness.
void resolve_structure(LayerCache& cache, const PanLayer& layer, const LayerPlan& plan,
                       std::span<const LabeledNode> labeled, const ForwardOptions& options) {
  const std::size_t n_proto = layer.prototypes.count();
  cache.prototype_graph = build_prototype_graph(cache.r, layer.prototypes.topk);
  if (plan.kind == LayerPlan::Kind::kFrozen) {
    cache.partition = plan.partition;
    cache.matching = plan.matching;
    return;
  }
  const Matrix affinity = column_cosine(cache.r);
  GranularityOptions gopt = options.granularity;
  gopt.cluster.attach_affinity = &affinity;
  if (plan.kind == LayerPlan::Kind::kSearch && !labeled.empty()) {
    auto [lo, hi] = options.granularity_range;
    if (options.prior_n) {
      lo = std::min(lo, *options.prior_n);
      hi = std::max(hi, *options.prior_n);
    }
    lo = std::clamp<std::size_t>(lo, 2, n_proto);
    hi = std::clamp<std::size_t>(hi, lo, n_proto);
    std::optional<std::size_t> fixed;
    if (options.prior_n) fixed = std::clamp<std::size_t>(*options.prior_n, lo, hi);
    auto res = search_granularity(cache.prototype_graph, cache.r, labeled, {lo, hi}, fixed, options.cluster_seed, gopt);
    cache.partition = std::move(res.partition);
    cache.matching = std::move(res.matching);
    cache.candidates = std::move(res.candidates);
    return;
  }
  std::size_t n = plan.kind == LayerPlan::Kind::kClusterAt ? plan.n_clusters
                                                             : options.prior_n.value_or(options.granularity_range.first);
  n = std::clamp<std::size_t>(n, 2, n_proto);
  cache.partition = cluster_prototypes(cache.prototype_graph, n, options.cluster_seed, gopt.cluster);
  cache.matching = match_or_empty(node_group_assignment(cache.r, cache.partition), labeled);
}

}  // namespace

// ------------------------------------------------------------------ stack

void PanStack::validate(std::size_t feature_dim) const {
  std::size_t d = feature_dim;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    if (L.input_dim() != d) throw std::invalid_argument("layer " + std::to_string(l) + " input dim mismatch");
    if (L.prototypes.dim() != d) throw std::invalid_argument("layer " + std::to_string(l) + " prototype dim mismatch");
    if (L.prototypes.count() < 2) throw std::invalid_argument("layer needs at least two prototypes");
    if (!L.weight.all_finite() || !L.prototypes.vectors.all_finite())
      throw std::invalid_argument("layer " + std::to_string(l) + " has non-finite parameters");
    d = L.output_dim();
  }
}

std::vector<double> attention_scores(const Matrix& p, const Adjacency& adj, AttentionMode mode) {
  if (p.rows() != adj.node_count) throw std::invalid_argument("attention_scores: node count mismatch");
  if (mode == AttentionMode::kUniform) return uniform_attention(adj);
  const auto e = kernels::edge_cosine(p, adj);
  return kernels::segment_softmax(e, adj);
}

StackParams register_params(ad::Tape& tape, const PanStack& stack, bool requires_grad) {
  StackParams params;
  for (const auto& L : stack.layers) {
    params.weights.push_back(requires_grad ? tape.parameter(L.weight) : tape.constant(L.weight));
    params.prototypes.push_back(requires_grad ? tape.parameter(L.prototypes.vectors)
                                              : tape.constant(L.prototypes.vectors));
  }
  return params;
}

TapeForward forward_on_tape(ad::Tape& tape, const StackParams& params, const PanStack& stack,
                            const Matrix& features, const ad::AdjacencyPtr& adj,
                            std::span<const LayerPlan> plans, std::span<const LabeledNode> labeled,
                            const ForwardOptions& options) {
  if (plans.size() != stack.layers.size()) throw std::invalid_argument("forward: one plan per layer required");
  if (features.rows() != adj->node_count) throw std::invalid_argument("forward: feature rows != node count");
  TapeForward out;
  ad::Var h = tape.constant(features);
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    const PanLayer& layer = stack.layers[l];
    TapeLayer vars;
    LayerCache cache;
    vars.h_in = h;
    vars.r = ad::row_softmax(tape, ad::matmul_a_bt(tape, h, params.prototypes[l]));
    cache.r = tape.value(vars.r);
    resolve_structure(cache, layer, plans[l], labeled, options);

    vars.p = ad::group_sum(tape, vars.r, cache.partition.group_of, cache.partition.n_groups);
    cache.p = tape.value(vars.p);
    ad::Var alpha = options.attention == AttentionMode::kUniform
                        ? tape.constant(row_vector(uniform_attention(*adj)))
                        : ad::segment_softmax(tape, ad::edge_cosine(tape, vars.p, adj), adj);
    cache.alpha = tape.value(alpha).data();
    ad::Var z = ad::matmul(tape, h, params.weights[l]);
    vars.h_out = ad::relu(tape, ad::aggregate(tape, alpha, z, adj));
    cache.h = tape.value(vars.h_out);
    h = vars.h_out;
    out.vars.push_back(vars);
    out.caches.push_back(std::move(cache));
  }
  return out;
}

LayerCache layer_forward(const Adjacency& adj, const Matrix& h_in, const PanLayer& layer, const LayerPlan& plan,
                         std::span<const LabeledNode> labeled, const ForwardOptions& options) {
  LayerCache cache;
  cache.r = representativeness(h_in, layer.prototypes);
  resolve_structure(cache, layer, plan, labeled, options);
  cache.p = node_group_assignment(cache.r, cache.partition);
  cache.alpha = attention_scores(cache.p, adj, options.attention);
  Matrix agg = kernels::aggregate(cache.alpha, kernels::matmul(h_in, layer.weight), adj);
  for (auto& v : agg.data()) v = v > 0.0 ? v : 0.0;
  cache.h = std::move(agg);
  return cache;
}

std::vector<LayerCache> stack_forward(const AttributedGraph& g, const EdgeSet& edges, const PanStack& stack,
                                      std::span<const LayerPlan> plans, std::span<const LabeledNode> labeled,
                                      const ForwardOptions& options) {
  stack.validate(g.feature_dim());
  if (plans.size() != stack.layers.size()) throw std::invalid_argument("stack_forward: one plan per layer required");
  const Adjacency adj = build_adjacency(g.node_count, edges);
  std::vector<LayerCache> out;
  const Matrix* h = &g.features;
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    out.push_back(layer_forward(adj, *h, stack.layers[l], plans[l], labeled, options));
    h = &out.back().h;
  }
  return out;
}

// ------------------------------------------------------------------ losses

std::vector<std::pair<std::size_t, std::size_t>> ce_targets(const Matrix& p, const ClassMatching& matching,
                                                             std::span<const SupervisedNode> supervised) {
  std::vector<std::pair<std::size_t, std::size_t>> targets;
  std::vector<SupervisedNode> other;
  for (const auto& s : supervised) {
    if (s.node >= p.rows()) throw std::invalid_argument("ce_targets: node out of range");
    if (auto g = matching.group_of_class(s.label)) targets.emplace_back(s.node, static_cast<std::size_t>(*g));
    else other.push_back(s);
  }
  if (other.empty() || matching.novel_group_ids.empty()) return targets;

  std::vector<ClassId> labels;
  for (const auto& s : other) labels.push_back(s.label);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  const auto& novel = matching.novel_group_ids;
  Matrix agree(labels.size(), novel.size());
  const auto argmax = row_argmax(p);
  for (const auto& s : other) {
    const auto li = static_cast<std::size_t>(std::lower_bound(labels.begin(), labels.end(), s.label) - labels.begin());
    const auto gi = std::find(novel.begin(), novel.end(), argmax[s.node]);
    if (gi != novel.end()) agree(li, static_cast<std::size_t>(gi - novel.begin())) += 1.0;
  }
  const Assignment a = max_weight_assignment(agree);
  for (const auto& s : other) {
    const auto li = static_cast<std::size_t>(std::lower_bound(labels.begin(), labels.end(), s.label) - labels.begin());
    const int c = a.row_to_col[li];
    if (c >= 0) targets.emplace_back(s.node, static_cast<std::size_t>(novel[static_cast<std::size_t>(c)]));
  }
  return targets;
}

double ce_loss(std::span<const Matrix> p_layers, std::span<const ClassMatching> matchings,
               std::span<const SupervisedNode> supervised) {
  if (supervised.empty()) throw std::invalid_argument("ce_loss: empty supervised set");
  if (p_layers.size() != matchings.size()) throw std::invalid_argument("ce_loss: layer count mismatch");
  double loss = 0.0;
  for (std::size_t l = 0; l < p_layers.size(); ++l)
    for (auto [i, g] : ce_targets(p_layers[l], matchings[l], supervised))
      loss -= std::log(std::clamp(p_layers[l](i, g), ad::kProbFloor, 1.0));
  return loss;
}

double total_loss(double ce, double reg, double con) {
  if (!std::isfinite(ce) || !std::isfinite(reg) || !std::isfinite(con))
    throw std::invalid_argument("total_loss: non-finite component");
  return ce + reg + con;
}

// ----------------------------------------------------------------- config

void PanConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  if (layers < 1) fail("layers must be >= 1");
  if (hidden < 1) fail("hidden width must be >= 1");
  if (n_prototypes < 2) fail("n_prototypes must be >= 2");
  if (topk < 1 || topk > n_prototypes) fail("topk must lie in [1, n_prototypes]");
  if (!(learning_rate >= 0.0)) fail("learning_rate must be >= 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (refine_period < 1) fail("refine_period must be >= 1");
  if (!(eta >= 0.0)) fail("eta must be >= 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma must lie in (0,1]");
  if (!(mu >= 0.0 && mu <= 1.0)) fail("mu must lie in [0,1]");
  if (!(edge_drop_rate >= 0.0 && edge_drop_rate < 1.0)) fail("edge_drop_rate must lie in [0,1)");
  if (!(feature_mask_rate >= 0.0 && feature_mask_rate < 1.0)) fail("feature_mask_rate must lie in [0,1)");
  if (prior_n && (*prior_n < 2 || *prior_n > n_prototypes)) fail("prior class count must lie in [2, n_prototypes]");
  if (granularity_range && (granularity_range->first > granularity_range->second ||
                            granularity_range->second > n_prototypes))
    fail("granularity range must be ordered and within n_prototypes");
  if (!(granularity_tolerance >= 0.0)) fail("granularity tolerance must be >= 0");
}

std::vector<LabeledNode> labeled_nodes(const AttributedGraph& g) {
  std::vector<LabeledNode> out;
  for (std::size_t i = 0; i < g.node_count; ++i)
    if (g.label_mask[i]) out.push_back(LabeledNode{static_cast<NodeId>(i), *g.labels[i]});
  return out;
}

std::pair<std::size_t, std::size_t> default_granularity_range(std::size_t n_known, std::size_t n_prototypes) {
  const std::size_t lo = std::clamp<std::size_t>(n_known, 2, n_prototypes);
  return {lo, std::clamp<std::size_t>(3 * n_known, lo, n_prototypes)};
}

PanStack init_stack(const AttributedGraph& g, const PanConfig& config) {
  config.validate();
  g.validate();
  std::mt19937_64 rng(config.seed);
  PanStack stack;
  const Adjacency adj = build_adjacency(g.node_count, g.edges);
  const auto uniform = uniform_attention(adj);
  Matrix h = g.features;
  for (std::size_t l = 0; l < config.layers; ++l) {
    PanLayer layer;
    const std::size_t din = h.cols(), dout = config.hidden;
    const double limit = std::sqrt(6.0 / static_cast<double>(din + dout));
    std::uniform_real_distribution<double> glorot(-limit, limit);
    layer.weight = Matrix(din, dout);
    for (auto& w : layer.weight.data()) w = glorot(rng);
    // Prototypes start on representations of randomly chosen nodes.
    layer.prototypes = init_prototypes(h, config.n_prototypes, config.topk, config.prototype_jitter, rng());
    Matrix next = kernels::aggregate(uniform, kernels::matmul(h, layer.weight), adj);
    for (auto& v : next.data()) v = v > 0.0 ? v : 0.0;
    h = std::move(next);
    stack.layers.push_back(std::move(layer));
  }
  return stack;
}

// ---------------------------------------------------------------- training

namespace {

struct StepResult {
  double ce = 0.0, reg = 0.0, con = 0.0, total = 0.0;
  std::vector<Matrix> weight_grads, prototype_grads;
  TapeForward clean;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> targets;
  std::vector<std::vector<bool>> relu_signature;
};

ForwardOptions forward_options(const PanConfig& config, std::size_t n_known) {
  ForwardOptions o;
  o.attention = config.attention;
  o.granularity_range = config.granularity_range.value_or(default_granularity_range(n_known, config.n_prototypes));
  o.prior_n = config.prior_n;
  o.granularity.accuracy_tolerance = config.granularity_tolerance;
  o.granularity.tie_break = config.granularity_tie_break;
  o.cluster_seed = config.seed ^ 0x9e3779b97f4a7c15ULL;
  return o;
}

std::vector<bool> relu_signature(const ad::Tape& tape, const TapeForward& f) {
  std::vector<bool> sig;
  for (const auto& v : f.vars)
    for (double x : tape.value(v.h_out).data()) sig.push_back(x > 0.0);
  return sig;
}

std::vector<LayerPlan> frozen_plans(const std::vector<LayerCache>& caches) {
  std::vector<LayerPlan> plans(caches.size());
  for (std::size_t l = 0; l < caches.size(); ++l) {
    plans[l].kind = LayerPlan::Kind::kFrozen;
    plans[l].partition = caches[l].partition;
    plans[l].matching = caches[l].matching;
  }
  return plans;
}

// Builds the total loss on a fresh tape. With `fixed_targets` the ce targets
// are taken as given instead of being derived from the clean forward.
StepResult evaluate_step(const PanStack& stack, const Matrix& features, const ad::AdjacencyPtr& adj,
                         const AugmentedView* view, const ad::AdjacencyPtr& view_adj,
                         std::span<const LayerPlan> plans, std::span<const LabeledNode> labeled,
                         std::span<const SupervisedNode> supervised, const ForwardOptions& options,
                         const std::vector<std::vector<std::pair<std::size_t, std::size_t>>>* fixed_targets,
                         bool want_grads) {
  ad::Tape tape;
  const StackParams params = register_params(tape, stack, want_grads);
  StepResult res;
  res.clean = forward_on_tape(tape, params, stack, features, adj, plans, labeled, options);

  ad::Var ce{}, reg{}, con{};
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    auto targets = fixed_targets ? (*fixed_targets)[l]
                                 : ce_targets(res.clean.caches[l].p, res.clean.caches[l].matching, supervised);
    res.targets.push_back(targets);
    if (!targets.empty()) {
      ad::Var t = ad::nll(tape, res.clean.vars[l].p, std::move(targets));
      ce = ce.valid() ? ad::add(tape, ce, t) : t;
    }
    ad::Var b = ad::balance_kl(tape, res.clean.vars[l].r);
    reg = reg.valid() ? ad::add(tape, reg, b) : b;
  }
  if (!ce.valid()) ce = tape.constant(Matrix(1, 1, 0.0));
  res.relu_signature.push_back(relu_signature(tape, res.clean));

  ad::Var total = ad::add(tape, ce, reg);
  if (view) {
    const auto plans_aug = frozen_plans(res.clean.caches);
    const TapeForward aug = forward_on_tape(tape, params, stack, view->features, view_adj, plans_aug, labeled, options);
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
      ad::Var k = ad::row_kl(tape, res.clean.vars[l].p, aug.vars[l].p);
      con = con.valid() ? ad::add(tape, con, k) : k;
    }
    res.relu_signature.push_back(relu_signature(tape, aug));
    total = ad::add(tape, total, con);
  }
  res.ce = tape.scalar(ce);
  res.reg = tape.scalar(reg);
  res.con = con.valid() ? tape.scalar(con) : 0.0;
  res.total = tape.scalar(total);
  if (want_grads && std::isfinite(res.total)) {
    tape.backward(total);
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
      auto grad_or_zero = [&](ad::Var v, const Matrix& like) {
        const Matrix& g = tape.grad(v);
        return g.empty() ? Matrix(like.rows(), like.cols()) : g;
      };
      res.weight_grads.push_back(grad_or_zero(params.weights[l], stack.layers[l].weight));
      res.prototype_grads.push_back(grad_or_zero(params.prototypes[l], stack.layers[l].prototypes.vectors));
    }
  }
  return res;
}

void adam_step(PanStack& stack, AdamState& state, const StepResult& step, const PanConfig& config) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<Matrix*> params;
  std::vector<const Matrix*> grads;
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    params.push_back(&stack.layers[l].weight);
    grads.push_back(&step.weight_grads[l]);
    params.push_back(&stack.layers[l].prototypes.vectors);
    grads.push_back(&step.prototype_grads[l]);
  }
  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& w = params[t]->data();
    const auto& g = grads[t]->data();
    auto& m = state.m[t].data();
    auto& v = state.v[t].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] + config.weight_decay * w[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
      v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      w[i] -= config.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

std::vector<NodeId> unlabeled_nodes(const AttributedGraph& g) {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < g.node_count; ++i)
    if (!g.label_mask[i]) out.push_back(static_cast<NodeId>(i));
  return out;
}

std::size_t known_class_count(std::span<const LabeledNode> labeled) {
  std::vector<ClassId> c;
  for (const auto& l : labeled) c.push_back(l.label);
  std::sort(c.begin(), c.end());
  return static_cast<std::size_t>(std::unique(c.begin(), c.end()) - c.begin());
}

}  // namespace

FitResult fit(const AttributedGraph& g, const PanConfig& config) {
  config.validate();
  g.validate();
  const auto labeled = labeled_nodes(g);
  if (labeled.empty()) throw std::invalid_argument("fit: no labeled training nodes");
  const ForwardOptions options = forward_options(config, known_class_count(labeled));
  const auto unlabeled = unlabeled_nodes(g);

  FitResult result;
  result.stack = init_stack(g, config);
  TrainState& state = result.state;
  state.seed = config.seed;
  state.edges = g.edges;
  state.best_n.assign(config.layers, 0);

  auto adj = std::make_shared<const Adjacency>(build_adjacency(g.node_count, state.edges));
  bool search_next = true;
  std::vector<SupervisedNode> supervised;
  for (const auto& l : labeled) supervised.push_back(SupervisedNode{l.node, l.label});
  const std::size_t n_labeled = supervised.size();

  for (std::size_t epoch = 0; epoch < config.max_iterations; ++epoch) {
    state.epoch = epoch;
    std::vector<LayerPlan> plans(config.layers);
    for (std::size_t l = 0; l < config.layers; ++l) {
      plans[l].kind = search_next ? LayerPlan::Kind::kSearch : LayerPlan::Kind::kClusterAt;
      plans[l].n_clusters = state.best_n[l];
    }
    std::optional<AugmentedView> view;
    ad::AdjacencyPtr view_adj;
    if (config.use_consistency) {
      view = augment(g.features, state.edges, config.edge_drop_rate, config.feature_mask_rate,
                     config.seed * 1000003ULL + epoch);
      view_adj = std::make_shared<const Adjacency>(build_adjacency(g.node_count, view->edges));
    }
    StepResult step = evaluate_step(result.stack, g.features, adj, view ? &*view : nullptr, view_adj, plans,
                                    labeled, supervised, options, nullptr, true);
    if (!std::isfinite(step.total))
      throw DivergenceError("fit: non-finite loss at epoch " + std::to_string(epoch), state);
    if (search_next)
      for (std::size_t l = 0; l < config.layers; ++l) state.best_n[l] = step.clean.caches[l].partition.n_groups;
    search_next = false;
    state.losses.push_back(LossRecord{epoch, step.ce, step.reg, step.con, step.total});

    adam_step(result.stack, state.optimizer, step, config);

    if (config.use_refinement && (epoch + 1) % config.refine_period == 0) {
      std::vector<Matrix> preds, rs;
      for (const auto& c : step.clean.caches) {
        preds.push_back(c.p);
        rs.push_back(c.r);
      }
      const auto ens = ensemble_predict(preds, config.eta);
      const auto confident = select_confident(ens.suppressed.p_hat, unlabeled, config.gamma);
      const auto refined = refine_structure(confident, rs, config.mu, state.edges);
      state.edges = refined.refined;
      adj = std::make_shared<const Adjacency>(build_adjacency(g.node_count, state.edges));
      state.refinements.push_back(RefinementRecord{epoch, refined.recovered.size(), refined.removed.size(),
                                                   confident.size(), state.edges.size()});
      state.pseudo_labels.clear();
      const auto& ref_match = step.clean.caches.front().matching;
      for (auto [v, k] : confident.members()) {
        const auto ku = static_cast<std::size_t>(k);
        const ClassId label = ku < ref_match.group_to_class.size() && ref_match.group_to_class[ku]
                                  ? *ref_match.group_to_class[ku]
                                  : kPseudoClassBase + k;
        state.pseudo_labels.push_back(SupervisedNode{v, label});
      }
      supervised.resize(n_labeled);
      if (config.pseudo_supervision)
        supervised.insert(supervised.end(), state.pseudo_labels.begin(), state.pseudo_labels.end());
      search_next = true;
    }

    const std::size_t w = config.convergence_window;
    if (w > 0 && state.losses.size() > w) {
      const double prev = state.losses[state.losses.size() - 1 - w].total;
      const double rel = std::abs(step.total - prev) / std::max(std::abs(prev), 1e-12);
      if (rel < config.convergence_tol) {
        state.converged = true;
        break;
      }
    }
  }
  if (config.max_iterations > 0) state.epoch += 1;

  std::vector<LayerPlan> final_plans(config.layers);
  for (std::size_t l = 0; l < config.layers; ++l) {
    final_plans[l].kind = (search_next || state.best_n[l] == 0) ? LayerPlan::Kind::kSearch : LayerPlan::Kind::kClusterAt;
    final_plans[l].n_clusters = state.best_n[l];
  }
  result.caches = stack_forward(g, state.edges, result.stack, final_plans, labeled, options);
  for (std::size_t l = 0; l < config.layers; ++l) state.best_n[l] = result.caches[l].partition.n_groups;
  result.final_edges = state.edges;
  return result;
}

// ------------------------------------------------------------- grad check

GradCheckReport grad_check(const PanStack& stack, const AttributedGraph& g, const PanConfig& config,
                           std::size_t probes_per_tensor, std::uint64_t seed) {
  stack.validate(g.feature_dim());
  const auto labeled = labeled_nodes(g);
  const ForwardOptions options = forward_options(config, std::max<std::size_t>(known_class_count(labeled), 2));
  std::vector<SupervisedNode> supervised;
  for (const auto& l : labeled) supervised.push_back(SupervisedNode{l.node, l.label});
  auto adj = std::make_shared<const Adjacency>(build_adjacency(g.node_count, g.edges));

  std::optional<AugmentedView> view;
  ad::AdjacencyPtr view_adj;
  if (config.use_consistency) {
    view = augment(g.features, g.edges, config.edge_drop_rate, config.feature_mask_rate, seed + 17);
    view_adj = std::make_shared<const Adjacency>(build_adjacency(g.node_count, view->edges));
  }

  std::vector<LayerPlan> search(stack.layers.size());
  const StepResult base = evaluate_step(stack, g.features, adj, view ? &*view : nullptr, view_adj, search, labeled,
                                        supervised, options, nullptr, true);
  const auto plans = frozen_plans(base.clean.caches);
  const auto targets = base.targets;

  auto loss_at = [&](const PanStack& s) {
    return evaluate_step(s, g.features, adj, view ? &*view : nullptr, view_adj, plans, labeled, supervised, options,
                         &targets, false);
  };

  GradCheckReport report;
  constexpr double step = 1e-5;
  std::mt19937_64 rng(seed);
  PanStack probe = stack;
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    for (int which = 0; which < 2; ++which) {
      Matrix& tensor = which == 0 ? probe.layers[l].weight : probe.layers[l].prototypes.vectors;
      const Matrix& analytic = which == 0 ? base.weight_grads[l] : base.prototype_grads[l];
      std::uniform_int_distribution<std::size_t> pick(0, tensor.size() - 1);
      std::size_t done = 0, attempts = 0;
      while (done < probes_per_tensor && attempts < 20 * probes_per_tensor) {
        ++attempts;
        const std::size_t idx = pick(rng);
        const double orig = tensor.data()[idx];
        tensor.data()[idx] = orig + step;
        const StepResult plus = loss_at(probe);
        tensor.data()[idx] = orig - step;
        const StepResult minus = loss_at(probe);
        tensor.data()[idx] = orig;
        if (plus.relu_signature != base.relu_signature || minus.relu_signature != base.relu_signature) {
          ++report.kinks_resampled;
          continue;
        }
        const double fd = (plus.total - minus.total) / (2.0 * step);
        const double an = analytic.data()[idx];
        // Gradients below 1e-6 in magnitude are compared absolutely.
        const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
        report.max_relative_error = std::max(report.max_relative_error, err);
        ++report.probes;
        ++done;
      }
    }
  }
  return report;
}

// ------------------------------------------------------------- checkpoint

namespace {

constexpr const char* kCheckpointMagic = "oral-checkpoint";
constexpr int kCheckpointVersion = 1;

void write_matrix(std::ostream& out, const char* name, const Matrix& m) {
  out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  out << std::hexfloat;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out << (c ? " " : "") << m(r, c);
    out << '\n';
  }
  out << std::defaultfloat;
}

Matrix read_matrix(std::istream& in, const std::string& name) {
  std::string tag;
  std::size_t rows = 0, cols = 0;
  if (!(in >> tag >> rows >> cols) || tag != name) throw std::runtime_error("checkpoint: expected " + name);
  Matrix m(rows, cols);
  std::string tok;
  for (auto& v : m.data()) {
    if (!(in >> tok)) throw std::runtime_error("checkpoint: truncated " + name);
    char* end = nullptr;
    v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size()) throw std::runtime_error("checkpoint: bad number in " + name);
  }
  return m;
}

}  // namespace

void save_checkpoint(const PanStack& stack, const std::vector<std::size_t>& best_n, const EdgeSet& edges,
                     const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "layers " << stack.layers.size() << '\n';
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    const auto& L = stack.layers[l];
    out << "topk " << L.prototypes.topk << '\n';
    out << "best_n " << (l < best_n.size() ? best_n[l] : 0) << '\n';
    write_matrix(out, "weight", L.weight);
    write_matrix(out, "prototypes", L.prototypes.vectors);
  }
  out << "edges " << edges.size() << '\n';
  for (const auto& e : edges) out << e.u << ' ' << e.v << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string magic, tag;
  int version = 0;
  if (!(in >> magic >> version) || magic != kCheckpointMagic) throw std::runtime_error("checkpoint: bad header");
  if (version != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  std::size_t n_layers = 0;
  if (!(in >> tag >> n_layers) || tag != "layers") throw std::runtime_error("checkpoint: expected layers");
  Checkpoint cp;
  for (std::size_t l = 0; l < n_layers; ++l) {
    PanLayer layer;
    std::size_t n = 0;
    if (!(in >> tag >> layer.prototypes.topk) || tag != "topk") throw std::runtime_error("checkpoint: expected topk");
    if (!(in >> tag >> n) || tag != "best_n") throw std::runtime_error("checkpoint: expected best_n");
    cp.best_n.push_back(n);
    layer.weight = read_matrix(in, "weight");
    layer.prototypes.vectors = read_matrix(in, "prototypes");
    cp.stack.layers.push_back(std::move(layer));
  }
  std::size_t n_edges = 0;
  if (!(in >> tag >> n_edges) || tag != "edges") throw std::runtime_error("checkpoint: expected edges");
  std::vector<Edge> edges(n_edges);
  for (auto& e : edges)
    if (!(in >> e.u >> e.v)) throw std::runtime_error("checkpoint: truncated edges");
  cp.edges = EdgeSet(std::move(edges));
  return cp;
}

}  // namespace oral
