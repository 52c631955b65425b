#include "doctest.h"

#include <algorithm>
#include <random>
#include <set>

#include "oral/assignment.hpp"
#include "oral/cluster.hpp"
#include "oral/pan.hpp"
#include "oral/prototype.hpp"
#include "oral/pseudo_label.hpp"
#include "oral/refine.hpp"
#include "support.hpp"

using namespace oral;

namespace {

std::vector<int> random_groups(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<int> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = static_cast<int>(i < k ? i : rng() % k);
  std::shuffle(g.begin(), g.end(), rng);
  return g;
}

}  // namespace

TEST_CASE("r, p and attention rows are distributions") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng() % 12, d = 1 + rng() % 6, m = 2 + rng() % 8;
    PrototypeSet protos{test::random_matrix(m, d, rng(), 3.0), 2};
    const Matrix h = test::random_matrix(n, d, rng(), 3.0);
    const Matrix r = representativeness(h, protos);
    const GroupPartition part = canonical_partition(random_groups(m, 1 + rng() % m, rng));
    const Matrix p = node_group_assignment(r, part);
    const Adjacency adj = build_adjacency(n, test::random_edges(n, 0.3, rng()));
    const auto alpha = attention_scores(p, adj);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(test::row_sum(r, i) == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(test::row_sum(p, i) == doctest::Approx(1.0).epsilon(1e-9));
      double a = 0.0;
      for (std::size_t s = adj.offsets[i]; s < adj.offsets[i + 1]; ++s) {
        CHECK(alpha[s] >= 0.0);
        a += alpha[s];
      }
      CHECK(a == doctest::Approx(1.0).epsilon(1e-9));
    }
    for (double v : r.data()) CHECK(v >= 0.0);
  }
}

TEST_CASE("losses are nonnegative and vanish at their minimisers") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 2 + rng() % 10, c = 2 + rng() % 6;
    const Matrix r = test::random_stochastic(n, c, rng());
    CHECK(balance_regularizer(r) >= 0.0);
    const Matrix q = test::random_stochastic(n, c, rng());
    const std::vector<Matrix> a{r}, b{q};
    CHECK(consistency_loss(a, b) >= 0.0);
    CHECK(consistency_loss(a, a) == doctest::Approx(0.0).epsilon(1e-12));
  }
  for (std::size_t c = 2; c < 8; ++c) {
    Matrix balanced(c * 3, c);
    for (std::size_t i = 0; i < c * 3; ++i) balanced(i, i % c) = 1.0;
    CHECK(balance_regularizer(balanced) == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("splits partition nodes and classes") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 40; ++t) {
    SbmSpec spec;
    const std::size_t classes = 2 + rng() % 5;
    for (std::size_t c = 0; c < classes; ++c) spec.class_sizes.push_back(8 + rng() % 10);
    spec.seed = rng();
    const AttributedGraph g = generate_sbm(spec).graph;
    const OpenWorldSplit s = make_open_world_split(g, 0.6, 0.6, 0.2, rng());
    std::vector<int> seen(g.node_count, 0);
    for (auto v : s.train_nodes) ++seen[v];
    for (auto v : s.val_nodes) ++seen[v];
    for (auto v : s.test_nodes) ++seen[v];
    for (int c : seen) CHECK(c == 1);
    for (auto v : s.train_nodes) CHECK(s.is_known(*g.labels[v]));
    CHECK(s.known_classes.size() >= 1);
    CHECK(s.known_classes.size() < s.all_classes.size());
    const AttributedGraph a = apply_split(g, s);
    std::size_t masked = 0;
    for (bool b : a.label_mask) masked += b;
    CHECK(masked == s.train_nodes.size());
  }
}

TEST_CASE("refinement algebra") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 6 + rng() % 20;
    const EdgeSet edges = test::random_edges(n, 0.2, rng());
    const std::vector<Matrix> r{test::random_stochastic(n, 4, rng()), test::random_stochastic(n, 4, rng())};
    const Matrix masked = test::random_stochastic(n, 3, rng());
    std::vector<NodeId> unlabeled;
    for (NodeId v = 0; v < n; ++v)
      if (rng() % 3) unlabeled.push_back(v);
    const ConfidentSet conf = select_confident(masked, unlabeled, 0.5);
    const double mu = static_cast<double>(rng() % 11) / 10.0;
    const RefinementResult res = refine_structure(conf, r, mu, edges);
    CHECK(res.recovered.intersection(edges).empty());
    CHECK(res.removed.difference(edges).empty());
    CHECK(res.refined == edges.difference(res.removed).union_with(res.recovered));
    CHECK(res.refined.size() == edges.size() - res.removed.size() + res.recovered.size());
    std::vector<int> group(n, -1);
    for (auto [v, k] : conf.members()) group[v] = k;
    for (const auto& e : res.recovered) {
      CHECK(group[e.u] >= 0);
      CHECK(group[e.u] == group[e.v]);
    }
    for (const auto& e : res.refined)
      if (group[e.u] >= 0 && group[e.v] >= 0) CHECK(group[e.u] == group[e.v]);
    if (mu == 0.0) CHECK(res.recovered.empty());
  }
}

TEST_CASE("assignment is optimal and injective") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 300; ++t) {
    Matrix w = test::random_matrix(1 + rng() % 6, 1 + rng() % 6, rng());
    for (auto& v : w.data()) v = std::abs(v);
    const Assignment a = max_weight_assignment(w);
    double total = 0.0;
    std::set<int> used;
    for (std::size_t i = 0; i < w.rows(); ++i)
      if (a.row_to_col[i] >= 0) {
        CHECK(used.insert(a.row_to_col[i]).second);
        total += w(i, static_cast<std::size_t>(a.row_to_col[i]));
      }
    CHECK(total == doctest::Approx(test::brute_force_assignment(w)));
  }
}

TEST_CASE("ensemble output is a convex combination of aligned layers") {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 3 + rng() % 10, layers = 1 + rng() % 4;
    std::vector<Matrix> preds;
    for (std::size_t l = 0; l < layers; ++l) preds.push_back(test::random_stochastic(n, 2 + rng() % 4, rng()));
    const auto e = ensemble_predict(preds, 0.0);
    for (std::size_t i = 0; i < n; ++i) CHECK(test::row_sum(e.averaged, i) == doctest::Approx(1.0));
    for (const auto& col : e.layers.alignment) {
      std::set<int> s(col.begin(), col.end());
      CHECK(s.size() == col.size());
    }
  }
}
