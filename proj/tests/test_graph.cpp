#include "doctest.h"

#include <fstream>
#include <array>
#include <map>
#include <set>

#include "oral/graph.hpp"
#include "support.hpp"

using namespace oral;

namespace {

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::filesystem::path tiny_dataset(const std::string& name, const std::string& edges) {
  const auto dir = test::scratch_dir(name);
  write(dir / "features.csv", "1,0\n0,1\n1,1\n");
  write(dir / "edges.csv", edges);
  return dir;
}

}  // namespace

TEST_CASE("load minimal graph") {
  const auto dir = tiny_dataset("load_min", "0,1\n");
  const AttributedGraph g = load_graph(dir);
  CHECK(g.node_count == 3);
  CHECK(g.feature_dim() == 2);
  CHECK(g.edges.size() == 1);
  CHECK(g.edges.contains(0, 1));
  CHECK(g.edges.contains(1, 0));
  CHECK(neighborhood(g, 1) == std::vector<NodeId>{0});
  CHECK_FALSE(g.labels[0].has_value());
}

TEST_CASE("load errors") {
  CHECK_THROWS_AS(load_graph(tiny_dataset("load_oob", "5,1\n")), GraphError);
  CHECK_THROWS_AS(load_graph(tiny_dataset("load_bad", "0;1\n")), GraphError);
  CHECK_THROWS_AS(load_graph(tiny_dataset("load_self", "1,1\n")), GraphError);
  CHECK_THROWS_AS(load_graph(test::scratch_dir("load_missing")), GraphError);
  const auto dir = tiny_dataset("load_conflict", "0,1\n");
  write(dir / "labels.csv", "0,1\n0,2\n");
  CHECK_THROWS_AS(load_graph(dir), GraphError);
  const auto ragged = tiny_dataset("load_ragged", "0,1\n");
  write(ragged / "features.csv", "1,0\n0\n1,1\n");
  CHECK_THROWS_AS(load_graph(ragged), GraphError);
}

TEST_CASE("duplicate and mirrored edges collapse") {
  const auto dir = tiny_dataset("load_dup", "0,1\n1,0\n0,1\n1,2\n");
  CHECK(load_graph(dir).edges.size() == 2);
}

TEST_CASE("save and load round trip") {
  SbmSpec spec;
  spec.class_sizes = {6, 7};
  spec.intra_edge_prob = 0.5;
  spec.inter_edge_prob = 0.1;
  spec.seed = 3;
  AttributedGraph g = generate_sbm(spec).graph;
  const auto dir = test::scratch_dir("roundtrip");
  save_graph(g, dir);
  const AttributedGraph back = load_graph(dir);
  CHECK(back.node_count == g.node_count);
  CHECK(back.features == g.features);
  CHECK(back.edges == g.edges);
  CHECK(back.labels == g.labels);
}

TEST_CASE("neighborhood") {
  AttributedGraph g;
  g.node_count = 4;
  g.features = Matrix(4, 1);
  g.edges = EdgeSet::from_pairs({{0, 1}, {0, 2}});
  g.labels.assign(4, std::nullopt);
  g.label_mask.assign(4, false);
  CHECK(neighborhood(g, 0) == std::vector<NodeId>{1, 2});
  CHECK(neighborhood(g, 3).empty());
  CHECK_THROWS_AS(neighborhood(g, 4), GraphError);
}

TEST_CASE("neighborhood matches raw degree on an SBM") {
  SbmSpec spec;
  spec.class_sizes = {20, 20, 20};
  spec.intra_edge_prob = 0.3;
  spec.inter_edge_prob = 0.05;
  spec.seed = 9;
  const AttributedGraph g = generate_sbm(spec).graph;
  std::vector<std::size_t> degree(g.node_count, 0);
  for (const auto& e : g.edges.edges()) {
    ++degree[e.u];
    ++degree[e.v];
  }
  for (NodeId v = 0; v < g.node_count; ++v) CHECK(neighborhood(g, v).size() == degree[v]);
}

TEST_CASE("open-world split class counts") {
  SbmSpec spec;
  spec.class_sizes = std::vector<std::size_t>(7, 10);
  spec.feature_dim = 8;
  spec.seed = 1;
  const AttributedGraph g = generate_sbm(spec).graph;
  const OpenWorldSplit s = make_open_world_split(g, 0.8, 0.7, 0.15, 4);
  CHECK(s.known_classes.size() == 5);
  CHECK(s.all_classes.size() == 7);
  CHECK_THROWS_AS(make_open_world_split(g, 1.0, 0.7, 0.15, 4), GraphError);
  AttributedGraph partial = g;
  partial.labels[0].reset();
  CHECK_THROWS_AS(make_open_world_split(partial, 0.8, 0.7, 0.15, 4), GraphError);
}

TEST_CASE("open-world split proportions") {
  SbmSpec spec;
  spec.class_sizes = {25, 25, 25, 25};
  spec.seed = 2;
  const AttributedGraph g = generate_sbm(spec).graph;
  const OpenWorldSplit s = make_open_world_split(g, 0.8, 0.7, 0.15, 11);
  std::map<ClassId, std::array<std::size_t, 3>> counts;
  for (NodeId v : s.train_nodes) ++counts[*g.labels[v]][0];
  for (NodeId v : s.val_nodes) ++counts[*g.labels[v]][1];
  for (NodeId v : s.test_nodes) ++counts[*g.labels[v]][2];
  for (ClassId c : s.all_classes) {
    const auto& k = counts[c];
    if (s.is_known(c)) {
      CHECK(std::abs(static_cast<double>(k[0]) / 25.0 - 0.7) <= 1.0 / 25.0);
      CHECK(std::abs(static_cast<double>(k[1]) / 25.0 - 0.15) <= 1.0 / 25.0);
      CHECK(k[2] > 0);
    } else {
      CHECK(k[0] == 0);
      CHECK(k[1] == 0);
      CHECK(k[2] == 25);
    }
  }
  const AttributedGraph masked = apply_split(g, s);
  std::size_t visible = 0;
  for (bool b : masked.label_mask) visible += b;
  CHECK(visible == s.train_nodes.size());
}

TEST_CASE("split file round trip") {
  SbmSpec spec;
  spec.class_sizes = {10, 10, 10};
  const AttributedGraph g = generate_sbm(spec).graph;
  const OpenWorldSplit s = make_open_world_split(g, 0.8, 0.7, 0.15, 1);
  const auto file = test::scratch_dir("split") / "split.json";
  save_split(s, file);
  const OpenWorldSplit back = load_split(file);
  CHECK(back.known_classes == s.known_classes);
  CHECK(back.all_classes == s.all_classes);
  CHECK(back.train_nodes == s.train_nodes);
  CHECK(back.val_nodes == s.val_nodes);
  CHECK(back.test_nodes == s.test_nodes);
}

TEST_CASE("sbm degenerate probabilities give disjoint cliques") {
  SbmSpec spec;
  spec.class_sizes = {10, 10};
  spec.intra_edge_prob = 1.0;
  spec.inter_edge_prob = 0.0;
  const SbmGraph s = generate_sbm(spec);
  CHECK(s.graph.edges.size() == 2 * 45);
  for (const auto& e : s.graph.edges.edges()) CHECK(s.ground_truth[e.u] == s.ground_truth[e.v]);
}

TEST_CASE("sbm intra-edge count within three sigma") {
  SbmSpec spec;
  spec.class_sizes = std::vector<std::size_t>(5, 50);
  spec.intra_edge_prob = 0.1;
  spec.inter_edge_prob = 0.01;
  spec.seed = 17;
  const SbmGraph s = generate_sbm(spec);
  std::size_t intra = 0;
  for (const auto& e : s.graph.edges.edges()) intra += s.ground_truth[e.u] == s.ground_truth[e.v];
  const double trials = 5.0 * 50.0 * 49.0 / 2.0;
  const double mean = trials * 0.1, sd = std::sqrt(trials * 0.1 * 0.9);
  CHECK(std::abs(static_cast<double>(intra) - mean) <= 3.0 * sd);
}

TEST_CASE("sbm is deterministic and validates its spec") {
  SbmSpec spec;
  spec.class_sizes = {15, 15, 15};
  spec.seed = 5;
  const SbmGraph a = generate_sbm(spec), b = generate_sbm(spec);
  CHECK(a.graph.features == b.graph.features);
  CHECK(a.graph.edges == b.graph.edges);
  spec.intra_edge_prob = 0.01;
  spec.inter_edge_prob = 0.1;
  CHECK_THROWS_AS(generate_sbm(spec), GraphError);
}

TEST_CASE("edge set algebra") {
  const EdgeSet a = EdgeSet::from_pairs({{0, 1}, {1, 2}, {2, 3}});
  const EdgeSet b = EdgeSet::from_pairs({{2, 1}, {3, 4}});
  CHECK(a.difference(b) == EdgeSet::from_pairs({{0, 1}, {2, 3}}));
  CHECK(a.union_with(b).size() == 4);
  CHECK(a.intersection(b) == EdgeSet::from_pairs({{1, 2}}));
  CHECK_THROWS_AS(EdgeSet::from_pairs({{3, 3}}), GraphError);
}
