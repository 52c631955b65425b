#include "doctest.h"

#include <random>
#include <set>

#include "oral/cluster.hpp"
#include "support.hpp"

using namespace oral;

namespace {

PrototypeGraph block_graph(const std::vector<std::size_t>& sizes) {
  std::size_t n = 0;
  for (auto s : sizes) n += s;
  PrototypeGraph pg;
  pg.similarity = Matrix(n, n);
  std::size_t off = 0;
  for (auto s : sizes) {
    for (std::size_t a = off; a < off + s; ++a)
      for (std::size_t b = off; b < off + s; ++b) pg.similarity(a, b) = a == b ? 1.0 : 0.6;
    off += s;
  }
  pg.associations.assign(n, {});
  return pg;
}

// Nodes concentrated on disjoint prototype blocks.
Matrix block_r(const std::vector<std::size_t>& block_of_node, const std::vector<std::size_t>& sizes,
               std::uint64_t seed) {
  std::size_t n_proto = 0;
  for (auto s : sizes) n_proto += s;
  std::vector<std::size_t> start;
  for (std::size_t b = 0, off = 0; b < sizes.size(); off += sizes[b++]) start.push_back(off);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix r(block_of_node.size(), n_proto, 0.001);
  for (std::size_t i = 0; i < block_of_node.size(); ++i) {
    const auto b = block_of_node[i];
    for (std::size_t j = start[b]; j < start[b] + sizes[b]; ++j) r(i, j) = 1.0 + u(rng);
    const double s = test::row_sum(r, i);
    for (double& v : r.row(i)) v /= s;
  }
  return r;
}

}  // namespace

TEST_CASE("spectral clustering recovers planted blocks") {
  const PrototypeGraph pg = block_graph({3, 3});
  const GroupPartition part = cluster_prototypes(pg, 2, 1);
  part.validate();
  CHECK(part.n_groups == 2);
  CHECK(part.group_of[0] == part.group_of[1]);
  CHECK(part.group_of[1] == part.group_of[2]);
  CHECK(part.group_of[3] == part.group_of[4]);
  CHECK(part.group_of[4] == part.group_of[5]);
  CHECK(part.group_of[0] != part.group_of[3]);
}

TEST_CASE("spectral clustering edge cases") {
  const PrototypeGraph pg = block_graph({2, 2, 2});
  const GroupPartition single = cluster_prototypes(pg, 6, 1);
  CHECK(std::set<int>(single.group_of.begin(), single.group_of.end()).size() == 6);

  PrototypeGraph identity;
  identity.similarity = Matrix::identity(5);
  const GroupPartition any = cluster_prototypes(identity, 2, 3);
  any.validate();
  CHECK(any.n_groups == 2);

  CHECK_THROWS(cluster_prototypes(pg, 1, 1));
  CHECK_THROWS(cluster_prototypes(pg, 7, 1));
  PrototypeGraph asym = pg;
  asym.similarity(0, 1) = 0.1;
  CHECK_THROWS(cluster_prototypes(asym, 2, 1));
}

TEST_CASE("kmeans separates blobs and is deterministic") {
  Matrix pts(20, 2);
  for (std::size_t i = 0; i < 20; ++i) {
    pts(i, 0) = (i < 10 ? 0.0 : 50.0) + 0.01 * static_cast<double>(i);
    pts(i, 1) = 0.02 * static_cast<double>(i % 3);
  }
  const KMeansResult k = kmeans(pts, 2, 10, 5);
  for (std::size_t i = 1; i < 10; ++i) CHECK(k.labels[i] == k.labels[0]);
  for (std::size_t i = 11; i < 20; ++i) CHECK(k.labels[i] == k.labels[10]);
  CHECK(k.labels[0] != k.labels[10]);
  CHECK(kmeans(pts, 2, 10, 5).labels == k.labels);
  CHECK_THROWS(kmeans(pts, 21, 1, 5));
}

TEST_CASE("node group assignment") {
  const Matrix r{{0.5, 0.3, 0.2}};
  const Matrix p = node_group_assignment(r, canonical_partition({0, 1, 0}));
  CHECK(p(0, 0) == doctest::Approx(0.7));
  CHECK(p(0, 1) == doctest::Approx(0.3));
  const Matrix all = node_group_assignment(test::random_stochastic(4, 3, 1), canonical_partition({0, 0, 0}));
  for (std::size_t i = 0; i < 4; ++i) CHECK(all(i, 0) == doctest::Approx(1.0));
  const Matrix rr = test::random_stochastic(4, 3, 2);
  CHECK(max_abs_diff(node_group_assignment(rr, canonical_partition({0, 1, 2})), rr) == 0.0);
}

TEST_CASE("match and score on the spec agreement matrix") {
  // Agreement [[5,0],[0,4],[1,1]] over groups g0..g2 and classes c0, c1.
  std::vector<LabeledNode> labeled;
  Matrix p(11, 3);
  NodeId id = 0;
  auto add = [&](int group, ClassId c, int count) {
    for (int k = 0; k < count; ++k) {
      p(id, static_cast<std::size_t>(group)) = 1.0;
      labeled.push_back({id++, c});
    }
  };
  add(0, 0, 5);
  add(1, 1, 4);
  add(2, 0, 1);
  add(2, 1, 1);
  const ClassMatching m = match_and_score(p, labeled);
  CHECK(m.group_to_class[0] == 0);
  CHECK(m.group_to_class[1] == 1);
  CHECK_FALSE(m.group_to_class[2].has_value());
  CHECK(m.novel_group_ids == std::vector<int>{2});
  CHECK(m.accuracy == doctest::Approx(9.0 / 11.0));
  CHECK(m.group_of_class(1) == 1);
  CHECK_THROWS(match_and_score(p, std::vector<LabeledNode>{}));
}

TEST_CASE("match and score is invariant to relabeling") {
  const Matrix p = test::random_stochastic(30, 4, 9);
  std::vector<LabeledNode> labeled, relabeled;
  for (NodeId i = 0; i < 30; ++i) {
    labeled.push_back({i, static_cast<ClassId>(i % 3)});
    relabeled.push_back({i, static_cast<ClassId>(10 + (i + 1) % 3)});
  }
  Matrix permuted(30, 4);
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t j = 0; j < 4; ++j) permuted(i, (j + 2) % 4) = p(i, j);
  const double base = match_and_score(p, labeled).accuracy;
  CHECK(match_and_score(p, relabeled).accuracy == doctest::Approx(base));
  CHECK(match_and_score(permuted, labeled).accuracy == doctest::Approx(base));
}

TEST_CASE("granularity search") {
  const std::vector<std::size_t> sizes{3, 3, 3};
  std::vector<std::size_t> block;
  for (std::size_t i = 0; i < 45; ++i) block.push_back(i % 3);
  const Matrix r = block_r(block, sizes, 4);
  const PrototypeGraph pg = build_prototype_graph(r, 3);
  std::vector<LabeledNode> labeled;
  for (NodeId i = 0; i < 45; ++i)
    if (block[i] < 2) labeled.push_back({i, static_cast<ClassId>(block[i])});

  const GranularityResult fixed = search_granularity(pg, r, labeled, {2, 6}, 3, 1);
  CHECK(fixed.best_n == 3);
  CHECK(fixed.partition.n_groups == 3);

  const GranularityResult single = search_granularity(pg, r, labeled, {4, 4}, std::nullopt, 1);
  const GranularityResult forced = search_granularity(pg, r, labeled, {2, 6}, 4, 1);
  CHECK(single.best_n == 4);
  CHECK(single.partition.group_of == forced.partition.group_of);

  const GranularityResult free = search_granularity(pg, r, labeled, {2, 6}, std::nullopt, 1);
  CHECK(free.candidates.size() == 5);
  for (const auto& c : free.candidates) CHECK(c.accuracy <= free.matching.accuracy + 1e-12);
  CHECK_THROWS(search_granularity(pg, r, labeled, {5, 4}, std::nullopt, 1));
  CHECK_THROWS(search_granularity(pg, r, labeled, {2, 4}, 5, 1));
}

TEST_CASE("eigengap tie-break prefers the planted granularity") {
  // Labels cover two of three blocks, so n = 2 and n = 3 can tie on accuracy
  // when the unlabeled block merges into a labeled one.
  const std::vector<std::size_t> sizes{4, 4, 4};
  std::vector<std::size_t> block;
  for (std::size_t i = 0; i < 60; ++i) block.push_back(i % 3);
  const Matrix r = block_r(block, sizes, 8);
  const PrototypeGraph pg = build_prototype_graph(r, 4);
  std::vector<LabeledNode> labeled;
  for (NodeId i = 0; i < 60; ++i)
    if (block[i] < 2) labeled.push_back({i, static_cast<ClassId>(block[i])});
  GranularityOptions opt;
  opt.accuracy_tolerance = 0.05;
  opt.tie_break = GranularityTieBreak::kLargestEigengap;
  CHECK(search_granularity(pg, r, labeled, {2, 6}, std::nullopt, 1, opt).best_n == 3);
}
