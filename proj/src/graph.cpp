#include "oral/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace oral {

// ---------------------------------------------------------------- EdgeSet

EdgeSet::EdgeSet(std::vector<Edge> edges) : edges_(std::move(edges)) {
  for (auto& e : edges_) {
    if (e.u == e.v) throw GraphError("self-loop on node " + std::to_string(e.u));
    e = Edge::make(e.u, e.v);
  }
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
}

EdgeSet EdgeSet::from_pairs(const std::vector<std::pair<NodeId, NodeId>>& pairs) {
  std::vector<Edge> e;
  e.reserve(pairs.size());
  for (auto [a, b] : pairs) e.push_back(Edge{a, b});
  return EdgeSet(std::move(e));
}

bool EdgeSet::contains(NodeId a, NodeId b) const {
  if (a == b) return false;
  return std::binary_search(edges_.begin(), edges_.end(), Edge::make(a, b));
}

bool EdgeSet::insert(NodeId a, NodeId b) {
  if (a == b) throw GraphError("self-loop on node " + std::to_string(a));
  const Edge e = Edge::make(a, b);
  auto it = std::lower_bound(edges_.begin(), edges_.end(), e);
  if (it != edges_.end() && *it == e) return false;
  edges_.insert(it, e);
  return true;
}

EdgeSet EdgeSet::difference(const EdgeSet& other) const {
  EdgeSet out;
  std::set_difference(edges_.begin(), edges_.end(), other.edges_.begin(), other.edges_.end(),
                      std::back_inserter(out.edges_));
  return out;
}

EdgeSet EdgeSet::union_with(const EdgeSet& other) const {
  EdgeSet out;
  std::set_union(edges_.begin(), edges_.end(), other.edges_.begin(), other.edges_.end(),
                 std::back_inserter(out.edges_));
  return out;
}

EdgeSet EdgeSet::intersection(const EdgeSet& other) const {
  EdgeSet out;
  std::set_intersection(edges_.begin(), edges_.end(), other.edges_.begin(), other.edges_.end(),
                        std::back_inserter(out.edges_));
  return out;
}

NodeId EdgeSet::max_node() const {
  NodeId m = 0;
  for (const auto& e : edges_) m = std::max(m, e.v);
  return m;
}

// --------------------------------------------------------- AttributedGraph

bool AttributedGraph::fully_labeled() const {
  return labels.size() == node_count &&
         std::all_of(labels.begin(), labels.end(), [](const auto& l) { return l.has_value(); });
}

void AttributedGraph::validate() const {
  if (features.rows() != node_count)
    throw GraphError("feature rows (" + std::to_string(features.rows()) +
                     ") != node count (" + std::to_string(node_count) + ")");
  if (!edges.empty() && edges.max_node() >= node_count)
    throw GraphError("edge endpoint " + std::to_string(edges.max_node()) + " out of range");
  if (labels.size() != node_count || label_mask.size() != node_count)
    throw GraphError("label arrays must have one entry per node");
  for (std::size_t i = 0; i < node_count; ++i)
    if (label_mask[i] && !labels[i]) throw GraphError("masked node " + std::to_string(i) + " has no label");
}

std::vector<ClassId> class_ids(const AttributedGraph& g) {
  std::set<ClassId> s;
  for (const auto& l : g.labels)
    if (l) s.insert(*l);
  return {s.begin(), s.end()};
}

Adjacency build_adjacency(std::size_t node_count, const EdgeSet& edges) {
  Adjacency adj;
  adj.node_count = node_count;
  std::vector<std::size_t> degree(node_count, 1);  // self slot
  for (const auto& e : edges) {
    if (e.v >= node_count) throw GraphError("edge endpoint out of range");
    ++degree[e.u];
    ++degree[e.v];
  }
  adj.offsets.assign(node_count + 1, 0);
  for (std::size_t i = 0; i < node_count; ++i) adj.offsets[i + 1] = adj.offsets[i] + degree[i];
  adj.targets.resize(adj.offsets.back());
  std::vector<std::size_t> cursor(adj.offsets.begin(), adj.offsets.end() - 1);
  for (std::size_t i = 0; i < node_count; ++i) adj.targets[cursor[i]++] = static_cast<NodeId>(i);
  for (const auto& e : edges) {
    adj.targets[cursor[e.u]++] = e.v;
    adj.targets[cursor[e.v]++] = e.u;
  }
  for (std::size_t i = 0; i < node_count; ++i)
    std::sort(adj.targets.begin() + adj.offsets[i], adj.targets.begin() + adj.offsets[i + 1]);
  adj.reverse.resize(adj.targets.size());
  for (std::size_t i = 0; i < node_count; ++i)
    for (std::size_t s = adj.offsets[i]; s < adj.offsets[i + 1]; ++s) {
      const std::size_t k = adj.targets[s];
      auto first = adj.targets.begin() + adj.offsets[k];
      auto last = adj.targets.begin() + adj.offsets[k + 1];
      adj.reverse[s] = static_cast<std::size_t>(std::lower_bound(first, last, i) - adj.targets.begin());
    }
  return adj;
}

std::vector<NodeId> neighborhood(const AttributedGraph& g, NodeId v) {
  if (v >= g.node_count) throw GraphError("node " + std::to_string(v) + " out of range");
  std::vector<NodeId> out;
  for (const auto& e : g.edges) {
    if (e.u == v) out.push_back(e.v);
    else if (e.v == v) out.push_back(e.u);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------- CSV IO

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
  return s;
}

double parse_real(const std::string& cell, const std::string& where) {
  const std::string t = trim(cell);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size() || !std::isfinite(v))
    throw GraphError(where + ": malformed real '" + cell + "'");
  return v;
}

long long parse_int(const std::string& cell, const std::string& where) {
  const std::string t = trim(cell);
  char* end = nullptr;
  const long long v = std::strtoll(t.c_str(), &end, 10);
  if (t.empty() || end != t.c_str() + t.size()) throw GraphError(where + ": malformed integer '" + cell + "'");
  return v;
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw GraphError("cannot open " + p.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw GraphError("cannot write " + p.string());
  out.precision(17);
  return out;
}

}  // namespace

AttributedGraph load_graph(const std::filesystem::path& dir) {
  AttributedGraph g;
  {
    auto in = open_in(dir / "features.csv");
    std::vector<double> values;
    std::size_t cols = 0, rows = 0;
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      const std::string where = "features.csv:" + std::to_string(rows + 1);
      auto cells = split_csv(line);
      if (rows == 0) cols = cells.size();
      if (cells.size() != cols)
        throw GraphError(where + ": expected " + std::to_string(cols) + " columns, got " +
                         std::to_string(cells.size()));
      for (const auto& c : cells) values.push_back(parse_real(c, where));
      ++rows;
    }
    g.node_count = rows;
    g.features = Matrix(rows, cols);
    g.features.data() = std::move(values);
  }
  {
    auto in = open_in(dir / "edges.csv");
    std::vector<std::pair<NodeId, NodeId>> pairs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      const std::string where = "edges.csv:" + std::to_string(lineno);
      auto cells = split_csv(line);
      if (cells.size() != 2) throw GraphError(where + ": expected 'u,v'");
      const long long u = parse_int(cells[0], where), v = parse_int(cells[1], where);
      if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= g.node_count ||
          static_cast<std::size_t>(v) >= g.node_count)
        throw GraphError(where + ": node index out of range for " + std::to_string(g.node_count) + " nodes");
      if (u == v) throw GraphError(where + ": self-loop");
      pairs.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
    }
    g.edges = EdgeSet::from_pairs(pairs);
  }
  g.labels.assign(g.node_count, std::nullopt);
  g.label_mask.assign(g.node_count, false);
  if (std::filesystem::exists(dir / "labels.csv")) {
    auto in = open_in(dir / "labels.csv");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      const std::string where = "labels.csv:" + std::to_string(lineno);
      auto cells = split_csv(line);
      if (cells.size() != 2) throw GraphError(where + ": expected 'node_id,class_id'");
      const long long node = parse_int(cells[0], where), cls = parse_int(cells[1], where);
      if (node < 0 || static_cast<std::size_t>(node) >= g.node_count)
        throw GraphError(where + ": node index out of range");
      if (cls < 0) throw GraphError(where + ": negative class id");
      auto& slot = g.labels[static_cast<std::size_t>(node)];
      if (slot && *slot != cls) throw GraphError(where + ": conflicting label for node " + cells[0]);
      slot = static_cast<ClassId>(cls);
    }
  }
  g.validate();
  return g;
}

void write_edges_csv(const EdgeSet& edges, const std::filesystem::path& file) {
  auto out = open_out(file);
  for (const auto& e : edges) out << e.u << ',' << e.v << '\n';
}

void save_graph(const AttributedGraph& g, const std::filesystem::path& dir) {
  g.validate();
  std::filesystem::create_directories(dir);
  {
    auto out = open_out(dir / "features.csv");
    for (std::size_t i = 0; i < g.node_count; ++i) {
      auto r = g.features.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) out << (j ? "," : "") << r[j];
      out << '\n';
    }
  }
  write_edges_csv(g.edges, dir / "edges.csv");
  auto out = open_out(dir / "labels.csv");
  for (std::size_t i = 0; i < g.node_count; ++i)
    if (g.labels[i]) out << i << ',' << *g.labels[i] << '\n';
}

// ------------------------------------------------------------------ split

bool OpenWorldSplit::is_known(ClassId c) const {
  return std::binary_search(known_classes.begin(), known_classes.end(), c);
}

OpenWorldSplit make_open_world_split(const AttributedGraph& g, double known_class_fraction,
                                     double train_fraction, double val_fraction,
                                     std::uint64_t seed) {
  if (!g.fully_labeled()) throw GraphError("open-world split requires a fully labeled graph");
  auto in_unit = [](double f) { return f > 0.0 && f < 1.0; };
  if (!in_unit(known_class_fraction) || !in_unit(train_fraction) || !(val_fraction >= 0.0 && val_fraction < 1.0) ||
      train_fraction + val_fraction >= 1.0 + 1e-12)
    throw GraphError("split fractions must lie in (0,1) and train + val must not exceed 1");

  OpenWorldSplit split;
  split.all_classes = class_ids(g);
  const auto n_classes = static_cast<long long>(split.all_classes.size());
  if (n_classes < 2) throw GraphError("open-world split needs at least two classes");
  long long n_known = static_cast<long long>(std::floor(known_class_fraction * static_cast<double>(n_classes) + 1e-9));
  n_known = std::clamp<long long>(n_known, 1, n_classes - 1);

  std::mt19937_64 rng(seed);
  auto shuffled = split.all_classes;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  split.known_classes.assign(shuffled.begin(), shuffled.begin() + n_known);
  std::sort(split.known_classes.begin(), split.known_classes.end());

  std::map<ClassId, std::vector<NodeId>> by_class;
  for (std::size_t i = 0; i < g.node_count; ++i) by_class[*g.labels[i]].push_back(static_cast<NodeId>(i));
  for (auto& [cls, nodes] : by_class) {
    if (!split.is_known(cls)) {
      split.test_nodes.insert(split.test_nodes.end(), nodes.begin(), nodes.end());
      continue;
    }
    std::shuffle(nodes.begin(), nodes.end(), rng);
    const auto n = static_cast<double>(nodes.size());
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * n));
    auto n_val = static_cast<std::size_t>(std::llround(val_fraction * n));
    n_train = std::min(n_train, nodes.size());
    n_val = std::min(n_val, nodes.size() - n_train);
    split.train_nodes.insert(split.train_nodes.end(), nodes.begin(), nodes.begin() + n_train);
    split.val_nodes.insert(split.val_nodes.end(), nodes.begin() + n_train, nodes.begin() + n_train + n_val);
    split.test_nodes.insert(split.test_nodes.end(), nodes.begin() + n_train + n_val, nodes.end());
  }
  std::sort(split.train_nodes.begin(), split.train_nodes.end());
  std::sort(split.val_nodes.begin(), split.val_nodes.end());
  std::sort(split.test_nodes.begin(), split.test_nodes.end());
  if (split.train_nodes.empty()) throw GraphError("split produced an empty training set");
  if (split.test_nodes.empty()) throw GraphError("split produced an empty test set");
  return split;
}

AttributedGraph apply_split(const AttributedGraph& g, const OpenWorldSplit& split) {
  AttributedGraph out = g;
  out.label_mask.assign(g.node_count, false);
  for (NodeId v : split.train_nodes) {
    if (v >= g.node_count || !g.labels[v]) throw GraphError("training node without label");
    out.label_mask[v] = true;
  }
  return out;
}

void save_split(const OpenWorldSplit& split, const std::filesystem::path& file) {
  nlohmann::json j;
  j["known_classes"] = split.known_classes;
  j["all_classes"] = split.all_classes;
  j["train_nodes"] = split.train_nodes;
  j["val_nodes"] = split.val_nodes;
  j["test_nodes"] = split.test_nodes;
  auto out = open_out(file);
  out << j.dump(1) << '\n';
}

OpenWorldSplit load_split(const std::filesystem::path& file) {
  auto in = open_in(file);
  nlohmann::json j;
  try {
    in >> j;
    OpenWorldSplit s;
    j.at("known_classes").get_to(s.known_classes);
    j.at("all_classes").get_to(s.all_classes);
    j.at("train_nodes").get_to(s.train_nodes);
    j.at("val_nodes").get_to(s.val_nodes);
    j.at("test_nodes").get_to(s.test_nodes);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw GraphError(file.string() + ": " + e.what());
  }
}

// -------------------------------------------------------------------- SBM

void SbmSpec::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (class_sizes.empty()) throw GraphError("SBM needs at least one class");
  if (!prob(intra_edge_prob) || !prob(inter_edge_prob)) throw GraphError("SBM probabilities must lie in [0,1]");
  if (class_sizes.size() > 1 && !(intra_edge_prob > inter_edge_prob))
    throw GraphError("SBM requires intra_edge_prob > inter_edge_prob");
  if (feature_dim < class_sizes.size())
    throw GraphError("SBM feature_dim must be at least the number of classes");
  if (feature_noise_std < 0.0) throw GraphError("SBM noise std must be nonnegative");
}

SbmGraph generate_sbm(const SbmSpec& spec) {
  spec.validate();
  const std::size_t n = std::accumulate(spec.class_sizes.begin(), spec.class_sizes.end(), std::size_t{0});
  SbmGraph out;
  out.ground_truth.reserve(n);
  for (std::size_t c = 0; c < spec.class_sizes.size(); ++c)
    out.ground_truth.insert(out.ground_truth.end(), spec.class_sizes[c], static_cast<ClassId>(c));

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double p = out.ground_truth[i] == out.ground_truth[j] ? spec.intra_edge_prob : spec.inter_edge_prob;
      if (unit(rng) < p) edges.push_back(Edge{static_cast<NodeId>(i), static_cast<NodeId>(j)});
    }

  AttributedGraph& g = out.graph;
  g.node_count = n;
  g.edges = EdgeSet(std::move(edges));
  g.features = Matrix(n, spec.feature_dim);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < spec.feature_dim; ++j) g.features(i, j) = spec.feature_noise_std * noise(rng);
    g.features(i, static_cast<std::size_t>(out.ground_truth[i])) += spec.class_mean_separation;
  }
  g.labels.assign(out.ground_truth.begin(), out.ground_truth.end());
  g.label_mask.assign(n, false);
  return out;
}

}  // namespace oral
