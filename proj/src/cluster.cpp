#include "oral/cluster.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace oral {

// ------------------------------------------------------------- partitions

std::vector<std::vector<std::size_t>> GroupPartition::groups() const {
  std::vector<std::vector<std::size_t>> out(n_groups);
  for (std::size_t j = 0; j < group_of.size(); ++j) out[static_cast<std::size_t>(group_of[j])].push_back(j);
  return out;
}

void GroupPartition::validate() const {
  std::vector<std::size_t> sizes(n_groups, 0);
  for (int g : group_of) {
    if (g < 0 || static_cast<std::size_t>(g) >= n_groups) throw std::logic_error("partition: group id out of range");
    ++sizes[static_cast<std::size_t>(g)];
  }
  if (std::find(sizes.begin(), sizes.end(), 0) != sizes.end()) throw std::logic_error("partition: empty group");
}

GroupPartition canonical_partition(std::vector<int> group_of) {
  std::vector<int> remap;
  int next = 0;
  for (int& g : group_of) {
    if (g < 0) throw std::logic_error("canonical_partition: negative group");
    if (static_cast<std::size_t>(g) >= remap.size()) remap.resize(static_cast<std::size_t>(g) + 1, -1);
    if (remap[static_cast<std::size_t>(g)] < 0) remap[static_cast<std::size_t>(g)] = next++;
    g = remap[static_cast<std::size_t>(g)];
  }
  return GroupPartition{std::move(group_of), static_cast<std::size_t>(next)};
}

// ----------------------------------------------------------------- kmeans

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

KMeansResult kmeans_once(const Matrix& x, std::size_t k, std::mt19937_64& rng, std::size_t max_iterations) {
  const std::size_t n = x.rows();
  KMeansResult res;
  res.centroids = Matrix(k, x.cols());
  res.labels.assign(n, 0);

  // k-means++ seeding
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t c0 = pick(rng);
  std::copy(x.row(c0).begin(), x.row(c0).end(), res.centroids.row(0).begin());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(x.row(i), res.centroids.row(c - 1)));
      total += d2[i];
    }
    std::size_t chosen = pick(rng);
    if (total > 0.0) {
      double target = unit(rng) * total;
      for (std::size_t i = 0; i < n; ++i) {
        target -= d2[i];
        if (target <= 0.0) {
          chosen = i;
          break;
        }
      }
    }
    std::copy(x.row(chosen).begin(), x.row(chosen).end(), res.centroids.row(c).begin());
  }

  std::vector<std::size_t> counts(k);
  for (std::size_t iter = 0; iter < max_iterations; ++iter) {
    bool changed = iter == 0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = sq_dist(x.row(i), res.centroids.row(c));
        if (d < bd) {
          bd = d;
          best = static_cast<int>(c);
        }
      }
      if (res.labels[i] != best) changed = true;
      res.labels[i] = best;
    }
    // Repair empty clusters with the point farthest from its centroid.
    for (bool repaired = true; repaired;) {
      repaired = false;
      std::fill(counts.begin(), counts.end(), 0);
      for (int l : res.labels) ++counts[static_cast<std::size_t>(l)];
      for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] != 0) continue;
        std::size_t far = 0;
        double fd = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (counts[static_cast<std::size_t>(res.labels[i])] <= 1) continue;
          const double d = sq_dist(x.row(i), res.centroids.row(static_cast<std::size_t>(res.labels[i])));
          if (d > fd) {
            fd = d;
            far = i;
          }
        }
        if (fd < 0.0) continue;  // fewer points than clusters
        res.labels[far] = static_cast<int>(c);
        std::copy(x.row(far).begin(), x.row(far).end(), res.centroids.row(c).begin());
        repaired = changed = true;
        break;
      }
    }
    if (!changed) break;
    res.centroids.fill(0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(res.labels[i]);
      ++counts[c];
      for (std::size_t j = 0; j < x.cols(); ++j) res.centroids(c, j) += x(i, j);
    }
    for (std::size_t c = 0; c < k; ++c)
      if (counts[c])
        for (std::size_t j = 0; j < x.cols(); ++j) res.centroids(c, j) /= static_cast<double>(counts[c]);
  }
  res.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    res.inertia += sq_dist(x.row(i), res.centroids.row(static_cast<std::size_t>(res.labels[i])));
  return res;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, std::size_t k, std::size_t restarts, std::uint64_t seed,
                    std::size_t max_iterations) {
  if (k == 0 || k > points.rows()) throw std::invalid_argument("kmeans: k must lie in [1, n_points]");
  std::mt19937_64 rng(seed);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
    KMeansResult res = kmeans_once(points, k, rng, max_iterations);
    if (res.inertia < best.inertia) best = std::move(res);
  }
  return best;
}

// --------------------------------------------------------------- spectral

SpectralEmbedding spectral_embedding(const Matrix& s) {
  if (s.rows() != s.cols()) throw std::invalid_argument("spectral_embedding: similarity must be square");
  const std::size_t n = s.rows();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(s(i, j) - s(j, i)) > 1e-12) throw std::invalid_argument("spectral_embedding: similarity not symmetric");

  SpectralEmbedding emb;
  std::vector<double> degree(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) degree[i] += s(i, j);
    if (degree[i] > 0.0) emb.active.push_back(i);
  }
  const std::size_t a = emb.active.size();
  if (a == 0) return emb;
  Eigen::MatrixXd lap(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a));
  for (std::size_t x = 0; x < a; ++x)
    for (std::size_t y = 0; y < a; ++y) {
      const std::size_t i = emb.active[x], j = emb.active[y];
      const double w = i == j ? 0.0 : s(i, j) / std::sqrt(degree[i] * degree[j]);
      lap(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)) = (i == j ? 1.0 : 0.0) - w;
    }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap);
  if (solver.info() != Eigen::Success) throw std::runtime_error("spectral_embedding: eigensolver failed");
  emb.eigenvalues.assign(solver.eigenvalues().data(), solver.eigenvalues().data() + a);
  emb.eigenvectors = Matrix(a, a);
  for (std::size_t x = 0; x < a; ++x)
    for (std::size_t y = 0; y < a; ++y)
      emb.eigenvectors(x, y) = solver.eigenvectors()(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y));
  return emb;
}

GroupPartition cluster_prototypes(const SpectralEmbedding& emb, std::size_t n_prototypes, std::size_t n_clusters,
                                  std::uint64_t seed, const ClusterOptions& options) {
  if (n_clusters < 1 || n_clusters > n_prototypes)
    throw std::invalid_argument("cluster_prototypes: n_clusters must lie in [1, prototype count]");
  std::vector<int> group_of(n_prototypes, -1);
  const std::size_t active = emb.active.size();
  const std::size_t spectral_k = std::min(n_clusters, active);

  if (spectral_k > 0) {
    Matrix u(active, spectral_k);
    for (std::size_t x = 0; x < active; ++x) {
      double norm = 0.0;
      for (std::size_t c = 0; c < spectral_k; ++c) norm += emb.eigenvectors(x, c) * emb.eigenvectors(x, c);
      norm = std::sqrt(norm);
      for (std::size_t c = 0; c < spectral_k; ++c) u(x, c) = norm > 0.0 ? emb.eigenvectors(x, c) / norm : 0.0;
    }
    const auto km = kmeans(u, spectral_k, options.kmeans_restarts, seed);
    for (std::size_t x = 0; x < active; ++x) group_of[emb.active[x]] = km.labels[x];
  }

  // Isolated prototypes: open the groups still missing, then attach the rest.
  int next_group = static_cast<int>(spectral_k);
  std::vector<std::size_t> isolated;
  for (std::size_t j = 0; j < n_prototypes; ++j)
    if (group_of[j] < 0) isolated.push_back(j);
  std::size_t opened = 0;
  for (std::size_t j : isolated) {
    if (static_cast<std::size_t>(next_group) < n_clusters) {
      group_of[j] = next_group++;
      ++opened;
    }
  }
  for (std::size_t t = opened; t < isolated.size(); ++t) {
    const std::size_t j = isolated[t];
    int best_group = 0;
    if (options.attach_affinity) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n_prototypes; ++i) {
        if (i == j || group_of[i] < 0) continue;
        const double a = (*options.attach_affinity)(j, i);
        if (a > best) {
          best = a;
          best_group = group_of[i];
        }
      }
    }
    group_of[j] = best_group;
  }
  auto part = canonical_partition(std::move(group_of));
  part.validate();
  return part;
}

GroupPartition cluster_prototypes(const PrototypeGraph& pg, std::size_t n_clusters, std::uint64_t seed,
                                  const ClusterOptions& options) {
  const std::size_t n = pg.similarity.rows();
  if (n_clusters < 2 || n_clusters > n)
    throw std::invalid_argument("cluster_prototypes: n_clusters must lie in [2, prototype count]");
  return cluster_prototypes(spectral_embedding(pg.similarity), n, n_clusters, seed, options);
}

// ------------------------------------------------------ assignment/matching

Matrix node_group_assignment(const Matrix& r, const GroupPartition& part) {
  if (part.group_of.size() != r.cols()) throw std::invalid_argument("node_group_assignment: partition size mismatch");
  Matrix p(r.rows(), part.n_groups);
  for (std::size_t i = 0; i < r.rows(); ++i)
    for (std::size_t j = 0; j < r.cols(); ++j) p(i, static_cast<std::size_t>(part.group_of[j])) += r(i, j);
  return p;
}

std::vector<int> row_argmax(const Matrix& m) {
  std::vector<int> out(m.rows(), 0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m.cols(); ++j)
      if (m(i, j) > m(i, best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

std::optional<int> ClassMatching::group_of_class(ClassId c) const {
  for (std::size_t g = 0; g < group_to_class.size(); ++g)
    if (group_to_class[g] == c) return static_cast<int>(g);
  return std::nullopt;
}

ClassMatching match_and_score(const Matrix& p, std::span<const LabeledNode> labeled) {
  if (labeled.empty()) throw std::invalid_argument("match_and_score: empty labeled set");
  const auto argmax = row_argmax(p);
  std::vector<int> pred;
  std::vector<ClassId> truth;
  pred.reserve(labeled.size());
  truth.reserve(labeled.size());
  for (const auto& l : labeled) {
    if (l.node >= p.rows()) throw std::invalid_argument("match_and_score: node out of range");
    pred.push_back(argmax[l.node]);
    truth.push_back(l.label);
  }
  const auto m = best_cluster_match(pred, truth, p.cols());
  ClassMatching out;
  out.group_to_class = m.cluster_to_class;
  out.accuracy = m.accuracy();
  for (std::size_t g = 0; g < p.cols(); ++g)
    if (!out.group_to_class[g]) out.novel_group_ids.push_back(static_cast<int>(g));
  return out;
}

// ------------------------------------------------------------- granularity

GranularityResult search_granularity(const PrototypeGraph& pg, const Matrix& r,
                                     std::span<const LabeledNode> labeled,
                                     std::pair<std::size_t, std::size_t> range,
                                     std::optional<std::size_t> fixed_n, std::uint64_t seed,
                                     const GranularityOptions& options) {
  const std::size_t n_proto = pg.similarity.rows();
  if (r.cols() != n_proto) throw std::invalid_argument("search_granularity: r and prototype graph disagree");
  auto [lo, hi] = range;
  if (lo > hi || hi < 1) throw std::invalid_argument("search_granularity: empty range");
  if (hi > n_proto) throw std::invalid_argument("search_granularity: range exceeds prototype count");
  if (fixed_n && (*fixed_n < lo || *fixed_n > hi))
    throw std::invalid_argument("search_granularity: fixed_n outside range");

  std::vector<std::size_t> ns;
  if (fixed_n) ns.push_back(*fixed_n);
  else
    for (std::size_t n = std::max<std::size_t>(lo, 1); n <= hi; ++n) ns.push_back(n);

  const SpectralEmbedding emb = spectral_embedding(pg.similarity);
  std::vector<GranularityCandidate> cands(ns.size());
  std::vector<GroupPartition> parts(ns.size());
  std::vector<ClassMatching> matches(ns.size());

#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(ns.size()); ++c) {
    const std::size_t n = ns[static_cast<std::size_t>(c)];
    parts[c] = cluster_prototypes(emb, n_proto, n, seed, options.cluster);
    matches[c] = match_and_score(node_group_assignment(r, parts[c]), labeled);
    cands[c].n = n;
    cands[c].accuracy = matches[c].accuracy;
    const auto& ev = emb.eigenvalues;
    cands[c].eigengap = (n >= 1 && n < ev.size()) ? ev[n] - ev[n - 1] : 0.0;
  }

  double best_acc = -1.0;
  for (const auto& c : cands) best_acc = std::max(best_acc, c.accuracy);
  std::size_t pick = cands.size();
  for (std::size_t c = 0; c < cands.size(); ++c) {
    if (cands[c].accuracy < best_acc - options.accuracy_tolerance) continue;
    if (pick == cands.size()) {
      pick = c;
      continue;
    }
    if (options.tie_break == GranularityTieBreak::kLargestEigengap && cands[c].eigengap > cands[pick].eigengap)
      pick = c;
  }
  GranularityResult out;
  out.best_n = cands[pick].n;
  out.partition = std::move(parts[pick]);
  out.matching = std::move(matches[pick]);
  out.candidates = std::move(cands);
  return out;
}

}  // namespace oral
