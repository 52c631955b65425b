#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "oral/graph.hpp"
#include "oral/matrix.hpp"

namespace oral {

// Trainable prototype vectors, one per row.
struct PrototypeSet {
  Matrix vectors;     // count x dim
  std::size_t topk = 3;

  std::size_t count() const { return vectors.rows(); }
  std::size_t dim() const { return vectors.cols(); }
};

// Rows of `pool` sampled without replacement plus N(0, jitter^2) noise. Falls
// back to unit Gaussian rows when the pool has fewer rows than `count`.
PrototypeSet init_prototypes(const Matrix& pool, std::size_t count, std::size_t topk,
                             double jitter, std::uint64_t seed);

// r(i, j) = softmax_j(h_i . c_j), max-subtracted. Rows sum to one.
Matrix representativeness(const Matrix& h, const PrototypeSet& prototypes);

// KL(uniform || mean_i r_i), mean clamped below at 1e-12.
double balance_regularizer(const Matrix& r);

// For each prototype, the ascending list of nodes that rank it among their k
// largest scores (ties go to the lower prototype index).
using Associations = std::vector<std::vector<NodeId>>;
Associations associate_topk(const Matrix& r, std::size_t k);

// Jaccard index of association sets; 0 when both sets are empty.
Matrix prototype_similarity(const Associations& assoc);

struct PrototypeGraph {
  Associations associations;
  Matrix similarity;
};

PrototypeGraph build_prototype_graph(const Matrix& r, std::size_t k);

}  // namespace oral
