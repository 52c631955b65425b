#pragma once

// Data-parallel numeric kernels used by the forward and backward passes.
//
// Every kernel exists twice: `oral::kernels::omp` is the production version
// (OpenMP, cache-friendly loop order) and `oral::kernels::serial` is a plain
// reference kept for tests and the benchmark. Both produce bitwise
// deterministic results for a fixed thread count; parallel loops only ever
// split over independent output rows, never over a reduction.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "oral/matrix.hpp"

namespace oral {

// Symmetric adjacency in CSR form with a self slot in every row, i.e. row i
// lists N(i) ∪ {i} in ascending order. `reverse[s]` is the slot of the
// mirrored entry, so a scatter over rows can be written as a gather.
struct Adjacency {
  std::size_t node_count = 0;
  std::vector<std::size_t> offsets;    // node_count + 1
  std::vector<std::uint32_t> targets;  // slot -> neighbour id
  std::vector<std::size_t> reverse;    // slot -> mirrored slot

  std::size_t slot_count() const { return targets.size(); }
  std::size_t degree_with_self(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
};

namespace kernels {

#define ORAL_KERNEL_DECLS                                                                     \
  /* C = A * B */                                                                             \
  Matrix matmul(const Matrix& a, const Matrix& b);                                            \
  /* C = A^T * B */                                                                           \
  Matrix matmul_at_b(const Matrix& a, const Matrix& b);                                       \
  /* C = A * B^T */                                                                           \
  Matrix matmul_a_bt(const Matrix& a, const Matrix& b);                                       \
  Matrix row_softmax(const Matrix& logits);                                                   \
  /* dX given softmax output Y and upstream dY */                                             \
  Matrix row_softmax_backward(const Matrix& y, const Matrix& dy);                             \
  /* cosine(p_i, p_k) per adjacency slot; zero-norm rows give 0 */                            \
  std::vector<double> edge_cosine(const Matrix& p, const Adjacency& adj);                     \
  Matrix edge_cosine_backward(const Matrix& p, const Adjacency& adj,                          \
                              std::span<const double> d_cos);                                 \
  /* softmax of slot values within each row */                                                \
  std::vector<double> segment_softmax(std::span<const double> logits, const Adjacency& adj);  \
  std::vector<double> segment_softmax_backward(std::span<const double> alpha,                 \
                                               std::span<const double> d_alpha,               \
                                               const Adjacency& adj);                         \
  /* out_i = sum_slots alpha_s * z_{target(s)} */                                             \
  Matrix aggregate(std::span<const double> alpha, const Matrix& z, const Adjacency& adj);     \
  /* dZ (gathered through reverse slots) */                                                   \
  Matrix aggregate_backward_z(std::span<const double> alpha, const Matrix& d_out,             \
                              const Adjacency& adj);                                          \
  /* d alpha_s = <d_out_i, z_target(s)> */                                                    \
  std::vector<double> aggregate_backward_alpha(const Matrix& z, const Matrix& d_out,          \
                                               const Adjacency& adj);

namespace serial {
ORAL_KERNEL_DECLS
}  // namespace serial

namespace omp {
ORAL_KERNEL_DECLS
}  // namespace omp

#undef ORAL_KERNEL_DECLS

// The production entry points.
using namespace omp;

}  // namespace kernels
}  // namespace oral
