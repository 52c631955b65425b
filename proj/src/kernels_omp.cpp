#include <cmath>
#include <stdexcept>

#include "oral/kernels.hpp"

namespace oral::kernels::omp {

namespace {

using Index = std::ptrdiff_t;  // OpenMP loop counters must be signed

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> row_norms(const Matrix& p) {
  std::vector<double> n(p.rows());
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(p.rows()); ++i) {
    const double* r = p.row(i).data();
    n[i] = std::sqrt(dot(r, r, p.cols()));
  }
  return n;
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Matrix c(a.rows(), b.cols());
  const std::size_t inner = a.cols(), width = b.cols();
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(a.rows()); ++i) {
    double* ci = c.row(i).data();
    const double* ai = a.row(i).data();
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = ai[k];
      const double* bk = b.row(k).data();
      for (std::size_t j = 0; j < width; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("matmul_at_b: row mismatch");
  Matrix c(a.cols(), b.cols());
  const std::size_t n = a.rows(), width = b.cols();
  // Each thread owns output rows; the reduction over n runs in fixed order.
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(a.cols()); ++i) {
    double* ci = c.row(i).data();
    for (std::size_t k = 0; k < n; ++k) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      const double* bk = b.row(k).data();
      for (std::size_t j = 0; j < width; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_a_bt: column mismatch");
  Matrix c(a.rows(), b.rows());
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(a.rows()); ++i) {
    const double* ai = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) = dot(ai, b.row(j).data(), a.cols());
  }
  return c;
}

Matrix row_softmax(const Matrix& logits) {
  Matrix y(logits.rows(), logits.cols());
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(logits.rows()); ++i) {
    auto in = logits.row(i);
    auto out = y.row(i);
    double mx = -INFINITY;
    for (double v : in) mx = std::max(mx, v);
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) z += (out[j] = std::exp(in[j] - mx));
    const double inv = 1.0 / z;
    for (double& v : out) v *= inv;
  }
  return y;
}

Matrix row_softmax_backward(const Matrix& y, const Matrix& dy) {
  Matrix dx(y.rows(), y.cols());
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(y.rows()); ++i) {
    const double* yi = y.row(i).data();
    const double* dyi = dy.row(i).data();
    const double d = dot(yi, dyi, y.cols());
    double* dxi = dx.row(i).data();
    for (std::size_t j = 0; j < y.cols(); ++j) dxi[j] = yi[j] * (dyi[j] - d);
  }
  return dx;
}

std::vector<double> edge_cosine(const Matrix& p, const Adjacency& adj) {
  const auto norms = row_norms(p);
  std::vector<double> out(adj.slot_count());
#pragma omp parallel for schedule(dynamic, 64)
  for (Index i = 0; i < static_cast<Index>(adj.node_count); ++i) {
    const double* pi = p.row(i).data();
    for (std::size_t s = adj.offsets[i]; s < adj.offsets[i + 1]; ++s) {
      const std::size_t k = adj.targets[s];
      const double denom = norms[i] * norms[k];
      out[s] = denom == 0.0 ? 0.0 : dot(pi, p.row(k).data(), p.cols()) / denom;
    }
  }
  return out;
}

Matrix edge_cosine_backward(const Matrix& p, const Adjacency& adj, std::span<const double> d_cos) {
  // Gather form: row i collects the terms of every slot (i,k) and of the
  // mirrored slot (k,i), both differentiated with respect to p_i.
  const auto norms = row_norms(p);
  const auto cos = edge_cosine(p, adj);
  Matrix dp(p.rows(), p.cols());
  const std::size_t width = p.cols();
#pragma omp parallel for schedule(dynamic, 64)
  for (Index i = 0; i < static_cast<Index>(adj.node_count); ++i) {
    const double ni = norms[i];
    if (ni == 0.0) continue;
    const double* pi = p.row(i).data();
    double* dpi = dp.row(i).data();
    for (std::size_t s = adj.offsets[i]; s < adj.offsets[i + 1]; ++s) {
      const std::size_t k = adj.targets[s];
      const double nk = norms[k];
      if (nk == 0.0) continue;
      const double g = d_cos[s] + d_cos[adj.reverse[s]];
      if (g == 0.0) continue;
      const double* pk = p.row(k).data();
      const double a = g / (ni * nk), b = g * cos[s] / (ni * ni);
      for (std::size_t j = 0; j < width; ++j) dpi[j] += a * pk[j] - b * pi[j];
    }
  }
  return dp;
}

std::vector<double> segment_softmax(std::span<const double> logits, const Adjacency& adj) {
  std::vector<double> out(adj.slot_count());
#pragma omp parallel for schedule(dynamic, 64)
  for (Index i = 0; i < static_cast<Index>(adj.node_count); ++i) {
    const std::size_t b = adj.offsets[i], e = adj.offsets[i + 1];
    double mx = -INFINITY;
    for (std::size_t s = b; s < e; ++s) mx = std::max(mx, logits[s]);
    double z = 0.0;
    for (std::size_t s = b; s < e; ++s) z += (out[s] = std::exp(logits[s] - mx));
    for (std::size_t s = b; s < e; ++s) out[s] /= z;
  }
  return out;
}

std::vector<double> segment_softmax_backward(std::span<const double> alpha,
                                             std::span<const double> d_alpha,
                                             const Adjacency& adj) {
  std::vector<double> out(adj.slot_count());
#pragma omp parallel for schedule(dynamic, 64)
  for (Index i = 0; i < static_cast<Index>(adj.node_count); ++i) {
    const std::size_t b = adj.offsets[i], e = adj.offsets[i + 1];
    double d = 0.0;
    for (std::size_t s = b; s < e; ++s) d += alpha[s] * d_alpha[s];
    for (std::size_t s = b; s < e; ++s) out[s] = alpha[s] * (d_alpha[s] - d);
  }
  return out;
}

Matrix aggregate(std::span<const double> alpha, const Matrix& z, const Adjacency& adj) {
  Matrix out(adj.node_count, z.cols());
  const std::size_t width = z.cols();
#pragma omp parallel for schedule(dynamic, 64)
  for (Index i = 0; i < static_cast<Index>(adj.node_count); ++i) {
    double* oi = out.row(i).data();
    for (std::size_t s = adj.offsets[i]; s < adj.offsets[i + 1]; ++s) {
      const double a = alpha[s];
      const double* zk = z.row(adj.targets[s]).data();
      for (std::size_t j = 0; j < width; ++j) oi[j] += a * zk[j];
    }
  }
  return out;
}

Matrix aggregate_backward_z(std::span<const double> alpha, const Matrix& d_out,
                            const Adjacency& adj) {
  // dz_k = sum over slots (i,k) of alpha_(i,k) d_out_i, gathered via row k.
  Matrix dz(adj.node_count, d_out.cols());
  const std::size_t width = d_out.cols();
#pragma omp parallel for schedule(dynamic, 64)
  for (Index k = 0; k < static_cast<Index>(adj.node_count); ++k) {
    double* dzk = dz.row(k).data();
    for (std::size_t s = adj.offsets[k]; s < adj.offsets[k + 1]; ++s) {
      const double a = alpha[adj.reverse[s]];
      const double* di = d_out.row(adj.targets[s]).data();
      for (std::size_t j = 0; j < width; ++j) dzk[j] += a * di[j];
    }
  }
  return dz;
}

std::vector<double> aggregate_backward_alpha(const Matrix& z, const Matrix& d_out,
                                             const Adjacency& adj) {
  std::vector<double> out(adj.slot_count());
#pragma omp parallel for schedule(dynamic, 64)
  for (Index i = 0; i < static_cast<Index>(adj.node_count); ++i) {
    const double* di = d_out.row(i).data();
    for (std::size_t s = adj.offsets[i]; s < adj.offsets[i + 1]; ++s)
      out[s] = dot(di, z.row(adj.targets[s]).data(), z.cols());
  }
  return out;
}

}  // namespace oral::kernels::omp
