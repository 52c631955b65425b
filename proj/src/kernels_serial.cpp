// Reference kernels: the textbook loop for every operation, no blocking, no
// threads. Kept for tests and for the benchmark baseline.

#include <cmath>
#include <stdexcept>

#include "oral/kernels.hpp"

namespace oral::kernels::serial {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("matmul_at_b: row mismatch");
  Matrix c(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.rows(); ++k) s += a(k, i) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_a_bt: column mismatch");
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      c(i, j) = s;
    }
  return c;
}

Matrix row_softmax(const Matrix& logits) {
  Matrix y(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < logits.cols(); ++j) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) z += std::exp(logits(i, j) - mx);
    for (std::size_t j = 0; j < logits.cols(); ++j) y(i, j) = std::exp(logits(i, j) - mx) / z;
  }
  return y;
}

Matrix row_softmax_backward(const Matrix& y, const Matrix& dy) {
  Matrix dx(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < y.cols(); ++j) dot += y(i, j) * dy(i, j);
    for (std::size_t j = 0; j < y.cols(); ++j) dx(i, j) = y(i, j) * (dy(i, j) - dot);
  }
  return dx;
}

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

std::vector<double> edge_cosine(const Matrix& p, const Adjacency& adj) {
  std::vector<double> out(adj.slot_count());
  for (std::size_t i = 0; i < adj.node_count; ++i)
    for (std::size_t s = adj.offsets[i]; s < adj.offsets[i + 1]; ++s) {
      const std::size_t k = adj.targets[s];
      const double ni = norm(p.row(i)), nk = norm(p.row(k));
      out[s] = (ni == 0.0 || nk == 0.0) ? 0.0 : dot(p.row(i), p.row(k)) / (ni * nk);
    }
  return out;
}

Matrix edge_cosine_backward(const Matrix& p, const Adjacency& adj, std::span<const double> d_cos) {
  // d cos(a,b) / da = b/(|a||b|) - cos(a,b) a/|a|^2, applied to both endpoints.
  Matrix dp(p.rows(), p.cols());
  for (std::size_t i = 0; i < adj.node_count; ++i)
    for (std::size_t s = adj.offsets[i]; s < adj.offsets[i + 1]; ++s) {
      const std::size_t k = adj.targets[s];
      const double ni = norm(p.row(i)), nk = norm(p.row(k));
      if (ni == 0.0 || nk == 0.0) continue;
      const double c = dot(p.row(i), p.row(k)) / (ni * nk);
      for (std::size_t j = 0; j < p.cols(); ++j) {
        dp(i, j) += d_cos[s] * (p(k, j) / (ni * nk) - c * p(i, j) / (ni * ni));
        dp(k, j) += d_cos[s] * (p(i, j) / (ni * nk) - c * p(k, j) / (nk * nk));
      }
    }
  return dp;
}

std::vector<double> segment_softmax(std::span<const double> logits, const Adjacency& adj) {
  std::vector<double> out(adj.slot_count());
  for (std::size_t i = 0; i < adj.node_count; ++i) {
    double mx = -INFINITY;
    for (std::size_t s = adj.offsets[i]; s < adj.offsets[i + 1]; ++s) mx = std::max(mx, logits[s]);
    double z = 0.0;
    for (std::size_t s = adj.offsets[i]; s < adj.offsets[i + 1]; ++s) z += std::exp(logits[s] - mx);
    for (std::size_t s = adj.offsets[i]; s < adj.offsets[i + 1]; ++s)
      out[s] = std::exp(logits[s] - mx) / z;
  }
  return out;
}

std::vector<double> segment_softmax_backward(std::span<const double> alpha,
                                             std::span<const double> d_alpha,
                                             const Adjacency& adj) {
  std::vector<double> out(adj.slot_count());
  for (std::size_t i = 0; i < adj.node_count; ++i) {
    double d = 0.0;
    for (std::size_t s = adj.offsets[i]; s < adj.offsets[i + 1]; ++s) d += alpha[s] * d_alpha[s];
    for (std::size_t s = adj.offsets[i]; s < adj.offsets[i + 1]; ++s)
      out[s] = alpha[s] * (d_alpha[s] - d);
  }
  return out;
}

Matrix aggregate(std::span<const double> alpha, const Matrix& z, const Adjacency& adj) {
  Matrix out(adj.node_count, z.cols());
  for (std::size_t i = 0; i < adj.node_count; ++i)
    for (std::size_t s = adj.offsets[i]; s < adj.offsets[i + 1]; ++s)
      for (std::size_t j = 0; j < z.cols(); ++j) out(i, j) += alpha[s] * z(adj.targets[s], j);
  return out;
}

Matrix aggregate_backward_z(std::span<const double> alpha, const Matrix& d_out,
                            const Adjacency& adj) {
  Matrix dz(adj.node_count, d_out.cols());
  for (std::size_t i = 0; i < adj.node_count; ++i)
    for (std::size_t s = adj.offsets[i]; s < adj.offsets[i + 1]; ++s)
      for (std::size_t j = 0; j < d_out.cols(); ++j)
        dz(adj.targets[s], j) += alpha[s] * d_out(i, j);
  return dz;
}

std::vector<double> aggregate_backward_alpha(const Matrix& z, const Matrix& d_out,
                                             const Adjacency& adj) {
  std::vector<double> out(adj.slot_count());
  for (std::size_t i = 0; i < adj.node_count; ++i)
    for (std::size_t s = adj.offsets[i]; s < adj.offsets[i + 1]; ++s)
      out[s] = dot(d_out.row(i), z.row(adj.targets[s]));
  return out;
}

}  // namespace oral::kernels::serial
