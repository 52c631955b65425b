#include "oral/prototype.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "oral/kernels.hpp"

namespace oral {

PrototypeSet init_prototypes(const Matrix& pool, std::size_t count, std::size_t topk, double jitter,
                             std::uint64_t seed) {
  if (count < 2) throw std::invalid_argument("need at least two prototypes");
  if (topk < 1 || topk > count) throw std::invalid_argument("topk must lie in [1, prototype count]");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  PrototypeSet p;
  p.topk = topk;
  p.vectors = Matrix(count, pool.cols());
  if (pool.rows() >= count) {
    std::vector<std::size_t> idx(pool.rows());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t j = 0; j < count; ++j)
      for (std::size_t c = 0; c < pool.cols(); ++c) p.vectors(j, c) = pool(idx[j], c) + jitter * gauss(rng);
  } else {
    for (auto& v : p.vectors.data()) v = gauss(rng);
  }
  return p;
}

Matrix representativeness(const Matrix& h, const PrototypeSet& prototypes) {
  if (h.cols() != prototypes.dim())
    throw std::invalid_argument("representativeness: representation dim " + std::to_string(h.cols()) +
                                " != prototype dim " + std::to_string(prototypes.dim()));
  if (!h.all_finite() || !prototypes.vectors.all_finite())
    throw std::invalid_argument("representativeness: non-finite input");
  return kernels::row_softmax(kernels::matmul_a_bt(h, prototypes.vectors));
}

double balance_regularizer(const Matrix& r) {
  if (r.rows() == 0 || r.cols() == 0) throw std::invalid_argument("balance_regularizer: empty input");
  const double u = 1.0 / static_cast<double>(r.cols());
  double loss = 0.0;
  for (std::size_t j = 0; j < r.cols(); ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < r.rows(); ++i) m += r(i, j);
    m /= static_cast<double>(r.rows());
    loss += u * (std::log(u) - std::log(std::max(m, 1e-12)));
  }
  return std::max(loss, 0.0);
}

Associations associate_topk(const Matrix& r, std::size_t k) {
  if (k < 1 || k > r.cols()) throw std::invalid_argument("associate_topk: k out of range");
  Associations out(r.cols());
  std::vector<std::size_t> order(r.cols());
  for (std::size_t i = 0; i < r.rows(); ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        return r(i, a) > r(i, b) || (r(i, a) == r(i, b) && a < b);
                      });
    for (std::size_t t = 0; t < k; ++t) out[order[t]].push_back(static_cast<NodeId>(i));
  }
  return out;
}

Matrix prototype_similarity(const Associations& assoc) {
  const std::size_t n = assoc.size();
  Matrix s(n, n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a; b < n; ++b) {
      const auto& x = assoc[a];
      const auto& y = assoc[b];
      std::size_t inter = 0;
      for (std::size_t i = 0, j = 0; i < x.size() && j < y.size();) {
        if (x[i] < y[j]) ++i;
        else if (y[j] < x[i]) ++j;
        else { ++inter; ++i; ++j; }
      }
      const std::size_t uni = x.size() + y.size() - inter;
      s(a, b) = s(b, a) = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
  return s;
}

PrototypeGraph build_prototype_graph(const Matrix& r, std::size_t k) {
  PrototypeGraph g;
  g.associations = associate_topk(r, k);
  g.similarity = prototype_similarity(g.associations);
  return g;
}

}  // namespace oral
