#include "oral/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oral::ad {

Var Tape::push(Matrix value, bool requires_grad, Backward backward) {
  nodes_.push_back(Node{std::move(value), Matrix{}, requires_grad, std::move(backward)});
  return Var{nodes_.size() - 1};
}

double Tape::scalar(Var v) const {
  const auto& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) throw std::logic_error("Tape::scalar on non-scalar node");
  return m(0, 0);
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_.at(v.id);
  if (!n.requires_grad) return;
  if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  n.grad += g;
}

void Tape::backward(Var out) {
  const auto& v = value(out);
  if (v.rows() != 1 || v.cols() != 1) throw std::logic_error("backward from non-scalar node");
  for (auto& n : nodes_) n.grad = Matrix{};
  accumulate(out, Matrix(1, 1, 1.0));
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);  // only touches earlier nodes
  }
}

namespace {

bool any_grad(const Tape& t, Var a) { return t.requires_grad(a); }
bool any_grad(const Tape& t, Var a, Var b) { return t.requires_grad(a) || t.requires_grad(b); }

Matrix row_vector(std::vector<double> v) {
  Matrix m(1, v.size());
  m.data() = std::move(v);
  return m;
}

std::span<const double> flat(const Matrix& m) { return {m.data().data(), m.size()}; }

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  Matrix out = kernels::matmul(t.value(a), t.value(b));
  return t.push(std::move(out), any_grad(t, a, b), [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, kernels::matmul_a_bt(g, tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate(b, kernels::matmul_at_b(tp.value(a), g));
  });
}

Var matmul_a_bt(Tape& t, Var a, Var b) {
  Matrix out = kernels::matmul_a_bt(t.value(a), t.value(b));
  return t.push(std::move(out), any_grad(t, a, b), [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, kernels::matmul(g, tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate(b, kernels::matmul_at_b(g, tp.value(a)));
  });
}

Var row_softmax(Tape& t, Var logits) {
  Matrix out = kernels::row_softmax(t.value(logits));
  Var self{t.size()};
  return t.push(std::move(out), any_grad(t, logits), [logits, self](Tape& tp, const Matrix& g) {
    tp.accumulate(logits, kernels::row_softmax_backward(tp.value(self), g));
  });
}

Var relu(Tape& t, Var x) {
  Matrix out = t.value(x);
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return t.push(std::move(out), any_grad(t, x), [x](Tape& tp, const Matrix& g) {
    Matrix d = g;
    const auto& in = tp.value(x).data();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (!(in[i] > 0.0)) d.data()[i] = 0.0;
    tp.accumulate(x, d);
  });
}

Var add(Tape& t, Var a, Var b) {
  Matrix out = t.value(a) + t.value(b);
  return t.push(std::move(out), any_grad(t, a, b), [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var group_sum(Tape& t, Var in, std::vector<int> group_of, std::size_t n_groups) {
  const Matrix& x = t.value(in);
  if (group_of.size() != x.cols()) throw std::invalid_argument("group_sum: group map size mismatch");
  Matrix out(x.rows(), n_groups);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, static_cast<std::size_t>(group_of[j])) += x(i, j);
  return t.push(std::move(out), any_grad(t, in),
                [in, group_of = std::move(group_of)](Tape& tp, const Matrix& g) {
                  Matrix d(g.rows(), group_of.size());
                  for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < group_of.size(); ++j)
                      d(i, j) = g(i, static_cast<std::size_t>(group_of[j]));
                  tp.accumulate(in, d);
                });
}

Var edge_cosine(Tape& t, Var p, AdjacencyPtr adj) {
  Matrix out = row_vector(kernels::edge_cosine(t.value(p), *adj));
  return t.push(std::move(out), any_grad(t, p), [p, adj](Tape& tp, const Matrix& g) {
    tp.accumulate(p, kernels::edge_cosine_backward(tp.value(p), *adj, flat(g)));
  });
}

Var segment_softmax(Tape& t, Var logits, AdjacencyPtr adj) {
  Matrix out = row_vector(kernels::segment_softmax(flat(t.value(logits)), *adj));
  Var self{t.size()};
  return t.push(std::move(out), any_grad(t, logits), [logits, self, adj](Tape& tp, const Matrix& g) {
    tp.accumulate(logits, row_vector(kernels::segment_softmax_backward(flat(tp.value(self)), flat(g), *adj)));
  });
}

Var aggregate(Tape& t, Var alpha, Var z, AdjacencyPtr adj) {
  Matrix out = kernels::aggregate(flat(t.value(alpha)), t.value(z), *adj);
  return t.push(std::move(out), any_grad(t, alpha, z), [alpha, z, adj](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(z)) tp.accumulate(z, kernels::aggregate_backward_z(flat(tp.value(alpha)), g, *adj));
    if (tp.requires_grad(alpha))
      tp.accumulate(alpha, row_vector(kernels::aggregate_backward_alpha(tp.value(z), g, *adj)));
  });
}

Var nll(Tape& t, Var p, std::vector<std::pair<std::size_t, std::size_t>> targets) {
  const Matrix& pv = t.value(p);
  double loss = 0.0;
  for (auto [i, j] : targets) loss -= std::log(std::clamp(pv(i, j), kProbFloor, 1.0));
  return t.push(Matrix(1, 1, loss), any_grad(t, p),
                [p, targets = std::move(targets)](Tape& tp, const Matrix& g) {
                  const Matrix& pv = tp.value(p);
                  Matrix d(pv.rows(), pv.cols());
                  for (auto [i, j] : targets)
                    if (pv(i, j) > kProbFloor) d(i, j) -= g(0, 0) / pv(i, j);
                  tp.accumulate(p, d);
                });
}

namespace {

std::vector<double> column_means(const Matrix& r) {
  std::vector<double> m(r.cols(), 0.0);
  for (std::size_t i = 0; i < r.rows(); ++i)
    for (std::size_t j = 0; j < r.cols(); ++j) m[j] += r(i, j);
  for (auto& v : m) v /= static_cast<double>(r.rows());
  return m;
}

}  // namespace

Var balance_kl(Tape& t, Var r) {
  const Matrix& rv = t.value(r);
  if (rv.rows() == 0 || rv.cols() == 0) throw std::invalid_argument("balance_kl: empty input");
  const auto m = column_means(rv);
  const double u = 1.0 / static_cast<double>(rv.cols());
  double loss = 0.0;
  for (double mj : m) loss += u * (std::log(u) - std::log(std::max(mj, kProbFloor)));
  return t.push(Matrix(1, 1, loss), any_grad(t, r), [r, m, u](Tape& tp, const Matrix& g) {
    const Matrix& rv = tp.value(r);
    const double n = static_cast<double>(rv.rows());
    Matrix d(rv.rows(), rv.cols());
    for (std::size_t j = 0; j < rv.cols(); ++j) {
      if (!(m[j] > kProbFloor)) continue;
      const double dj = -g(0, 0) * u / (n * m[j]);
      for (std::size_t i = 0; i < rv.rows(); ++i) d(i, j) = dj;
    }
    tp.accumulate(r, d);
  });
}

Var row_kl(Tape& t, Var p, Var q) {
  const Matrix& pv = t.value(p);
  const Matrix& qv = t.value(q);
  require_shape(qv, pv.rows(), pv.cols(), "row_kl");
  double loss = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double a = pv.data()[i];
    if (a > 0.0) loss += a * (std::log(a) - std::log(std::max(qv.data()[i], kProbFloor)));
  }
  return t.push(Matrix(1, 1, loss), any_grad(t, p, q), [p, q](Tape& tp, const Matrix& g) {
    const Matrix& pv = tp.value(p);
    const Matrix& qv = tp.value(q);
    const double s = g(0, 0);
    if (tp.requires_grad(p)) {
      Matrix d(pv.rows(), pv.cols());
      for (std::size_t i = 0; i < pv.size(); ++i) {
        const double a = std::max(pv.data()[i], kProbFloor);
        d.data()[i] = s * (std::log(a) + 1.0 - std::log(std::max(qv.data()[i], kProbFloor)));
      }
      tp.accumulate(p, d);
    }
    if (tp.requires_grad(q)) {
      Matrix d(qv.rows(), qv.cols());
      for (std::size_t i = 0; i < qv.size(); ++i)
        if (qv.data()[i] > kProbFloor) d.data()[i] = -s * pv.data()[i] / qv.data()[i];
      tp.accumulate(q, d);
    }
  });
}

}  // namespace oral::ad
