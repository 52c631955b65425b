#pragma once

// Minimal reverse-mode differentiation over dense matrices.
//
// A Tape records every op eagerly (values are computed on push) together
// with a closure that propagates the node's gradient to its inputs. Nodes
// only ever reference earlier nodes, so a single reverse sweep suffices.
// Edge-valued quantities (one value per adjacency slot) are stored as 1 x S
// matrices.

#include <cstddef>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "oral/kernels.hpp"
#include "oral/matrix.hpp"

namespace oral::ad {

class Tape;

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad)>;

  Var parameter(Matrix value) { return push(std::move(value), true, nullptr); }
  Var constant(Matrix value) { return push(std::move(value), false, nullptr); }
  Var push(Matrix value, bool requires_grad, Backward backward);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  const Matrix& grad(Var v) const { return nodes_.at(v.id).grad; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  double scalar(Var v) const;

  void accumulate(Var v, const Matrix& g);
  // Seeds d(out)/d(out) = 1 for a 1x1 node and sweeps all earlier nodes.
  void backward(Var out);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

Var matmul(Tape& t, Var a, Var b);
// a * b^T
Var matmul_a_bt(Tape& t, Var a, Var b);
Var row_softmax(Tape& t, Var logits);
Var relu(Tape& t, Var x);
Var add(Tape& t, Var a, Var b);

// out(i, group_of[j]) += in(i, j): sums columns into groups.
Var group_sum(Tape& t, Var in, std::vector<int> group_of, std::size_t n_groups);

using AdjacencyPtr = std::shared_ptr<const Adjacency>;

Var edge_cosine(Tape& t, Var p, AdjacencyPtr adj);
Var segment_softmax(Tape& t, Var logits, AdjacencyPtr adj);
Var aggregate(Tape& t, Var alpha, Var z, AdjacencyPtr adj);

// Scalar losses. Probabilities are clamped below at `floor` before the log;
// clamped entries receive no gradient.
inline constexpr double kProbFloor = 1e-12;

// sum over (row, col) pairs of -log p(row, col)
Var nll(Tape& t, Var p, std::vector<std::pair<std::size_t, std::size_t>> targets);
// KL(uniform || column mean of r)
Var balance_kl(Tape& t, Var r);
// sum_i KL(p_i || q_i)
Var row_kl(Tape& t, Var p, Var q);

}  // namespace oral::ad
