#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "oral/autodiff.hpp"
#include "oral/graph.hpp"
#include "oral/matrix.hpp"

namespace oral::test {

inline Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (auto& v : m.data()) v = n(rng);
  return m;
}

// Softmax of Gaussian logits: strictly positive rows summing to one.
inline Matrix random_stochastic(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 2.0) {
  Matrix m = random_matrix(r, c, seed, scale);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -1e300, s = 0.0;
    for (double v : m.row(i)) mx = std::max(mx, v);
    for (double& v : m.row(i)) s += (v = std::exp(v - mx));
    for (double& v : m.row(i)) v /= s;
  }
  return m;
}

inline EdgeSet random_edges(std::size_t n, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(p);
  std::vector<Edge> e;
  for (NodeId i = 0; i < n; ++i)
    for (NodeId j = i + 1; j < n; ++j)
      if (b(rng)) e.push_back(Edge{i, j});
  return EdgeSet(std::move(e));
}

inline double row_sum(const Matrix& m, std::size_t i) {
  double s = 0.0;
  for (double v : m.row(i)) s += v;
  return s;
}

// Exhaustive maximum over injective partial maps rows -> cols.
inline double brute_force_assignment(const Matrix& w) {
  std::vector<bool> used(w.cols(), false);
  std::function<double(std::size_t)> go = [&](std::size_t r) -> double {
    if (r == w.rows()) return 0.0;
    double best = go(r + 1);
    for (std::size_t c = 0; c < w.cols(); ++c)
      if (!used[c]) {
        used[c] = true;
        best = std::max(best, w(r, c) + go(r + 1));
        used[c] = false;
      }
    return best;
  };
  return go(0);
}

// Scalar sum(w .* x) on the tape, used to reduce any op output to a loss.
inline ad::Var weighted_sum(ad::Tape& t, ad::Var x, Matrix w) {
  const Matrix& xv = t.value(x);
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += w.data()[i] * xv.data()[i];
  return t.push(Matrix(1, 1, s), t.requires_grad(x), [x, w = std::move(w)](ad::Tape& tp, const Matrix& g) {
    Matrix d = w;
    d *= g(0, 0);
    tp.accumulate(x, d);
  });
}

// Max relative error between the tape gradient of sum(w .* f(x)) and central
// differences, over every entry of x.
inline double fd_check(const Matrix& x0, const std::function<ad::Var(ad::Tape&, ad::Var)>& f, std::uint64_t seed,
                       double step = 1e-6) {
  Matrix w;
  {
    ad::Tape t;
    const ad::Var out = f(t, t.constant(x0));
    w = random_matrix(t.value(out).rows(), t.value(out).cols(), seed);
  }
  auto value = [&](const Matrix& x) {
    ad::Tape t;
    return t.scalar(weighted_sum(t, f(t, t.constant(x)), w));
  };
  ad::Tape t;
  const ad::Var x = t.parameter(x0);
  t.backward(weighted_sum(t, f(t, x), w));
  const Matrix& g = t.grad(x);
  double worst = 0.0;
  Matrix xp = x0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double orig = xp.data()[i];
    xp.data()[i] = orig + step;
    const double up = value(xp);
    xp.data()[i] = orig - step;
    const double down = value(xp);
    xp.data()[i] = orig;
    const double fd = (up - down) / (2.0 * step);
    const double an = g.empty() ? 0.0 : g.data()[i];
    worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
  }
  return worst;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("oral_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace oral::test
