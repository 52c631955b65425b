#include "doctest.h"

#include "oral/autodiff.hpp"
#include "oral/graph.hpp"
#include "support.hpp"

using namespace oral;
using ad::Tape;
using ad::Var;

namespace {

constexpr double kTol = 1e-5;

ad::AdjacencyPtr random_adjacency(std::size_t n, std::uint64_t seed) {
  return std::make_shared<const Adjacency>(build_adjacency(n, test::random_edges(n, 0.3, seed)));
}

}  // namespace

TEST_CASE("matmul gradients") {
  const Matrix a = test::random_matrix(4, 3, 1), b = test::random_matrix(3, 5, 2), c = test::random_matrix(6, 3, 3);
  CHECK(test::fd_check(a, [&](Tape& t, Var x) { return ad::matmul(t, x, t.constant(b)); }, 1) < kTol);
  CHECK(test::fd_check(b, [&](Tape& t, Var x) { return ad::matmul(t, t.constant(a), x); }, 2) < kTol);
  CHECK(test::fd_check(a, [&](Tape& t, Var x) { return ad::matmul_a_bt(t, x, t.constant(c)); }, 3) < kTol);
  CHECK(test::fd_check(c, [&](Tape& t, Var x) { return ad::matmul_a_bt(t, t.constant(a), x); }, 4) < kTol);
}

TEST_CASE("softmax, relu, add and group sum gradients") {
  const Matrix x = test::random_matrix(5, 4, 7);
  CHECK(test::fd_check(x, [](Tape& t, Var v) { return ad::row_softmax(t, v); }, 5) < kTol);
  CHECK(test::fd_check(x, [](Tape& t, Var v) { return ad::relu(t, v); }, 6) < kTol);
  CHECK(test::fd_check(x, [](Tape& t, Var v) { return ad::add(t, v, ad::row_softmax(t, v)); }, 7) < kTol);
  CHECK(test::fd_check(x, [](Tape& t, Var v) { return ad::group_sum(t, ad::row_softmax(t, v), {0, 1, 0, 2}, 3); }, 8) <
        kTol);
}

TEST_CASE("group sum forward") {
  Tape t;
  const Var r = t.constant(Matrix{{0.5, 0.3, 0.2}});
  const Matrix& p = t.value(ad::group_sum(t, r, {0, 1, 0}, 2));
  CHECK(p(0, 0) == doctest::Approx(0.7));
  CHECK(p(0, 1) == doctest::Approx(0.3));
}

TEST_CASE("attention chain gradients") {
  const std::size_t n = 9;
  const auto adj = random_adjacency(n, 11);
  const Matrix p = test::random_stochastic(n, 3, 12);
  const Matrix z = test::random_matrix(n, 4, 13);
  CHECK(test::fd_check(p, [&](Tape& t, Var v) { return ad::edge_cosine(t, v, adj); }, 9) < kTol);
  CHECK(test::fd_check(p, [&](Tape& t, Var v) { return ad::segment_softmax(t, ad::edge_cosine(t, v, adj), adj); }, 10) <
        kTol);
  CHECK(test::fd_check(p,
                       [&](Tape& t, Var v) {
                         const Var alpha = ad::segment_softmax(t, ad::edge_cosine(t, v, adj), adj);
                         return ad::aggregate(t, alpha, t.constant(z), adj);
                       },
                       11) < kTol);
  CHECK(test::fd_check(z,
                       [&](Tape& t, Var v) {
                         const Var alpha = ad::segment_softmax(t, ad::edge_cosine(t, t.constant(p), adj), adj);
                         return ad::aggregate(t, alpha, v, adj);
                       },
                       12) < kTol);
}

TEST_CASE("loss gradients") {
  const Matrix logits = test::random_matrix(6, 4, 21);
  const Matrix other = test::random_matrix(6, 4, 22);
  auto scalar_check = [](const Matrix& x0, const std::function<Var(Tape&, Var)>& f) {
    return test::fd_check(x0, f, 23);
  };
  CHECK(scalar_check(logits, [](Tape& t, Var v) {
          return ad::nll(t, ad::row_softmax(t, v), {{0, 1}, {2, 3}, {5, 0}, {5, 0}});
        }) < kTol);
  CHECK(scalar_check(logits, [](Tape& t, Var v) { return ad::balance_kl(t, ad::row_softmax(t, v)); }) < kTol);
  CHECK(scalar_check(logits, [&](Tape& t, Var v) {
          return ad::row_kl(t, ad::row_softmax(t, v), ad::row_softmax(t, t.constant(other)));
        }) < kTol);
  CHECK(scalar_check(logits, [&](Tape& t, Var v) {
          return ad::row_kl(t, ad::row_softmax(t, t.constant(other)), ad::row_softmax(t, v));
        }) < kTol);
}

TEST_CASE("loss values") {
  Tape t;
  CHECK(t.scalar(ad::nll(t, t.constant(Matrix{{0.5, 0.5}}), {{0, 0}})) == doctest::Approx(std::log(2.0)));
  CHECK(t.scalar(ad::balance_kl(t, t.constant(Matrix{{0.9, 0.1}}))) == doctest::Approx(0.5108).epsilon(1e-4));
  CHECK(t.scalar(ad::balance_kl(t, t.constant(Matrix{{0.5, 0.5}}))) == doctest::Approx(0.0));
  CHECK(t.scalar(ad::row_kl(t, t.constant(Matrix{{1, 0}}), t.constant(Matrix{{0.5, 0.5}}))) ==
        doctest::Approx(std::log(2.0)));
  const Matrix q = test::random_stochastic(5, 3, 1);
  CHECK(t.scalar(ad::row_kl(t, t.constant(q), t.constant(q))) == doctest::Approx(0.0));
}

TEST_CASE("shared subexpressions accumulate gradients") {
  // f(x) = sum(w .* (x + x)) has gradient 2w.
  const Matrix x = test::random_matrix(3, 3, 31);
  CHECK(test::fd_check(x, [](Tape& t, Var v) { return ad::add(t, v, v); }, 32) < kTol);
}

TEST_CASE("backward requires a scalar") {
  Tape t;
  const Var x = t.parameter(Matrix(2, 2, 1.0));
  CHECK_THROWS(t.backward(x));
}
