#include "doctest.h"

#include <algorithm>
#include <numeric>
#include <fstream>
#include <set>

#include "oral/cluster.hpp"
#include "oral/pseudo_label.hpp"
#include "support.hpp"

using namespace oral;

namespace {

Matrix permute_columns(const Matrix& m, const std::vector<std::size_t>& to) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, to[j]) = m(i, j);
  return out;
}

// Agreement of the best column permutation of `layer` against `ref`.
std::size_t brute_force_alignment(const Matrix& ref, const Matrix& layer) {
  const auto a = row_argmax(ref), b = row_argmax(layer);
  std::vector<std::size_t> perm(ref.cols());
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < a.size(); ++i) hits += perm[static_cast<std::size_t>(b[i])] == static_cast<std::size_t>(a[i]);
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST_CASE("padding") {
  const std::vector<Matrix> same{test::random_stochastic(4, 3, 1), test::random_stochastic(4, 3, 2)};
  CHECK(pad_predictions(same)[1] == same[1]);
  const std::vector<Matrix> mixed{test::random_stochastic(4, 3, 1), test::random_stochastic(4, 5, 2)};
  const auto padded = pad_predictions(mixed);
  CHECK(padded[0].cols() == 5);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(padded[0](i, 3) == 0.0);
    CHECK(test::row_sum(padded[0], i) == doctest::Approx(1.0));
  }
  CHECK_THROWS(pad_predictions(std::vector<Matrix>{Matrix(3, 2), Matrix(4, 2)}));
}

TEST_CASE("alignment recovers an applied permutation") {
  const Matrix ref = test::random_stochastic(30, 4, 3, 4.0);
  const std::vector<std::size_t> to{2, 0, 3, 1};
  const auto out = align_layers(std::vector<Matrix>{ref, permute_columns(ref, to)});
  CHECK(out.aligned[1] == ref);
  for (std::size_t g = 0; g < 4; ++g)
    CHECK(out.alignment[1][to[g]] == static_cast<int>(g));
  const auto one = align_layers(std::vector<Matrix>{ref});
  CHECK(one.alignment[0] == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("zero padded columns do not disturb real matches") {
  Matrix a{{1, 0, 0}, {0, 1, 0}, {1, 0, 0}};
  Matrix b{{0, 1, 0}, {1, 0, 0}, {0, 1, 0}};
  const auto out = align_layers(std::vector<Matrix>{a, b});
  CHECK(out.aligned[1] == a);
}

TEST_CASE("alignment equals exhaustive search") {
  for (std::uint64_t s = 0; s < 120; ++s) {
    const std::size_t k = 2 + s % 5;
    const Matrix ref = test::random_stochastic(25, k, 100 + s, 3.0);
    const Matrix layer = test::random_stochastic(25, k, 500 + s, 3.0);
    const auto out = align_layers(std::vector<Matrix>{ref, layer});
    const auto a = row_argmax(ref), b = row_argmax(out.aligned[1]);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < a.size(); ++i) hits += a[i] == b[i];
    CHECK(hits == brute_force_alignment(ref, layer));
  }
}

TEST_CASE("ensemble averaging") {
  const Matrix p = test::random_stochastic(5, 3, 4);
  CHECK(max_abs_diff(ensemble(std::vector<Matrix>{p, p, p}), p) < 1e-15);
  const Matrix e = ensemble(std::vector<Matrix>{Matrix{{1, 0}}, Matrix{{0, 1}}});
  CHECK(e(0, 0) == 0.5);
  CHECK(e(0, 1) == 0.5);
  CHECK_THROWS(ensemble(std::vector<Matrix>{}));
}

TEST_CASE("suppression") {
  // Popularities [0.5, 0.45, 0.05] on four nodes.
  const Matrix p{{0.6, 0.4, 0.0}, {0.4, 0.6, 0.0}, {0.5, 0.3, 0.2}, {0.5, 0.5, 0.0}};
  const Suppressed s = suppress(p, 0.1);
  CHECK(s.mask == std::vector<bool>{true, true, false});
  CHECK(s.p_hat(2, 2) == 0.0);
  CHECK(s.p_hat(2, 0) == 0.5);
  CHECK(suppress(p, 0.0).mask == std::vector<bool>{true, true, true});
  const Matrix padded{{0.5, 0.5, 0.0}};
  CHECK(suppress(padded, 0.0).mask[2] == false);
  CHECK_THROWS(suppress(p, 0.9));
}

TEST_CASE("confident selection") {
  const Matrix p{{0.9, 0.1}, {0.6, 0.4}, {0.5, 0.4}, {0.2, 0.8}};
  const std::vector<NodeId> unlabeled{0, 1, 2, 3};
  const ConfidentSet c = select_confident(p, unlabeled, 0.34);
  CHECK(c.per_group[0] == std::vector<NodeId>{0, 1});
  CHECK(c.per_group[1] == std::vector<NodeId>{3});
  CHECK(select_confident(p, unlabeled, 1.0).per_group[0] == std::vector<NodeId>{0, 1, 2});
  CHECK(select_confident(p, std::vector<NodeId>{1, 2}, 0.3).per_group[0] == std::vector<NodeId>{1});
  CHECK_THROWS(select_confident(p, unlabeled, 0.0));
}

TEST_CASE("single layer with zero threshold keeps the layer argmax") {
  const Matrix p = test::random_stochastic(40, 5, 6);
  const EnsemblePrediction e = ensemble_predict(std::vector<Matrix>{p}, 0.0);
  CHECK(e.labels() == row_argmax(p));
  CHECK(e.group_count() == 5);
}

TEST_CASE("pipeline is invariant to permuting one layer") {
  const Matrix a = test::random_stochastic(30, 4, 7, 4.0), b = test::random_stochastic(30, 4, 8, 4.0);
  const auto base = ensemble_predict(std::vector<Matrix>{a, b}, 0.01);
  const auto perm = ensemble_predict(std::vector<Matrix>{a, permute_columns(b, {3, 2, 1, 0})}, 0.01);
  CHECK(max_abs_diff(base.suppressed.p_hat, perm.suppressed.p_hat) < 1e-15);
}

TEST_CASE("pseudo label dump") {
  const Matrix p{{0.9, 0.1}, {0.2, 0.8}};
  const ConfidentSet c = select_confident(p, std::vector<NodeId>{0, 1}, 1.0);
  const auto file = test::scratch_dir("pseudo") / "pseudo.csv";
  write_pseudo_labels(c, p, file);
  std::ifstream in(file);
  std::string a, b;
  std::getline(in, a);
  std::getline(in, b);
  CHECK(a == "0,0,0.90000000000000002");
  CHECK(b.rfind("1,1,", 0) == 0);
}
