#include "oral/pseudo_label.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "oral/assignment.hpp"
#include "oral/cluster.hpp"

namespace oral {

std::vector<Matrix> pad_predictions(std::span<const Matrix> preds) {
  std::vector<Matrix> out;
  if (preds.empty()) return out;
  const std::size_t n = preds.front().rows();
  std::size_t width = 0;
  for (const auto& p : preds) {
    if (p.rows() != n) throw std::invalid_argument("pad_predictions: layers disagree on node count");
    width = std::max(width, p.cols());
  }
  for (const auto& p : preds) {
    Matrix m(n, width);
    for (std::size_t i = 0; i < n; ++i) std::copy(p.row(i).begin(), p.row(i).end(), m.row(i).begin());
    out.push_back(std::move(m));
  }
  return out;
}

AlignedLayers align_layers(std::span<const Matrix> padded) {
  AlignedLayers out;
  if (padded.empty()) return out;
  const std::size_t n = padded.front().rows(), width = padded.front().cols();
  for (const auto& p : padded)
    if (p.rows() != n || p.cols() != width) throw std::invalid_argument("align_layers: shapes differ");

  const auto ref = row_argmax(padded.front());
  std::vector<int> identity(width);
  for (std::size_t g = 0; g < width; ++g) identity[g] = static_cast<int>(g);
  out.aligned.push_back(padded.front());
  out.alignment.push_back(identity);

  for (std::size_t l = 1; l < padded.size(); ++l) {
    const auto pred = row_argmax(padded[l]);
    Matrix agree(width, width);
    for (std::size_t i = 0; i < n; ++i) agree(static_cast<std::size_t>(pred[i]), static_cast<std::size_t>(ref[i])) += 1.0;
    const Assignment a = max_weight_assignment(agree);
    std::vector<int> map = a.row_to_col;  // square, so every row is matched
    Matrix moved(n, width);
    for (std::size_t g = 0; g < width; ++g)
      for (std::size_t i = 0; i < n; ++i) moved(i, static_cast<std::size_t>(map[g])) = padded[l](i, g);
    out.aligned.push_back(std::move(moved));
    out.alignment.push_back(std::move(map));
  }
  return out;
}

Matrix ensemble(std::span<const Matrix> aligned) {
  if (aligned.empty()) throw std::invalid_argument("ensemble: no layers");
  Matrix sum(aligned.front().rows(), aligned.front().cols());
  for (const auto& a : aligned) sum += a;
  sum *= 1.0 / static_cast<double>(aligned.size());
  return sum;
}

Suppressed suppress(const Matrix& p_hat, double eta) {
  if (eta < 0.0) throw std::invalid_argument("suppress: eta must be nonnegative");
  Suppressed out{p_hat, std::vector<bool>(p_hat.cols(), false)};
  bool any = false;
  for (std::size_t j = 0; j < p_hat.cols(); ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < p_hat.rows(); ++i) m += p_hat(i, j);
    m /= static_cast<double>(std::max<std::size_t>(p_hat.rows(), 1));
    out.mask[j] = m > eta;
    any = any || out.mask[j];
    if (!out.mask[j])
      for (std::size_t i = 0; i < p_hat.rows(); ++i) out.p_hat(i, j) = 0.0;
  }
  if (!any) throw std::invalid_argument("suppress: eta suppresses every group");
  return out;
}

std::size_t ConfidentSet::size() const {
  std::size_t s = 0;
  for (const auto& g : per_group) s += g.size();
  return s;
}

std::vector<std::pair<NodeId, int>> ConfidentSet::members() const {
  std::vector<std::pair<NodeId, int>> out;
  for (std::size_t k = 0; k < per_group.size(); ++k)
    for (NodeId v : per_group[k]) out.emplace_back(v, static_cast<int>(k));
  return out;
}

ConfidentSet select_confident(const Matrix& masked, std::span<const NodeId> unlabeled, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("select_confident: gamma must lie in (0, 1]");
  ConfidentSet out;
  out.gamma = gamma;
  out.per_group.resize(masked.cols());
  const auto argmax = row_argmax(masked);
  std::vector<std::vector<NodeId>> candidates(masked.cols());
  for (NodeId v : unlabeled) {
    if (v >= masked.rows()) throw std::invalid_argument("select_confident: node out of range");
    candidates[static_cast<std::size_t>(argmax[v])].push_back(v);
  }
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    auto& c = candidates[k];
    if (c.empty()) continue;
    std::sort(c.begin(), c.end(), [&](NodeId a, NodeId b) {
      return masked(a, k) > masked(b, k) || (masked(a, k) == masked(b, k) && a < b);
    });
    // Small epsilon keeps exact products like 0.3 * 10 from rounding up.
    const auto take = static_cast<std::size_t>(std::ceil(gamma * static_cast<double>(c.size()) - 1e-9));
    out.per_group[k].assign(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(std::min(take, c.size())));
  }
  return out;
}

std::vector<int> EnsemblePrediction::labels() const { return row_argmax(suppressed.p_hat); }

std::size_t EnsemblePrediction::group_count() const {
  return static_cast<std::size_t>(std::count(suppressed.mask.begin(), suppressed.mask.end(), true));
}

EnsemblePrediction ensemble_predict(std::span<const Matrix> preds, double eta) {
  EnsemblePrediction out;
  const auto padded = pad_predictions(preds);
  out.layers = align_layers(padded);
  out.averaged = ensemble(out.layers.aligned);
  out.suppressed = suppress(out.averaged, eta);
  return out;
}

void write_pseudo_labels(const ConfidentSet& confident, const Matrix& masked, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out.precision(17);
  for (auto [v, k] : confident.members()) out << v << ',' << k << ',' << masked(v, static_cast<std::size_t>(k)) << '\n';
}

}  // namespace oral
