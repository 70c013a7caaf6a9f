#pragma once

// Shared fixtures and independent oracles for the test suites. Nothing in
// here calls the propagation or gradient code under test.

#include "trustglm/graph.hpp"
#include "trustglm/rng.hpp"
#include "trustglm/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace trustglm::testing {

inline DataSplit default_split(std::size_t n) {
  DataSplit s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i % 3 == 0) s.train.push_back(static_cast<NodeId>(i));
    else if (i % 3 == 1) s.test.push_back(static_cast<NodeId>(i));
    else s.val.push_back(static_cast<NodeId>(i));
  }
  return s;
}

/// Erdős–Rényi graph with Gaussian-ish features and random labels.
inline TextAttributedGraph random_graph(std::size_t n, double edge_prob, std::size_t feat_dim,
                                        std::size_t num_classes, std::uint64_t seed,
                                        std::optional<DataSplit> split = std::nullopt) {
  Rng rng(seed);
  std::vector<NodePair> edges;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = u + 1; v < n; ++v)
      if (rng.bernoulli(edge_prob)) edges.push_back({static_cast<NodeId>(u), static_cast<NodeId>(v)});
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(feat_dim));
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = rng.uniform(-1.0, 1.0);
  std::vector<int> labels(n);
  for (auto& l : labels) l = static_cast<int>(rng.index(num_classes));
  std::vector<std::string> texts(n);
  for (std::size_t i = 0; i < n; ++i) texts[i] = "node " + std::to_string(i);
  std::vector<std::string> classes;
  for (std::size_t c = 0; c < num_classes; ++c) classes.push_back("class" + std::to_string(c));
  return TextAttributedGraph(n, edges, std::move(x), std::move(texts), std::move(labels),
                             std::move(classes), split ? *split : default_split(n));
}

/// Two-community graph whose features and labels agree with the community.
inline TextAttributedGraph planted_graph(std::size_t n, std::size_t num_classes, double p_in,
                                         double p_out, std::size_t feat_dim, double signal,
                                         std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % num_classes);
  std::vector<NodePair> edges;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = u + 1; v < n; ++v)
      if (rng.bernoulli(labels[u] == labels[v] ? p_in : p_out))
        edges.push_back({static_cast<NodeId>(u), static_cast<NodeId>(v)});
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(feat_dim));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = rng.uniform(-1.0, 1.0);
    x(r, labels[static_cast<std::size_t>(r)] % x.cols()) += signal;
  }
  std::vector<std::string> texts(n, "");
  std::vector<std::string> classes;
  for (std::size_t c = 0; c < num_classes; ++c) classes.push_back("class" + std::to_string(c));
  DataSplit split;
  for (std::size_t i = 0; i < n; ++i) {
    if (i % 5 < 2) split.train.push_back(static_cast<NodeId>(i));
    else if (i % 5 == 2) split.val.push_back(static_cast<NodeId>(i));
    else split.test.push_back(static_cast<NodeId>(i));
  }
  return TextAttributedGraph(n, edges, std::move(x), std::move(texts), std::move(labels),
                             std::move(classes), std::move(split));
}

/// Texts that name their class: a third mention only the true class, a third
/// the true class followed by another one, the rest nothing. Class 0 is the
/// majority so a fixed fallback has something to get right.
inline TextAttributedGraph keyword_graph(std::size_t n, std::uint64_t seed) {
  const std::vector<std::string> classes{"Theory", "Neural Networks", "Rule Learning", "Case Based"};
  Rng rng(seed);
  std::vector<int> labels(n);
  std::vector<std::string> texts(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = rng.bernoulli(0.4) ? 0 : static_cast<int>(1 + rng.index(3));
    const auto& own = classes[static_cast<std::size_t>(labels[i])];
    switch (i % 3) {
      case 0: texts[i] = "We study " + own + " in depth."; break;
      case 1: {
        auto other = static_cast<std::size_t>(labels[i]);
        while (other == static_cast<std::size_t>(labels[i])) other = rng.index(classes.size());
        texts[i] = "A paper on " + own + ", with a remark on " + classes[other] + ".";
        break;
      }
      default: texts[i] = "An unrelated abstract."; break;
    }
  }
  std::vector<NodePair> edges;
  for (std::size_t u = 0; u + 1 < n; ++u) edges.push_back({static_cast<NodeId>(u), static_cast<NodeId>(u + 1)});
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(n), 4);
  for (std::size_t i = 0; i < n; ++i) x(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  DataSplit split;
  for (std::size_t i = 0; i < n; ++i) (i % 2 ? split.test : split.train).push_back(static_cast<NodeId>(i));
  return TextAttributedGraph(n, edges, std::move(x), std::move(texts), std::move(labels), classes, std::move(split));
}

// ---------------------------------------------------------------------------
// Dense oracles

inline Matrix dense_adjacency(const TextAttributedGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  Matrix a = Matrix::Zero(n, n);
  for (const auto& e : g.edges()) a(e.u, e.v) = a(e.v, e.u) = 1.0;
  return a;
}

/// D^{-1/2}(A + I)D^{-1/2} from a dense (possibly weighted) adjacency.
inline Matrix dense_normalize(const Matrix& a) {
  const Matrix tilde = a + Matrix::Identity(a.rows(), a.cols());
  const Vector d = tilde.rowwise().sum();
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out(i, j) = tilde(i, j) / std::sqrt(d[i] * d[j]);
  return out;
}

inline Matrix dense_logits(const SurrogateModel& m, const Matrix& a_hat, const Matrix& x) {
  if (m.kind == SurrogateKind::sgc) return a_hat * a_hat * x * m.w1;
  const Matrix h = (a_hat * x * m.w1).cwiseMax(0.0);
  return a_hat * h * m.w2;
}

inline double dense_margin(const Eigen::RowVectorXd& row, int c_old) {
  double best = -1e300;
  for (Eigen::Index c = 0; c < row.size(); ++c)
    if (c != c_old) best = std::max(best, row[c] - row[c_old]);
  return best;
}

inline double dense_mean_ce(const Matrix& logits, const std::vector<NodeId>& targets,
                            const std::vector<int>& labels) {
  double s = 0.0;
  for (NodeId t : targets) {
    const auto row = logits.row(t);
    double z = 0.0;
    for (Eigen::Index c = 0; c < row.size(); ++c) z += std::exp(row[c]);
    s += std::log(z) - row[labels[static_cast<std::size_t>(t)]];
  }
  return s / static_cast<double>(targets.size());
}

/// Attack loss on a dense weighted adjacency, written independently of the
/// library's sparse path.
inline double dense_attack_loss(const SurrogateModel& m, const Matrix& a, const Matrix& x,
                                const std::vector<NodeId>& targets, const std::vector<int>& labels,
                                AttackLoss kind) {
  const Matrix logits = dense_logits(m, dense_normalize(a), x);
  if (kind == AttackLoss::cross_entropy) return dense_mean_ce(logits, targets, labels);
  double s = 0.0;
  for (NodeId t : targets) s += dense_margin(logits.row(t), labels[static_cast<std::size_t>(t)]);
  return s;
}

/// Central difference.
inline double central_difference(const std::function<double(double)>& f, double x0, double h) {
  return (f(x0 + h) - f(x0 - h)) / (2.0 * h);
}

/// Relative error with a small absolute floor so exact zeros compare cleanly.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// All-pairs hop distances by Floyd–Warshall.
inline std::vector<std::vector<std::size_t>> hop_distances(const TextAttributedGraph& g) {
  const auto n = g.num_nodes();
  constexpr std::size_t inf = 1u << 30;
  std::vector<std::vector<std::size_t>> d(n, std::vector<std::size_t>(n, inf));
  for (std::size_t i = 0; i < n; ++i) d[i][i] = 0;
  for (const auto& e : g.edges()) d[static_cast<std::size_t>(e.u)][static_cast<std::size_t>(e.v)] = d[static_cast<std::size_t>(e.v)][static_cast<std::size_t>(e.u)] = 1;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  return d;
}

inline SurrogateModel random_model(SurrogateKind kind, std::size_t feat, std::size_t hidden,
                                   std::size_t classes, std::uint64_t seed) {
  Rng rng(seed);
  SurrogateModel m;
  m.kind = kind;
  auto fill = [&](Eigen::Index r, Eigen::Index c) {
    Matrix w(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) w(i, j) = rng.uniform(-1.0, 1.0);
    return w;
  };
  if (kind == SurrogateKind::sgc) {
    m.w1 = fill(static_cast<Eigen::Index>(feat), static_cast<Eigen::Index>(classes));
  } else {
    m.w1 = fill(static_cast<Eigen::Index>(feat), static_cast<Eigen::Index>(hidden));
    m.w2 = fill(static_cast<Eigen::Index>(hidden), static_cast<Eigen::Index>(classes));
    m.config.hidden_dim = hidden;
  }
  return m;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("trustglm_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace trustglm::testing
