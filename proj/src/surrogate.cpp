#include "trustglm/surrogate.hpp"

#include "trustglm/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <unordered_map>

namespace trustglm {

std::string to_string(SurrogateKind kind) { return kind == SurrogateKind::sgc ? "sgc" : "gcn2"; }

SurrogateKind surrogate_kind_from_string(const std::string& name) {
  if (name == "sgc") return SurrogateKind::sgc;
  if (name == "gcn2" || name == "gcn") return SurrogateKind::gcn2;
  throw std::invalid_argument("unknown surrogate kind '" + name + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
}

namespace {

// Intermediate activations of one forward pass over all nodes.
struct Activations {
  Matrix xw;      // X W (sgc) or X W1 (gcn2); left empty by forward_from_xw
  Matrix hidden;  // Â X W (sgc) or Â X W1, pre-activation (gcn2)
  Matrix zw;      // relu(hidden) W2 (gcn2 only)
  Matrix logits;
};

Activations forward_from_xw(const SurrogateModel& m, const SparseMatrix& a_hat, const Matrix& xw) {
  Activations act;
  act.hidden = a_hat * xw;
  if (m.kind == SurrogateKind::sgc) {
    act.logits = a_hat * act.hidden;
  } else {
    act.zw = act.hidden.cwiseMax(0.0) * m.w2;
    act.logits = a_hat * act.zw;
  }
  return act;
}

Activations forward(const SurrogateModel& m, const SparseMatrix& a_hat, const Matrix& x) {
  Matrix xw = x * m.w1;
  auto act = forward_from_xw(m, a_hat, xw);
  act.xw = std::move(xw);
  return act;
}

// dLoss/dlogits for the chosen loss; rows outside the targets stay zero.
double loss_and_logit_grad(const Matrix& logits, std::span<const NodeId> targets,
                           std::span<const int> labels, AttackLoss kind, Matrix* grad) {
  if (grad) grad->setZero(logits.rows(), logits.cols());
  double loss = 0.0;
  const double scale = targets.empty() ? 0.0 : 1.0 / static_cast<double>(targets.size());
  for (NodeId t : targets) {
    const auto row = logits.row(t);
    const int y = labels[static_cast<std::size_t>(t)];
    if (kind == AttackLoss::margin) {
      Eigen::Index best = -1;
      for (Eigen::Index c = 0; c < row.size(); ++c)
        if (c != y && (best < 0 || row[c] > row[best])) best = c;
      loss += row[best] - row[y];
      if (grad) {
        (*grad)(t, best) += 1.0;
        (*grad)(t, y) -= 1.0;
      }
    } else {
      const double mx = row.maxCoeff();
      const Eigen::RowVectorXd e = (row.array() - mx).exp();
      const double z = e.sum();
      loss += scale * (std::log(z) + mx - row[y]);
      if (grad) {
        grad->row(t) += scale * e / z;
        (*grad)(t, y) -= scale;
      }
    }
  }
  return loss;
}

std::uint64_t pair_key(NodeId u, NodeId v) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(u)) << 32) |
         static_cast<std::uint32_t>(v);
}

// Normalized adjacency with continuous weights on the given slots.
struct WeightedAdjacency {
  SparseMatrix a_hat;
  Vector degree;             // row sums of A + I with continuous weights
  std::vector<double> base;  // A_uv per slot
};

WeightedAdjacency weighted_adjacency(const TextAttributedGraph& graph,
                                     const Eigen::Ref<const Vector>& p,
                                     std::span<const NodePair> slots) {
  const auto n = static_cast<Eigen::Index>(graph.num_nodes());
  WeightedAdjacency out;
  out.base.resize(slots.size());
  std::unordered_map<std::uint64_t, std::size_t> slot_of;
  slot_of.reserve(slots.size() * 2);
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const auto& sl = slots[s];
    if (sl.u == sl.v) throw std::invalid_argument("edge-weight slot on a self-loop");
    slot_of.emplace(pair_key(std::min(sl.u, sl.v), std::max(sl.u, sl.v)), s);
  }

  struct Entry {
    NodeId u, v;
    double w;
  };
  std::vector<Entry> entries;
  entries.reserve(graph.num_edges() + slots.size());
  for (const auto& e : graph.edges()) {
    if (!slot_of.contains(pair_key(e.u, e.v))) entries.push_back({e.u, e.v, 1.0});
  }
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const auto pr = NodePair::make(slots[s].u, slots[s].v);
    const double a = graph.has_edge(pr.u, pr.v) ? 1.0 : 0.0;
    out.base[s] = a;
    entries.push_back({pr.u, pr.v, a + (1.0 - 2.0 * a) * p[static_cast<Eigen::Index>(s)]});
  }

  out.degree = Vector::Ones(n);
  for (const auto& e : entries) {
    out.degree[e.u] += e.w;
    out.degree[e.v] += e.w;
  }
  const Vector inv_sqrt = out.degree.cwiseSqrt().cwiseInverse();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(entries.size() * 2 + static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) trips.emplace_back(i, i, inv_sqrt[i] * inv_sqrt[i]);
  for (const auto& e : entries) {
    const double v = e.w * inv_sqrt[e.u] * inv_sqrt[e.v];
    trips.emplace_back(e.u, e.v, v);
    trips.emplace_back(e.v, e.u, v);
  }
  out.a_hat.resize(n, n);
  out.a_hat.setFromTriplets(trips.begin(), trips.end());
  return out;
}

void check_targets(std::span<const NodeId> targets, std::size_t num_nodes) {
  for (NodeId t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= num_nodes)
      throw std::out_of_range("target node " + std::to_string(t) + " out of range");
}

}  // namespace

Matrix forward_logits(const SurrogateModel& model, const SparseMatrix& a_hat, const Matrix& x) {
  if (static_cast<std::size_t>(x.cols()) != model.feature_dim())
    throw std::invalid_argument("feature dimension does not match the model");
  return forward(model, a_hat, x).logits;
}

Matrix forward_logits(const SurrogateModel& model, const SparseMatrix& a_hat, const Matrix& x,
                      std::span<const NodeId> nodes) {
  const Matrix all = forward_logits(model, a_hat, x);
  Matrix out(static_cast<Eigen::Index>(nodes.size()), all.cols());
  for (std::size_t i = 0; i < nodes.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = all.row(nodes[i]);
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

double margin_score(const Eigen::Ref<const Vector>& logits_row, int c_old) {
  if (logits_row.size() < 2) throw std::invalid_argument("margin_score needs at least two classes");
  if (c_old < 0 || c_old >= logits_row.size()) throw std::out_of_range("margin_score: bad class");
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < logits_row.size(); ++c)
    if (c != c_old) best = std::max(best, logits_row[c]);
  return best - logits_row[c_old];
}

double cross_entropy(const Matrix& logits, std::span<const NodeId> targets,
                     std::span<const int> labels) {
  return loss_and_logit_grad(logits, targets, labels, AttackLoss::cross_entropy, nullptr);
}

double attack_loss(const Matrix& logits, std::span<const NodeId> targets,
                   std::span<const int> labels, AttackLoss loss_kind) {
  return loss_and_logit_grad(logits, targets, labels, loss_kind, nullptr);
}

FeatureGradient grad_wrt_features(const SurrogateModel& model, const SparseMatrix& a_hat,
                                  const Matrix& x, std::span<const NodeId> targets,
                                  std::span<const int> labels) {
  check_targets(targets, static_cast<std::size_t>(x.rows()));
  const auto act = forward(model, a_hat, x);
  Matrix g;
  FeatureGradient out;
  out.loss = loss_and_logit_grad(act.logits, targets, labels, AttackLoss::cross_entropy, &g);
  const Matrix ag = a_hat * g;
  if (model.kind == SurrogateKind::sgc) {
    out.grad = (a_hat * ag) * model.w1.transpose();
  } else {
    const Matrix d_hidden =
        ((ag * model.w2.transpose()).array() * (act.hidden.array() > 0.0).cast<double>()).matrix();
    out.grad = (a_hat * d_hidden) * model.w1.transpose();
  }
  return out;
}

WeightGradient grad_wrt_weights(const SurrogateModel& model, const SparseMatrix& a_hat,
                                const Matrix& x, std::span<const NodeId> targets,
                                std::span<const int> labels) {
  check_targets(targets, static_cast<std::size_t>(x.rows()));
  const auto act = forward(model, a_hat, x);
  Matrix g;
  WeightGradient out;
  out.loss = loss_and_logit_grad(act.logits, targets, labels, AttackLoss::cross_entropy, &g);
  const Matrix ag = a_hat * g;
  if (model.kind == SurrogateKind::sgc) {
    out.g1 = x.transpose() * (a_hat * ag);
  } else {
    const Matrix relu = act.hidden.cwiseMax(0.0);
    out.g2 = relu.transpose() * ag;
    const Matrix d_hidden =
        ((ag * model.w2.transpose()).array() * (act.hidden.array() > 0.0).cast<double>()).matrix();
    out.g1 = x.transpose() * (a_hat * d_hidden);
  }
  return out;
}

EdgeWeightObjective::EdgeWeightObjective(const SurrogateModel& model,
                                         const TextAttributedGraph& graph,
                                         std::span<const NodeId> targets, AttackLoss loss_kind)
    : model_(model),
      graph_(graph),
      targets_(targets.begin(), targets.end()),
      loss_kind_(loss_kind),
      xw_(graph.features() * model.w1) {
  check_targets(targets, graph.num_nodes());
}

EdgeWeightGradient EdgeWeightObjective::gradient(const Eigen::Ref<const Vector>& p,
                                                 std::span<const NodePair> slots) const {
  if (static_cast<std::size_t>(p.size()) != slots.size())
    throw std::invalid_argument("edge-weight vector and slot list differ in length");
  const auto wa = weighted_adjacency(graph_, p, slots);
  const auto& a_hat = wa.a_hat;
  const auto act = forward_from_xw(model_, a_hat, xw_);

  Matrix g;
  EdgeWeightGradient out;
  out.loss = loss_and_logit_grad(act.logits, targets_, graph_.labels(), loss_kind_, &g);

  // dL/dÂ = sum_k left_k * right_k^T, one term per use of Â.
  std::vector<std::pair<Matrix, const Matrix*>> terms;
  const Matrix ag = a_hat * g;
  if (model_.kind == SurrogateKind::sgc) {
    terms.emplace_back(g, &act.hidden);
    terms.emplace_back(ag, &xw_);
  } else {
    terms.emplace_back(g, &act.zw);
    Matrix d_hidden =
        ((ag * model_.w2.transpose()).array() * (act.hidden.array() > 0.0).cast<double>()).matrix();
    terms.emplace_back(std::move(d_hidden), &xw_);
  }
  auto gamma = [&](Eigen::Index i, Eigen::Index j) {
    double s = 0.0;
    for (const auto& [left, right] : terms) s += left.row(i).dot(right->row(j));
    return s;
  };

  // Degree sensitivity: dL/dd_i = -(1 / 2 d_i) sum_j Â_ij (Γ_ij + Γ_ji).
  const auto n = a_hat.rows();
  Vector d_degree = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (SparseMatrix::InnerIterator it(a_hat, i); it; ++it) {
      if (it.value() == 0.0) continue;
      s += it.value() * (gamma(i, it.col()) + gamma(it.col(), i));
    }
    d_degree[i] = -s / (2.0 * wa.degree[i]);
  }

  out.grad.resize(static_cast<Eigen::Index>(slots.size()));
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const auto u = slots[s].u;
    const auto v = slots[s].v;
    const double dw = (gamma(u, v) + gamma(v, u)) / std::sqrt(wa.degree[u] * wa.degree[v]) +
                      d_degree[u] + d_degree[v];
    out.grad[static_cast<Eigen::Index>(s)] = (1.0 - 2.0 * wa.base[s]) * dw;
  }
  return out;
}

double EdgeWeightObjective::loss(const Eigen::Ref<const Vector>& p,
                                 std::span<const NodePair> slots) const {
  if (static_cast<std::size_t>(p.size()) != slots.size())
    throw std::invalid_argument("edge-weight vector and slot list differ in length");
  const auto wa = weighted_adjacency(graph_, p, slots);
  const auto act = forward_from_xw(model_, wa.a_hat, xw_);
  return attack_loss(act.logits, targets_, graph_.labels(), loss_kind_);
}

double EdgeWeightObjective::loss(std::span<const NodePair> flips) const {
  const Vector ones = Vector::Ones(static_cast<Eigen::Index>(flips.size()));
  return loss(ones, flips);
}

EdgeWeightGradient grad_wrt_edge_weights(const SurrogateModel& model,
                                         const TextAttributedGraph& graph,
                                         const Eigen::Ref<const Vector>& p,
                                         std::span<const NodePair> slots,
                                         std::span<const NodeId> targets, AttackLoss loss_kind) {
  return EdgeWeightObjective(model, graph, targets, loss_kind).gradient(p, slots);
}

double edge_weight_loss(const SurrogateModel& model, const TextAttributedGraph& graph,
                        const Eigen::Ref<const Vector>& p, std::span<const NodePair> slots,
                        std::span<const NodeId> targets, AttackLoss loss_kind) {
  return EdgeWeightObjective(model, graph, targets, loss_kind).loss(p, slots);
}

// ---------------------------------------------------------------------------
// Training

SurrogateModel init_surrogate(SurrogateKind kind, std::size_t feature_dim,
                              std::size_t num_classes, const TrainConfig& cfg) {
  Rng rng(cfg.seed);
  auto glorot = [&rng](std::size_t rows, std::size_t cols) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Matrix w(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-limit, limit);
    return w;
  };
  SurrogateModel m;
  m.kind = kind;
  m.config = cfg;
  if (kind == SurrogateKind::sgc) {
    m.w1 = glorot(feature_dim, num_classes);
  } else {
    if (cfg.hidden_dim < 1) throw std::invalid_argument("hidden_dim must be >= 1");
    m.w1 = glorot(feature_dim, cfg.hidden_dim);
    m.w2 = glorot(cfg.hidden_dim, num_classes);
  }
  return m;
}

namespace {

struct AdamSlot {
  Matrix m, v;
  void step(Matrix& w, const Matrix& g, double lr, std::size_t t) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    if (m.size() == 0) {
      m = Matrix::Zero(w.rows(), w.cols());
      v = Matrix::Zero(w.rows(), w.cols());
    }
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

}  // namespace

SurrogateModel fit_surrogate(const TextAttributedGraph& graph, const TrainConfig& cfg,
                             SurrogateKind kind, const WeightObjective& objective) {
  cfg.validate();
  if (graph.split().train.empty()) throw std::invalid_argument("empty train split");
  const auto a_hat = normalize_adjacency(graph);
  SurrogateModel model = init_surrogate(kind, graph.feature_dim(), graph.num_classes(), cfg);
  AdamSlot s1, s2;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto wg = objective(model, a_hat.matrix);
    const double reg = 0.5 * cfg.weight_decay *
                       (model.w1.squaredNorm() + (model.w2.size() ? model.w2.squaredNorm() : 0.0));
    if (!std::isfinite(wg.loss + reg))
      throw TrainingDiverged("non-finite training loss at epoch " + std::to_string(epoch));
    wg.g1 += cfg.weight_decay * model.w1;
    s1.step(model.w1, wg.g1, cfg.learning_rate, epoch);
    if (kind == SurrogateKind::gcn2) {
      wg.g2 += cfg.weight_decay * model.w2;
      s2.step(model.w2, wg.g2, cfg.learning_rate, epoch);
    }
  }
  if (!model.w1.allFinite() || (model.w2.size() && !model.w2.allFinite()))
    throw TrainingDiverged("non-finite weights after training");
  return model;
}

SurrogateModel train_surrogate(const TextAttributedGraph& graph, const TrainConfig& cfg,
                               SurrogateKind kind) {
  const auto& train = graph.split().train;
  return fit_surrogate(graph, cfg, kind, [&](const SurrogateModel& m, const SparseMatrix& a_hat) {
    return grad_wrt_weights(m, a_hat, graph.features(), train, graph.labels());
  });
}

std::vector<int> predict(const SurrogateModel& model, const SparseMatrix& a_hat, const Matrix& x,
                         std::span<const NodeId> nodes) {
  const Matrix logits = forward_logits(model, a_hat, x, nodes);
  std::vector<int> out(nodes.size());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    logits.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const SurrogateModel& model, const TextAttributedGraph& graph,
                std::span<const NodeId> nodes) {
  if (nodes.empty()) return 0.0;
  const auto a_hat = normalize_adjacency(graph);
  const auto pred = predict(model, a_hat.matrix, graph.features(), nodes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    correct += pred[i] == graph.labels()[static_cast<std::size_t>(nodes[i])];
  return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

// ---------------------------------------------------------------------------
// Persistence: little-endian header followed by float32 weights.

namespace {

constexpr char kMagic[8] = {'T', 'G', 'L', 'M', 'S', 'U', 'R', 'R'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const auto bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.put(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T get(std::istream& in) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int c = in.get();
    if (c == EOF) throw std::runtime_error("truncated model file");
    bits |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return std::bit_cast<T>(bits);
}

void put_matrix(std::ostream& out, const Matrix& w) {
  for (Eigen::Index r = 0; r < w.rows(); ++r)
    for (Eigen::Index c = 0; c < w.cols(); ++c) put<float>(out, static_cast<float>(w(r, c)));
}

Matrix get_matrix(std::istream& in, std::size_t rows, std::size_t cols) {
  Matrix w(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < w.rows(); ++r)
    for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = static_cast<double>(get<float>(in));
  return w;
}

}  // namespace

void save_model(const SurrogateModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.kind));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.feature_dim()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.hidden_dim()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.num_classes()));
  put<std::uint64_t>(out, model.config.seed);
  put<double>(out, model.config.learning_rate);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.config.epochs));
  put<double>(out, model.config.weight_decay);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.adversarial.method));
  put<double>(out, model.adversarial.epsilon);
  put<double>(out, model.adversarial.alpha);
  put<std::uint32_t>(out, model.adversarial.num_steps);
  put<double>(out, model.adversarial.step_size);
  put_matrix(out, model.w1);
  if (model.kind == SurrogateKind::gcn2) put_matrix(out, model.w2);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

SurrogateModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + sizeof magic, kMagic))
    throw std::runtime_error(path.string() + ": not a surrogate model file");
  if (get<std::uint32_t>(in) != kVersion)
    throw std::runtime_error(path.string() + ": unsupported model version");
  SurrogateModel m;
  const auto kind = get<std::uint32_t>(in);
  if (kind > 1) throw std::runtime_error(path.string() + ": unknown model kind");
  m.kind = static_cast<SurrogateKind>(kind);
  const auto feat = get<std::uint32_t>(in);
  const auto hidden = get<std::uint32_t>(in);
  const auto classes = get<std::uint32_t>(in);
  m.config.seed = get<std::uint64_t>(in);
  m.config.learning_rate = get<double>(in);
  m.config.epochs = get<std::uint32_t>(in);
  m.config.weight_decay = get<double>(in);
  m.config.hidden_dim = m.kind == SurrogateKind::gcn2 ? hidden : m.config.hidden_dim;
  m.adversarial.method = static_cast<AdvMethod>(get<std::uint32_t>(in));
  m.adversarial.epsilon = get<double>(in);
  m.adversarial.alpha = get<double>(in);
  m.adversarial.num_steps = get<std::uint32_t>(in);
  m.adversarial.step_size = get<double>(in);
  if (m.kind == SurrogateKind::sgc) {
    m.w1 = get_matrix(in, feat, classes);
  } else {
    m.w1 = get_matrix(in, feat, hidden);
    m.w2 = get_matrix(in, hidden, classes);
  }
  return m;
}

}  // namespace trustglm
