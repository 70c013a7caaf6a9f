#pragma once

#include "trustglm/graph.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>

namespace trustglm {

enum class SurrogateKind : std::uint32_t { sgc = 0, gcn2 = 1 };

std::string to_string(SurrogateKind kind);
SurrogateKind surrogate_kind_from_string(const std::string& name);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double learning_rate = 1e-2;
  std::size_t epochs = 200;
  std::size_t hidden_dim = 16;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument when learning_rate <= 0 or epochs == 0.
  void validate() const;
};

enum class AdvMethod : std::uint32_t { none = 0, fgsm = 1, pgd = 2 };

/// Adversarial-training settings recorded alongside a model.
struct AdvSnapshot {
  AdvMethod method = AdvMethod::none;
  double epsilon = 0.0;
  double alpha = 1.0;
  std::uint32_t num_steps = 0;
  double step_size = 0.0;

  bool operator==(const AdvSnapshot&) const = default;
};

/// SGC: logits = Â² X W (w1 = W, w2 empty).
/// GCN2: logits = Â relu(Â X W1) W2.
struct SurrogateModel {
  SurrogateKind kind = SurrogateKind::sgc;
  Matrix w1;
  Matrix w2;
  TrainConfig config;
  AdvSnapshot adversarial;

  std::size_t feature_dim() const { return static_cast<std::size_t>(w1.rows()); }
  std::size_t num_classes() const {
    return static_cast<std::size_t>(kind == SurrogateKind::sgc ? w1.cols() : w2.cols());
  }
  std::size_t hidden_dim() const {
    return kind == SurrogateKind::gcn2 ? static_cast<std::size_t>(w1.cols()) : 0;
  }
};

enum class AttackLoss { margin, cross_entropy };

/// Logits for every node.
Matrix forward_logits(const SurrogateModel& model, const SparseMatrix& a_hat, const Matrix& x);

/// Logit rows for the requested nodes, in order.
Matrix forward_logits(const SurrogateModel& model, const SparseMatrix& a_hat, const Matrix& x,
                      std::span<const NodeId> nodes);

Matrix softmax_rows(const Matrix& logits);

/// max_{c != c_old} z_c - z_{c_old}; positive iff the row is misclassified
/// with respect to c_old.
double margin_score(const Eigen::Ref<const Vector>& logits_row, int c_old);

/// Mean softmax cross-entropy over targets.
double cross_entropy(const Matrix& logits, std::span<const NodeId> targets,
                     std::span<const int> labels);

struct FeatureGradient {
  double loss = 0.0;
  Matrix grad;  // dJ/dX, same shape as X
};

/// Mean cross-entropy over targets and its exact gradient with respect to X.
FeatureGradient grad_wrt_features(const SurrogateModel& model, const SparseMatrix& a_hat,
                                  const Matrix& x, std::span<const NodeId> targets,
                                  std::span<const int> labels);

struct WeightGradient {
  double loss = 0.0;
  Matrix g1;
  Matrix g2;
};

/// Mean cross-entropy over targets and its gradient with respect to the
/// weights (no regularization term).
WeightGradient grad_wrt_weights(const SurrogateModel& model, const SparseMatrix& a_hat,
                                const Matrix& x, std::span<const NodeId> targets,
                                std::span<const int> labels);

struct EdgeWeightGradient {
  double loss = 0.0;
  Vector grad;  // one entry per slot
};

/// Attack loss on the graph whose slot (u,v) carries the continuous weight
/// A_uv + (1 - 2 A_uv) p, and its gradient with respect to p. Degrees are
/// renormalized with the continuous weights included. Labels come from the
/// graph.
EdgeWeightGradient grad_wrt_edge_weights(const SurrogateModel& model,
                                         const TextAttributedGraph& graph,
                                         const Eigen::Ref<const Vector>& p,
                                         std::span<const NodePair> slots,
                                         std::span<const NodeId> targets, AttackLoss loss_kind);

/// Edge-weight attack objective for a fixed model, graph and target set.
/// Caches X·W1 so repeated evaluations only pay for propagation.
class EdgeWeightObjective {
 public:
  EdgeWeightObjective(const SurrogateModel& model, const TextAttributedGraph& graph,
                      std::span<const NodeId> targets, AttackLoss loss_kind);

  EdgeWeightGradient gradient(const Eigen::Ref<const Vector>& p,
                              std::span<const NodePair> slots) const;
  double loss(const Eigen::Ref<const Vector>& p, std::span<const NodePair> slots) const;
  /// Loss with the given pairs flipped outright.
  double loss(std::span<const NodePair> flips) const;

 private:
  const SurrogateModel& model_;
  const TextAttributedGraph& graph_;
  std::vector<NodeId> targets_;
  AttackLoss loss_kind_;
  Matrix xw_;
};

/// Loss value only (same definition as grad_wrt_edge_weights).
double edge_weight_loss(const SurrogateModel& model, const TextAttributedGraph& graph,
                        const Eigen::Ref<const Vector>& p, std::span<const NodePair> slots,
                        std::span<const NodeId> targets, AttackLoss loss_kind);

/// Attack loss evaluated directly on logits.
double attack_loss(const Matrix& logits, std::span<const NodeId> targets,
                   std::span<const int> labels, AttackLoss loss_kind);

SurrogateModel init_surrogate(SurrogateKind kind, std::size_t feature_dim,
                              std::size_t num_classes, const TrainConfig& cfg);

using WeightObjective =
    std::function<WeightGradient(const SurrogateModel& model, const SparseMatrix& a_hat)>;

/// Full-batch Adam from a seeded Glorot initialization. The objective returns
/// the data loss and its weight gradient; the L2 term is added here.
SurrogateModel fit_surrogate(const TextAttributedGraph& graph, const TrainConfig& cfg,
                             SurrogateKind kind, const WeightObjective& objective);

/// Full-batch Adam on mean cross-entropy over the train split plus an L2 term.
/// Deterministic for a given seed. Throws TrainingDiverged on a non-finite loss.
SurrogateModel train_surrogate(const TextAttributedGraph& graph, const TrainConfig& cfg,
                               SurrogateKind kind);

/// Argmax class per requested node.
std::vector<int> predict(const SurrogateModel& model, const SparseMatrix& a_hat, const Matrix& x,
                         std::span<const NodeId> nodes);

double accuracy(const SurrogateModel& model, const TextAttributedGraph& graph,
                std::span<const NodeId> nodes);

void save_model(const SurrogateModel& model, const std::filesystem::path& path);
SurrogateModel load_model(const std::filesystem::path& path);

}  // namespace trustglm
