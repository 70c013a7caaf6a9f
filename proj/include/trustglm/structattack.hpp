#pragma once

#include "trustglm/graph.hpp"
#include "trustglm/rng.hpp"
#include "trustglm/surrogate.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace trustglm {

// ---------------------------------------------------------------------------
// Nettack (direct, edges only)

struct NettackConfig {
  /// Edge budget; std::nullopt resolves to deg(v0), floored at 1.
  std::optional<std::size_t> budget;
  std::uint64_t seed = 0;

  std::size_t resolve_budget(const TextAttributedGraph& graph, NodeId v0) const;
};

struct NettackStep {
  NodePair flip;
  double score = 0.0;  // margin score of v0 after committing the flip
};

struct NettackResult {
  EdgeFlipSet flips;
  std::vector<NettackStep> trace;
  double initial_score = 0.0;
  bool success = false;  // final margin score > 0
};

/// Margin score of v0 under an SGC model, optionally with the pair (v0, u)
/// toggled. Only the two-hop neighborhood of v0 is touched.
double sgc_target_margin(const TextAttributedGraph& graph, const Matrix& xw, NodeId v0, int c_old,
                         std::optional<NodeId> toggle = std::nullopt);

/// Greedy direct attack: each step commits the single flip (v0, u) with the
/// highest margin score, ties going to the smallest pair. Stops once v0 is
/// misclassified, the budget is spent, or no flip improves the score.
NettackResult nettack(const TextAttributedGraph& graph, const SurrogateModel& model, NodeId v0,
                      const NettackConfig& cfg);

// ---------------------------------------------------------------------------
// PRBCD

enum class PrbcdMode { local, global };

/// Pairs an attack may flip: every unordered pair, or only pairs incident to
/// a target.
enum class CandidateScope { all_pairs, target_incident };

struct PrbcdConfig {
  std::size_t budget = 0;
  std::size_t block_size = 250000;
  /// Effective step at epoch t is learning_rate * budget / num_nodes / sqrt(t + 1).
  double learning_rate = 2000.0;
  std::size_t epochs = 200;
  std::size_t resample_period = 5;
  double resample_fraction = 0.25;
  AttackLoss loss_kind = AttackLoss::margin;
  PrbcdMode mode = PrbcdMode::local;
  /// Defaults to target_incident for local mode and all_pairs for global.
  std::optional<CandidateScope> scope;
  std::size_t num_samples = 20;
  std::uint64_t seed = 0;

  void validate() const;
  CandidateScope resolved_scope() const;
};

struct PrbcdEpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double p_sum = 0.0;
  double p_min = 0.0;
  double p_max = 0.0;
  std::size_t block = 0;
};

struct PrbcdResult {
  EdgeFlipSet flips;
  double loss = 0.0;        // attack loss with the returned flips applied
  double clean_loss = 0.0;  // attack loss on the unperturbed graph
  std::size_t feasible_samples = 0;
  bool used_fallback = false;
};

using PrbcdObserver = std::function<void(const PrbcdEpochLog&)>;

PrbcdResult prbcd(const TextAttributedGraph& graph, const SurrogateModel& model,
                  std::span<const NodeId> targets, const PrbcdConfig& cfg,
                  const PrbcdObserver& observer = {});

/// Euclidean projection onto {q : 0 <= q <= 1, sum(q) <= budget}.
Vector project_budget(const Eigen::Ref<const Vector>& p, double budget);

/// Independent Bernoulli(p_i) draw per slot.
EdgeFlipSet sample_flips(const Eigen::Ref<const Vector>& p, std::span<const NodePair> slots,
                         Rng& rng);

/// `budget` distinct flips drawn uniformly from the pairs incident to the
/// targets (fewer when that set is smaller).
EdgeFlipSet random_flip_baseline(const TextAttributedGraph& graph,
                                 std::span<const NodeId> targets, std::size_t budget, Rng& rng);

// ---------------------------------------------------------------------------
// Persistence: {"target": id|null, "budget": n, "flips": [[u,v],...],
//               "success": bool, "seed": n}

struct FlipRecord {
  std::optional<NodeId> target;
  EdgeFlipSet flips;
  bool success = false;
  std::uint64_t seed = 0;

  bool operator==(const FlipRecord&) const = default;
};

std::string to_json(const FlipRecord& record);
FlipRecord flip_record_from_json(const std::string& text);

}  // namespace trustglm
