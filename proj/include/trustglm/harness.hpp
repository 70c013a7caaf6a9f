#pragma once

#include "trustglm/graph.hpp"
#include "trustglm/structattack.hpp"
#include "trustglm/surrogate.hpp"
#include "trustglm/textattack.hpp"
#include "trustglm/victim.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace trustglm {

enum class AttackVector { structure, text, prompt };

std::string to_string(AttackVector vector);
AttackVector attack_vector_from_string(const std::string& name);

/// Attack names per vector:
///   structure: identity, random, nettack, prbcd
///   text:      identity, hlbb, texthoaxer
///   prompt:    identity, shuffle, in_noise, cross_noise
/// `attack_config` holds the attack's own knobs (budget, mode, epochs,
/// embeddings, noise pool, ...); see the README for the keys.
struct CampaignConfig {
  std::filesystem::path dataset;
  std::shared_ptr<const TextAttributedGraph> graph;      // overrides dataset
  VictimSpec victim;
  AttackVector vector = AttackVector::structure;
  std::string attack = "identity";
  nlohmann::json attack_config = nlohmann::json::object();
  std::filesystem::path surrogate_path;                  // gradient source for structure attacks
  std::shared_ptr<const SurrogateModel> surrogate;       // overrides surrogate_path
  std::shared_ptr<const EmbeddingVocab> vocab;           // overrides attack_config["embeddings"]
  double sample_fraction = 0.10;
  std::optional<std::size_t> targets_per_repeat;         // overrides sample_fraction
  std::size_t repeats = 3;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::filesystem::path output_dir;                      // empty: nothing written

  void validate() const;
};

/// Relative paths in the document resolve against `base`.
CampaignConfig campaign_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
nlohmann::json to_json(const CampaignConfig& cfg);

struct TargetRecord {
  std::size_t repeat = 0;
  NodeId id = 0;
  std::string pre_label;
  std::string post_label;
  std::string true_label;
  bool success = false;  // post_label != true_label
  std::size_t queries = 0;
  std::size_t edits = 0;

  bool operator==(const TargetRecord&) const = default;
};

struct CampaignMetrics {
  std::size_t targets = 0;
  std::size_t pre_correct = 0;
  double acc_pre = 0.0;
  double acc_post = 0.0;
  double asr_strict = 0.0;  // pre-correct targets whose post label is wrong, over pre-correct
  double asr_loose = 0.0;   // post-incorrect targets over all targets
};

enum class CampaignStatus { ok, inapplicable };

struct CampaignReport {
  CampaignStatus status = CampaignStatus::ok;
  std::string reason;
  std::vector<TargetRecord> records;
  std::vector<CampaignMetrics> per_repeat;
  std::optional<CampaignMetrics> aggregate;  // mean over repeats
  std::vector<std::vector<NodePair>> global_flips;  // one set per repeat, global PRBCD only
  std::size_t victim_calls = 0;
  std::size_t query_budget_total = 0;  // sum of per-sample budgets, text attacks only
  double wall_clock_seconds = 0.0;
  nlohmann::json config;
};

/// Throws std::invalid_argument on empty records or no pre-correct target.
CampaignMetrics compute_metrics(std::span<const TargetRecord> records);
CampaignMetrics mean_metrics(std::span<const CampaignMetrics> metrics);

/// (before − after) / before.
double relative_drop(double before, double after);

/// Test nodes whose pre-attack prediction equals the true label.
/// `pre_predictions` is aligned with `test` and holds class indices.
std::vector<NodeId> correct_nodes(std::span<const int> pre_predictions, std::span<const NodeId> test,
                                  std::span<const int> labels);

/// Per repeat r, a uniform sample without replacement (seed hash_seed(seed, r))
/// of ceil(fraction · |correct|) originally-correct test nodes, or `count`
/// nodes when given. Each set is sorted.
std::vector<std::vector<NodeId>> sample_targets(std::span<const int> pre_predictions,
                                                std::span<const NodeId> test, std::span<const int> labels,
                                                double fraction, std::size_t repeats, std::uint64_t seed,
                                                std::optional<std::size_t> count = std::nullopt);

CampaignReport run_campaign(const CampaignConfig& cfg);

nlohmann::json summary_json(const CampaignReport& report);
std::string records_jsonl(const CampaignReport& report);
/// Writes summary.json and records.jsonl.
void save_report(const CampaignReport& report, const std::filesystem::path& dir);

}  // namespace trustglm
