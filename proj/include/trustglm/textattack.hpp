#pragma once

#include "trustglm/graph.hpp"
#include "trustglm/query.hpp"
#include "trustglm/rng.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace trustglm {

// ---------------------------------------------------------------------------
// Tokenization: lowercase keys, words are maximal alphanumeric runs (bytes
// >= 0x80 count as word characters so UTF-8 words stay whole).

struct TokenizedText {
  std::vector<std::string> words;  // original spelling
  std::vector<std::string> keys;   // lowercased
  std::vector<std::string> gaps;   // words.size() + 1 separators

  /// Rebuilds the text with word i replaced by replacements[i] when that is
  /// non-empty. The first character's case follows the original word.
  std::string render(std::span<const std::string> replacements) const;
};

TokenizedText tokenize(const std::string& text);
std::vector<std::string> token_keys(const std::string& text);

// ---------------------------------------------------------------------------
// Embeddings

class EmbeddingVocab {
 public:
  /// rows of `vectors` are normalized here; synonyms are the top-k other
  /// words with cosine >= min_cos, most similar first, ties by index.
  EmbeddingVocab(std::vector<std::string> words, Matrix vectors, std::size_t k_synonyms,
                 double min_cos);

  std::size_t size() const { return words_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(vectors_.cols()); }
  std::optional<std::size_t> find(const std::string& key) const;
  const std::string& word(std::size_t i) const { return words_[i]; }
  auto vector(std::size_t i) const { return vectors_.row(static_cast<Eigen::Index>(i)); }
  const std::vector<std::size_t>& synonyms(std::size_t i) const { return synonyms_[i]; }
  std::size_t k_synonyms() const { return k_; }
  double min_cos() const { return min_cos_; }

 private:
  std::vector<std::string> words_;
  Matrix vectors_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<std::size_t>> synonyms_;
  std::size_t k_;
  double min_cos_;
};

/// GloVe-style text file: `word v1 ... vd` per line.
EmbeddingVocab load_embeddings(const std::filesystem::path& path, std::size_t k_synonyms = 50,
                               double min_cos = 0.5);

/// Cosine of mean-pooled in-vocabulary word vectors. A side with no
/// in-vocabulary word gives 0; identical token sequences give 1.
double text_similarity(const EmbeddingVocab& vocab, const std::string& a, const std::string& b);

// ---------------------------------------------------------------------------
// Attacks

struct TextAttackConfig {
  std::size_t query_budget = 1000;
  std::size_t population_size = 30;
  std::size_t iterations = 100;
  std::size_t max_restarts = 50;
  double lambda1 = 10.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  double step_size = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TextAttackResult {
  std::string original_text;
  std::optional<std::string> adversarial_text;
  std::string original_label;
  std::string adversarial_label;  // label from the final verification query
  bool success = false;
  std::size_t queries_used = 0;
  std::size_t words_changed = 0;
  double similarity = 0.0;
  /// HLBB: best similarity per iteration. TextHoaxer: best objective.
  std::vector<double> trace;
  double init_similarity = 0.0;
  double init_objective = 0.0;
  double objective = 0.0;
};

/// First adversarial candidate from up to max_restarts random substitution
/// rounds, substitution probability ramping 0.1 -> 1.0. Queries go through
/// `victim`; std::nullopt on failure (no substitutable word, restarts spent,
/// or budget exhausted).
std::optional<std::string> init_adversarial(QueryBudget& victim, const std::string& x,
                                            const std::string& y, const EmbeddingVocab& vocab,
                                            const TextAttackConfig& cfg, Rng& rng);

/// Population search maximizing similarity subject to the label flipping.
TextAttackResult hlbb(const LabelOracle& victim, const std::string& x, const std::string& y,
                      const EmbeddingVocab& vocab, const TextAttackConfig& cfg);

/// Perturbation-matrix descent on
///   λ1·(−sim) + λ2·Σ‖p_i‖² + λ3·Σ|γ_i|,  γ_i = ‖p_i‖,
/// keeping the lowest-objective candidate that stays adversarial.
TextAttackResult texthoaxer(const LabelOracle& victim, const std::string& x, const std::string& y,
                            const EmbeddingVocab& vocab, const TextAttackConfig& cfg);

/// The objective above from its ingredients.
double texthoaxer_loss(double similarity, std::span<const double> row_norms,
                       const TextAttackConfig& cfg);

/// The objective of x_adv relative to x (same tokenization length required).
double texthoaxer_objective(const EmbeddingVocab& vocab, const std::string& x,
                            const std::string& x_adv, const TextAttackConfig& cfg);

std::string to_json(const TextAttackResult& result);

}  // namespace trustglm
