#pragma once

#include "trustglm/graph.hpp"
#include "trustglm/promptattack.hpp"
#include "trustglm/surrogate.hpp"
#include "trustglm/textattack.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace trustglm {

// ---------------------------------------------------------------------------
// Feature-space adversarial training

struct AdvTrainConfig {
  AdvMethod method = AdvMethod::fgsm;
  double epsilon = 1e-2;
  double alpha = 0.8;
  std::uint32_t num_steps = 10;  // pgd
  double step_size = 2.5e-4;     // pgd
  SurrogateKind kind = SurrogateKind::gcn2;
  TrainConfig base;

  void validate() const;
};

struct AdversarialLoss {
  double loss = 0.0;        // α·J(x) + (1−α)·J(x_adv)
  double clean_loss = 0.0;  // J(x)
  double adv_loss = 0.0;    // J(x_adv)
  Matrix x_adv;
  Matrix g1, g2;            // weight gradient, x_adv held constant
};

/// α·J(θ,x,y) + (1−α)·J(θ, x + ε·sign(∇_x J(θ,x,y))), with J the mean
/// cross-entropy over targets.
AdversarialLoss fgsm_adversarial_loss(const SurrogateModel& model, const SparseMatrix& a_hat,
                                      const Matrix& x, std::span<const int> labels,
                                      std::span<const NodeId> targets, double epsilon,
                                      double alpha);

/// Ascent steps of size step_size along sign(∇_x J), each followed by
/// projection onto the ℓ∞ ball of radius ε around x. Starts from x.
Matrix pgd_adversarial_example(const SurrogateModel& model, const SparseMatrix& a_hat,
                               const Matrix& x, std::span<const int> labels,
                               std::span<const NodeId> targets, double epsilon,
                               std::uint32_t num_steps, double step_size);

/// Same mixture as fgsm_adversarial_loss with x_adv supplied by the caller.
AdversarialLoss mixed_adversarial_loss(const SurrogateModel& model, const SparseMatrix& a_hat,
                                       const Matrix& x, const Matrix& x_adv,
                                       std::span<const int> labels,
                                       std::span<const NodeId> targets, double alpha);

/// Full-batch training on the mixed objective over the train split. With
/// α = 1 this is exactly train_surrogate.
SurrogateModel train_adversarial(const TextAttributedGraph& graph, const AdvTrainConfig& cfg);

// ---------------------------------------------------------------------------
// Text augmentation

struct TextSample {
  std::int64_t id = 0;
  std::string text;
  std::string label;
};

struct AugmentedDataset {
  std::vector<TextSample> clean;
  std::vector<TextSample> adversarial;  // successful attacks only, source labels kept

  std::size_t size() const { return clean.size() + adversarial.size(); }
};

using TextAttackRunner = std::function<TextAttackResult(const TextSample&)>;

/// Attacks every sample (concurrently when threads > 1; the runner must then
/// be thread-safe) and keeps the successes as extra training data.
AugmentedDataset augment_text_dataset(std::span<const TextSample> samples,
                                      const TextAttackRunner& attack, std::size_t threads = 1);

/// One {"id","text","label","origin"} object per line, clean samples first.
std::string to_jsonl(const AugmentedDataset& data);

// ---------------------------------------------------------------------------
// Prompt augmentation

struct PromptSample {
  std::int64_t id = 0;
  std::vector<std::string> labels;
};

enum class PromptAugmentMode { shuffle, noise };

struct PromptCorpusEntry {
  std::int64_t id = 0;
  TransformedPrompt prompt;
};

/// Independent transform per sample with seed hash_seed(seed, id). `style`
/// and `instruction` come from `format`; its labels are ignored. Noise mode
/// needs a spec; its seed is replaced per sample.
std::vector<PromptCorpusEntry> augment_prompt_corpus(std::span<const PromptSample> samples,
                                                     PromptAugmentMode mode,
                                                     const PromptTemplate& format,
                                                     const std::optional<NoiseSpec>& spec,
                                                     std::uint64_t seed);

std::string to_jsonl(std::span<const PromptCorpusEntry> corpus);

}  // namespace trustglm
