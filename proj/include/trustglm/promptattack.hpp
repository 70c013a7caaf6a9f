#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace trustglm {

/// Raised when a dataset's prompts carry no candidate list, so label-set
/// attacks do not apply. Reported as a status, not a failure.
class AttackInapplicable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PoolExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kDefaultInstruction =
    "Please predict the most appropriate category for the paper. Choose from the following categories";

enum class PromptStyle { comma, newline_answer };

struct PromptTemplate {
  std::string instruction{kDefaultInstruction};
  std::vector<std::string> labels;
  PromptStyle style = PromptStyle::comma;

  /// Throws AttackInapplicable on an empty label list and
  /// std::invalid_argument on duplicates.
  void validate() const;
};

/// comma:          "<I>: l1, l2, ..., lm."
/// newline_answer: "<I>:\nl1\nl2\n...\nlm\nAnswer: "
std::string render_prompt(const PromptTemplate& prompt);

enum class TransformKind { identity, shuffle, in_noise, cross_noise };

std::string to_string(TransformKind kind);
TransformKind transform_kind_from_string(const std::string& name);

struct TransformedPrompt {
  std::vector<std::string> labels;
  TransformKind kind = TransformKind::identity;
  std::uint64_t seed = 0;
  std::string rendered;
};

TransformedPrompt identity_prompt(const PromptTemplate& base);

/// Seeded Fisher–Yates permutation of the label list.
std::vector<std::string> shuffled_labels(std::span<const std::string> labels, std::uint64_t seed);
TransformedPrompt shuffle_labels(const PromptTemplate& base, std::uint64_t seed);

enum class NoiseKind { in_domain, cross_domain };
enum class NoisePosition { front, after };

/// Validated at construction: the pool must be duplicate-free, the ratio
/// positive, and a cross-domain pool must not share any label with the
/// origin dataset's classes.
class NoiseSpec {
 public:
  NoiseSpec(NoiseKind kind, std::vector<std::string> pool, double ratio, NoisePosition position,
            std::uint64_t seed, std::span<const std::string> origin_labels);

  NoiseKind kind() const { return kind_; }
  const std::vector<std::string>& pool() const { return pool_; }
  double ratio() const { return ratio_; }
  NoisePosition position() const { return position_; }
  std::uint64_t seed() const { return seed_; }
  NoiseSpec with_seed(std::uint64_t seed) const;

  /// ceil(ratio * num_labels).
  std::size_t quota(std::size_t num_labels) const;

 private:
  NoiseKind kind_;
  std::vector<std::string> pool_;
  double ratio_;
  NoisePosition position_;
  std::uint64_t seed_;
};

/// Shuffles the pool with the spec's seed and takes the first quota entries
/// not already in the label list, placed before or after the originals.
TransformedPrompt inject_noise(const PromptTemplate& base, const NoiseSpec& spec);

/// Concatenated, de-duplicated pool; cross-domain pools drop every origin
/// label. Throws std::invalid_argument when the result is empty.
std::vector<std::string> build_noise_pool(NoiseKind kind, std::span<const std::string> origin_labels,
                                          std::span<const std::vector<std::string>> sources);

/// `count` labels drawn without replacement from a label file's contents.
std::vector<std::string> sample_labels(std::span<const std::string> labels, std::size_t count,
                                       std::uint64_t seed);

/// {"id","transform","seed","labels","rendered"}
std::string to_jsonl(const TransformedPrompt& prompt, std::int64_t id);

/// Reads a JSON array of strings.
std::vector<std::string> load_label_list(const std::string& path);

}  // namespace trustglm
