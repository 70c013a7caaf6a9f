#include "trustglm/promptattack.hpp"

#include "trustglm/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

namespace trustglm {

using nlohmann::json;

namespace {

bool has_duplicates(std::span<const std::string> items) {
  std::unordered_set<std::string> seen;
  for (const auto& s : items)
    if (!seen.insert(s).second) return true;
  return false;
}

}  // namespace

void PromptTemplate::validate() const {
  if (labels.empty()) throw AttackInapplicable("prompt has no candidate labels");
  if (has_duplicates(labels)) throw std::invalid_argument("prompt labels contain duplicates");
}

std::string render_prompt(const PromptTemplate& prompt) {
  prompt.validate();
  std::string out = prompt.instruction;
  if (prompt.style == PromptStyle::comma) {
    out += ": ";
    for (std::size_t i = 0; i < prompt.labels.size(); ++i) {
      if (i) out += ", ";
      out += prompt.labels[i];
    }
    out += ".";
  } else {
    out += ":";
    for (const auto& l : prompt.labels) out += "\n" + l;
    out += "\nAnswer: ";
  }
  return out;
}

std::string to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::identity: return "identity";
    case TransformKind::shuffle: return "shuffle";
    case TransformKind::in_noise: return "in_noise";
    case TransformKind::cross_noise: return "cross_noise";
  }
  return "identity";
}

TransformKind transform_kind_from_string(const std::string& name) {
  for (auto k : {TransformKind::identity, TransformKind::shuffle, TransformKind::in_noise,
                 TransformKind::cross_noise})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown prompt transform '" + name + "'");
}

namespace {

TransformedPrompt make(const PromptTemplate& base, std::vector<std::string> labels,
                       TransformKind kind, std::uint64_t seed) {
  PromptTemplate t = base;
  t.labels = std::move(labels);
  TransformedPrompt out;
  out.rendered = render_prompt(t);
  out.labels = std::move(t.labels);
  out.kind = kind;
  out.seed = seed;
  return out;
}

}  // namespace

TransformedPrompt identity_prompt(const PromptTemplate& base) {
  return make(base, base.labels, TransformKind::identity, 0);
}

std::vector<std::string> shuffled_labels(std::span<const std::string> labels, std::uint64_t seed) {
  std::vector<std::string> out(labels.begin(), labels.end());
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(out));
  return out;
}

TransformedPrompt shuffle_labels(const PromptTemplate& base, std::uint64_t seed) {
  base.validate();
  return make(base, shuffled_labels(base.labels, seed), TransformKind::shuffle, seed);
}

NoiseSpec::NoiseSpec(NoiseKind kind, std::vector<std::string> pool, double ratio,
                     NoisePosition position, std::uint64_t seed,
                     std::span<const std::string> origin_labels)
    : kind_(kind), pool_(std::move(pool)), ratio_(ratio), position_(position), seed_(seed) {
  if (!(ratio_ > 0.0) || !std::isfinite(ratio_)) throw std::invalid_argument("noise ratio must be > 0");
  if (has_duplicates(pool_)) throw std::invalid_argument("noise pool contains duplicates");
  if (kind_ == NoiseKind::cross_domain) {
    const std::unordered_set<std::string> origin(origin_labels.begin(), origin_labels.end());
    for (const auto& l : pool_)
      if (origin.count(l))
        throw std::invalid_argument("cross-domain pool shares label '" + l + "' with the origin domain");
  }
}

NoiseSpec NoiseSpec::with_seed(std::uint64_t seed) const {
  NoiseSpec copy = *this;
  copy.seed_ = seed;
  return copy;
}

std::size_t NoiseSpec::quota(std::size_t num_labels) const {
  // The small slack keeps products like 0.1 * 30 from rounding up.
  return static_cast<std::size_t>(std::ceil(ratio_ * static_cast<double>(num_labels) - 1e-9));
}

TransformedPrompt inject_noise(const PromptTemplate& base, const NoiseSpec& spec) {
  base.validate();
  const std::unordered_set<std::string> present(base.labels.begin(), base.labels.end());
  if (spec.kind() == NoiseKind::cross_domain)
    for (const auto& l : spec.pool())
      if (present.count(l))
        throw std::invalid_argument("cross-domain pool shares label '" + l + "' with the prompt");
  const auto quota = spec.quota(base.labels.size());
  const auto pool = shuffled_labels(spec.pool(), spec.seed());
  std::vector<std::string> noise;
  for (const auto& l : pool) {
    if (noise.size() == quota) break;
    if (!present.count(l)) noise.push_back(l);
  }
  if (noise.size() < quota)
    throw PoolExhausted("noise pool exhausted: need " + std::to_string(quota) + " labels, found " +
                        std::to_string(noise.size()));
  std::vector<std::string> labels;
  if (spec.position() == NoisePosition::front) {
    labels = std::move(noise);
    labels.insert(labels.end(), base.labels.begin(), base.labels.end());
  } else {
    labels = base.labels;
    labels.insert(labels.end(), noise.begin(), noise.end());
  }
  const auto kind = spec.kind() == NoiseKind::in_domain ? TransformKind::in_noise : TransformKind::cross_noise;
  return make(base, std::move(labels), kind, spec.seed());
}

std::vector<std::string> build_noise_pool(NoiseKind kind, std::span<const std::string> origin_labels,
                                          std::span<const std::vector<std::string>> sources) {
  if (sources.empty()) throw std::invalid_argument("no noise sources given");
  const std::unordered_set<std::string> origin(origin_labels.begin(), origin_labels.end());
  std::unordered_set<std::string> seen;
  std::vector<std::string> pool;
  for (const auto& src : sources) {
    if (src.empty()) throw std::invalid_argument("empty noise source list");
    for (const auto& l : src) {
      if (kind == NoiseKind::cross_domain && origin.count(l)) continue;
      if (seen.insert(l).second) pool.push_back(l);
    }
  }
  if (pool.empty()) throw std::invalid_argument("noise pool is empty");
  return pool;
}

std::vector<std::string> sample_labels(std::span<const std::string> labels, std::size_t count,
                                       std::uint64_t seed) {
  std::vector<std::string> unique;
  std::unordered_set<std::string> seen;
  for (const auto& l : labels)
    if (seen.insert(l).second) unique.push_back(l);
  if (unique.size() < count)
    throw std::invalid_argument("need " + std::to_string(count) + " labels, have " + std::to_string(unique.size()));
  auto out = shuffled_labels(unique, seed);
  out.resize(count);
  return out;
}

std::string to_jsonl(const TransformedPrompt& prompt, std::int64_t id) {
  json j{{"id", id},
         {"transform", to_string(prompt.kind)},
         {"seed", prompt.seed},
         {"labels", prompt.labels},
         {"rendered", prompt.rendered}};
  return j.dump();
}

std::vector<std::string> load_label_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open label list " + path);
  const auto j = json::parse(in);
  if (!j.is_array()) throw std::runtime_error(path + ": expected a JSON array of strings");
  return j.get<std::vector<std::string>>();
}

}  // namespace trustglm
