#include "trustglm/defense.hpp"

#include "trustglm/parallel.hpp"
#include "trustglm/rng.hpp"

#include "json.hpp"

#include <cmath>
#include <sstream>

namespace trustglm {

using nlohmann::json;

void AdvTrainConfig::validate() const {
  base.validate();
  if (method == AdvMethod::none) throw std::invalid_argument("adversarial training needs fgsm or pgd");
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must be in [0,1]");
  if (method == AdvMethod::pgd) {
    if (num_steps < 1) throw std::invalid_argument("pgd needs num_steps >= 1");
    if (!(step_size > 0.0)) throw std::invalid_argument("pgd needs step_size > 0");
  }
}

namespace {

Matrix sign(const Matrix& g) {
  return g.unaryExpr([](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); });
}

}  // namespace

AdversarialLoss mixed_adversarial_loss(const SurrogateModel& model, const SparseMatrix& a_hat,
                                       const Matrix& x, const Matrix& x_adv,
                                       std::span<const int> labels,
                                       std::span<const NodeId> targets, double alpha) {
  const auto clean = grad_wrt_weights(model, a_hat, x, targets, labels);
  const auto adv = grad_wrt_weights(model, a_hat, x_adv, targets, labels);
  AdversarialLoss out;
  out.clean_loss = clean.loss;
  out.adv_loss = adv.loss;
  out.loss = alpha * clean.loss + (1.0 - alpha) * adv.loss;
  out.g1 = alpha * clean.g1 + (1.0 - alpha) * adv.g1;
  if (clean.g2.size()) out.g2 = alpha * clean.g2 + (1.0 - alpha) * adv.g2;
  out.x_adv = x_adv;
  return out;
}

AdversarialLoss fgsm_adversarial_loss(const SurrogateModel& model, const SparseMatrix& a_hat,
                                      const Matrix& x, std::span<const int> labels,
                                      std::span<const NodeId> targets, double epsilon,
                                      double alpha) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("fgsm epsilon must be > 0");
  const auto fg = grad_wrt_features(model, a_hat, x, targets, labels);
  const Matrix x_adv = x + epsilon * sign(fg.grad);
  return mixed_adversarial_loss(model, a_hat, x, x_adv, labels, targets, alpha);
}

Matrix pgd_adversarial_example(const SurrogateModel& model, const SparseMatrix& a_hat,
                               const Matrix& x, std::span<const int> labels,
                               std::span<const NodeId> targets, double epsilon,
                               std::uint32_t num_steps, double step_size) {
  if (num_steps < 1) throw std::invalid_argument("pgd needs num_steps >= 1");
  Matrix xt = x;
  for (std::uint32_t s = 0; s < num_steps; ++s) {
    const auto fg = grad_wrt_features(model, a_hat, xt, targets, labels);
    xt += step_size * sign(fg.grad);
    xt = xt.array().max(x.array() - epsilon).min(x.array() + epsilon).matrix();
  }
  return xt;
}

SurrogateModel train_adversarial(const TextAttributedGraph& graph, const AdvTrainConfig& cfg) {
  cfg.validate();
  const auto& train = graph.split().train;
  const auto& x = graph.features();
  const auto& labels = graph.labels();
  WeightObjective objective;
  if (cfg.alpha == 1.0) {
    // The adversarial term has zero weight: identical arithmetic to clean training.
    objective = [&](const SurrogateModel& m, const SparseMatrix& a_hat) {
      return grad_wrt_weights(m, a_hat, x, train, labels);
    };
  } else {
    objective = [&](const SurrogateModel& m, const SparseMatrix& a_hat) {
      const auto adv = cfg.method == AdvMethod::fgsm
                           ? fgsm_adversarial_loss(m, a_hat, x, labels, train, cfg.epsilon, cfg.alpha)
                           : mixed_adversarial_loss(
                                 m, a_hat, x,
                                 pgd_adversarial_example(m, a_hat, x, labels, train, cfg.epsilon,
                                                         cfg.num_steps, cfg.step_size),
                                 labels, train, cfg.alpha);
      return WeightGradient{adv.loss, adv.g1, adv.g2};
    };
  }
  auto model = fit_surrogate(graph, cfg.base, cfg.kind, objective);
  model.adversarial = {cfg.method, cfg.epsilon, cfg.alpha,
                       cfg.method == AdvMethod::pgd ? cfg.num_steps : 0,
                       cfg.method == AdvMethod::pgd ? cfg.step_size : 0.0};
  return model;
}

// ---------------------------------------------------------------------------

AugmentedDataset augment_text_dataset(std::span<const TextSample> samples,
                                      const TextAttackRunner& attack, std::size_t threads) {
  std::vector<std::optional<TextSample>> found(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const auto r = attack(samples[i]);
    if (r.success && r.adversarial_text)
      found[i] = TextSample{samples[i].id, *r.adversarial_text, samples[i].label};
  });
  AugmentedDataset out;
  out.clean.assign(samples.begin(), samples.end());
  for (auto& f : found)
    if (f) out.adversarial.push_back(std::move(*f));
  return out;
}

std::string to_jsonl(const AugmentedDataset& data) {
  std::ostringstream out;
  auto emit = [&](const TextSample& s, const char* origin) {
    out << json{{"id", s.id}, {"text", s.text}, {"label", s.label}, {"origin", origin}}.dump() << '\n';
  };
  for (const auto& s : data.clean) emit(s, "clean");
  for (const auto& s : data.adversarial) emit(s, "adversarial");
  return out.str();
}

std::vector<PromptCorpusEntry> augment_prompt_corpus(std::span<const PromptSample> samples,
                                                     PromptAugmentMode mode,
                                                     const PromptTemplate& format,
                                                     const std::optional<NoiseSpec>& spec,
                                                     std::uint64_t seed) {
  if (mode == PromptAugmentMode::noise && !spec)
    throw std::invalid_argument("noise augmentation needs a noise spec");
  std::vector<PromptCorpusEntry> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    PromptTemplate t = format;
    t.labels = s.labels;
    const auto sample_seed = hash_seed(seed, static_cast<std::uint64_t>(s.id));
    out.push_back({s.id, mode == PromptAugmentMode::shuffle ? shuffle_labels(t, sample_seed)
                                                            : inject_noise(t, spec->with_seed(sample_seed))});
  }
  return out;
}

std::string to_jsonl(std::span<const PromptCorpusEntry> corpus) {
  std::string out;
  for (const auto& e : corpus) out += to_jsonl(e.prompt, e.id) + "\n";
  return out;
}

}  // namespace trustglm
