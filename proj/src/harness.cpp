#include "trustglm/harness.hpp"

#include "trustglm/parallel.hpp"
#include "trustglm/promptattack.hpp"
#include "trustglm/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace trustglm {

using nlohmann::json;

std::string to_string(AttackVector vector) {
  switch (vector) {
    case AttackVector::structure: return "structure";
    case AttackVector::text: return "text";
    case AttackVector::prompt: return "prompt";
  }
  return "?";
}

AttackVector attack_vector_from_string(const std::string& name) {
  for (auto v : {AttackVector::structure, AttackVector::text, AttackVector::prompt})
    if (to_string(v) == name) return v;
  throw std::invalid_argument("unknown attack vector '" + name + "'");
}

namespace {

const std::vector<std::string>& attacks_for(AttackVector vector) {
  static const std::vector<std::string> structure{"identity", "random", "nettack", "prbcd"};
  static const std::vector<std::string> text{"identity", "hlbb", "texthoaxer"};
  static const std::vector<std::string> prompt{"identity", "shuffle", "in_noise", "cross_noise"};
  switch (vector) {
    case AttackVector::structure: return structure;
    case AttackVector::text: return text;
    case AttackVector::prompt: return prompt;
  }
  return structure;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty() || base.empty() || std::filesystem::path(p).is_absolute()) return p;
  return base / p;
}

}  // namespace

void CampaignConfig::validate() const {
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0))
    throw std::invalid_argument("sample_fraction must be in (0, 1]");
  if (repeats < 1) throw std::invalid_argument("repeats must be >= 1");
  if (targets_per_repeat && *targets_per_repeat < 1) throw std::invalid_argument("targets_per_repeat must be >= 1");
  if (!graph && dataset.empty()) throw std::invalid_argument("campaign needs a dataset");
  const auto& known = attacks_for(vector);
  if (std::find(known.begin(), known.end(), attack) == known.end())
    throw std::invalid_argument("unknown " + to_string(vector) + " attack '" + attack + "'");
  if (!attack_config.is_object()) throw std::invalid_argument("attack_config must be an object");
}

CampaignConfig campaign_config_from_json(const json& j, const std::filesystem::path& base) {
  CampaignConfig c;
  c.dataset = resolve(base, j.value("dataset", std::string{}));
  if (j.contains("victim")) {
    c.victim = victim_spec_from_json(j.at("victim"));
    c.victim.model_path = resolve(base, c.victim.model_path.string());
  }
  c.vector = attack_vector_from_string(j.value("vector", std::string("structure")));
  c.attack = j.value("attack", c.attack);
  c.attack_config = j.value("attack_config", json::object());
  if (c.attack_config.contains("embeddings"))
    c.attack_config["embeddings"] = resolve(base, c.attack_config["embeddings"].get<std::string>()).string();
  if (c.attack_config.contains("pool_files"))
    for (auto& f : c.attack_config["pool_files"]) f = resolve(base, f.get<std::string>()).string();
  c.surrogate_path = resolve(base, j.value("surrogate", std::string{}));
  c.sample_fraction = j.value("sample_fraction", c.sample_fraction);
  if (j.contains("targets_per_repeat") && !j.at("targets_per_repeat").is_null())
    c.targets_per_repeat = j.at("targets_per_repeat").get<std::size_t>();
  c.repeats = j.value("repeats", c.repeats);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  c.output_dir = resolve(base, j.value("output_dir", std::string{}));
  c.validate();
  return c;
}

json to_json(const CampaignConfig& cfg) {
  json j{{"dataset", cfg.dataset.string()},
         {"victim", to_json(cfg.victim)},
         {"vector", to_string(cfg.vector)},
         {"attack", cfg.attack},
         {"attack_config", cfg.attack_config},
         {"surrogate", cfg.surrogate_path.string()},
         {"sample_fraction", cfg.sample_fraction},
         {"targets_per_repeat", cfg.targets_per_repeat ? json(*cfg.targets_per_repeat) : json(nullptr)},
         {"repeats", cfg.repeats},
         {"seed", cfg.seed},
         {"threads", cfg.threads},
         {"output_dir", cfg.output_dir.string()}};
  return j;
}

// ---------------------------------------------------------------------------
// Metrics and sampling

CampaignMetrics compute_metrics(std::span<const TargetRecord> records) {
  if (records.empty()) throw std::invalid_argument("cannot compute metrics on no records");
  CampaignMetrics m;
  m.targets = records.size();
  std::size_t post_correct = 0, flipped = 0, post_wrong = 0;
  for (const auto& r : records) {
    const bool pre_ok = r.pre_label == r.true_label;
    const bool post_ok = r.post_label == r.true_label;
    m.pre_correct += pre_ok;
    post_correct += post_ok;
    flipped += pre_ok && !post_ok;
    post_wrong += !post_ok;
  }
  if (m.pre_correct == 0) throw std::invalid_argument("no originally-correct target: strict ASR is undefined");
  const auto n = static_cast<double>(m.targets);
  m.acc_pre = static_cast<double>(m.pre_correct) / n;
  m.asr_strict = static_cast<double>(flipped) / static_cast<double>(m.pre_correct);
  // On an all-correct sample post_correct = pre_correct − flipped, so the two
  // ratios agree; deriving one from the other keeps the identity exact in
  // floating point too.
  m.acc_post = m.pre_correct == m.targets ? 1.0 - m.asr_strict : static_cast<double>(post_correct) / n;
  m.asr_loose = static_cast<double>(post_wrong) / n;
  return m;
}

CampaignMetrics mean_metrics(std::span<const CampaignMetrics> metrics) {
  if (metrics.empty()) throw std::invalid_argument("cannot average no metrics");
  CampaignMetrics m;
  for (const auto& x : metrics) {
    m.targets += x.targets;
    m.pre_correct += x.pre_correct;
    m.acc_pre += x.acc_pre;
    m.acc_post += x.acc_post;
    m.asr_strict += x.asr_strict;
    m.asr_loose += x.asr_loose;
  }
  const auto k = static_cast<double>(metrics.size());
  m.acc_pre /= k;
  m.acc_post /= k;
  m.asr_strict /= k;
  m.asr_loose /= k;
  return m;
}

double relative_drop(double before, double after) {
  if (before == 0.0) throw std::invalid_argument("relative drop from zero");
  return (before - after) / before;
}

std::vector<NodeId> correct_nodes(std::span<const int> pre_predictions, std::span<const NodeId> test,
                                  std::span<const int> labels) {
  if (pre_predictions.size() != test.size())
    throw std::invalid_argument("pre_predictions must align with the test split");
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < test.size(); ++i)
    if (pre_predictions[i] == labels[static_cast<std::size_t>(test[i])]) out.push_back(test[i]);
  return out;
}

std::vector<std::vector<NodeId>> sample_targets(std::span<const int> pre_predictions,
                                                std::span<const NodeId> test, std::span<const int> labels,
                                                double fraction, std::size_t repeats, std::uint64_t seed,
                                                std::optional<std::size_t> count) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("fraction must be in (0, 1]");
  const auto correct = correct_nodes(pre_predictions, test, labels);
  if (correct.empty()) throw std::invalid_argument("no correctly classified test node to attack");
  std::size_t k = count ? *count : static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(correct.size()) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, correct.size());
  std::vector<std::vector<NodeId>> out;
  for (std::size_t r = 0; r < repeats; ++r) {
    auto pool = correct;
    Rng rng(hash_seed(seed, r));
    // Partial Fisher–Yates: the first k slots are a uniform k-subset.
    for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    out.push_back(std::move(pool));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Campaign

namespace {

int class_index(const TextAttributedGraph& g, const std::string& label) {
  const auto& c = g.classes();
  const auto it = std::find(c.begin(), c.end(), label);
  return it == c.end() ? -1 : static_cast<int>(it - c.begin());
}

std::size_t node_budget(const json& cfg, const TextAttributedGraph& g, NodeId v) {
  const auto b = cfg.value("budget", json("degree"));
  if (b.is_string()) {
    if (b.get<std::string>() != "degree") throw std::invalid_argument("budget must be an integer or \"degree\"");
    return std::max<std::size_t>(1, g.degree(v));
  }
  const auto n = b.get<std::int64_t>();
  if (n < 1) throw std::invalid_argument("budget must be >= 1");
  return static_cast<std::size_t>(n);
}

PrbcdConfig prbcd_config(const json& a) {
  PrbcdConfig p;
  p.block_size = a.value("block_size", p.block_size);
  p.learning_rate = a.value("learning_rate", p.learning_rate);
  p.epochs = a.value("epochs", p.epochs);
  p.resample_period = a.value("resample_period", p.resample_period);
  p.resample_fraction = a.value("resample_fraction", p.resample_fraction);
  p.num_samples = a.value("num_samples", p.num_samples);
  const auto loss = a.value("loss", std::string("margin"));
  if (loss == "margin") p.loss_kind = AttackLoss::margin;
  else if (loss == "cross_entropy") p.loss_kind = AttackLoss::cross_entropy;
  else throw std::invalid_argument("unknown PRBCD loss '" + loss + "'");
  const auto mode = a.value("mode", std::string("local"));
  if (mode == "local") p.mode = PrbcdMode::local;
  else if (mode == "global") p.mode = PrbcdMode::global;
  else throw std::invalid_argument("unknown PRBCD mode '" + mode + "'");
  return p;
}

TextAttackConfig text_config(const json& a, std::size_t budget) {
  TextAttackConfig t;
  t.query_budget = budget;
  t.population_size = a.value("population_size", t.population_size);
  t.iterations = a.value("iterations", t.iterations);
  t.max_restarts = a.value("max_restarts", t.max_restarts);
  t.step_size = a.value("step_size", t.step_size);
  if (a.contains("lambda")) {
    const auto l = a.at("lambda").get<std::vector<double>>();
    if (l.size() != 3) throw std::invalid_argument("lambda needs three weights");
    t.lambda1 = l[0];
    t.lambda2 = l[1];
    t.lambda3 = l[2];
  }
  t.validate();
  return t;
}

PromptTemplate prompt_template(const json& a, const TextAttributedGraph& g) {
  PromptTemplate t;
  t.instruction = a.value("instruction", t.instruction);
  const auto style = a.value("style", std::string("comma"));
  if (style == "comma") t.style = PromptStyle::comma;
  else if (style == "newline_answer") t.style = PromptStyle::newline_answer;
  else throw std::invalid_argument("unknown prompt style '" + style + "'");
  t.labels = a.value("labels", g.classes());
  t.validate();
  return t;
}

std::optional<NoiseSpec> noise_spec(const std::string& attack, const json& a, const PromptTemplate& t) {
  if (attack != "in_noise" && attack != "cross_noise") return std::nullopt;
  const auto kind = attack == "in_noise" ? NoiseKind::in_domain : NoiseKind::cross_domain;
  std::vector<std::vector<std::string>> sources;
  if (a.contains("pool")) sources.push_back(a.at("pool").get<std::vector<std::string>>());
  for (const auto& f : a.value("pool_files", json::array())) sources.push_back(load_label_list(f.get<std::string>()));
  if (sources.empty()) throw std::invalid_argument("noise attacks need \"pool\" or \"pool_files\"");
  auto pool = build_noise_pool(kind, t.labels, sources);
  const auto where = a.value("position", std::string(kind == NoiseKind::in_domain ? "front" : "after"));
  if (where != "front" && where != "after") throw std::invalid_argument("position must be front or after");
  return NoiseSpec(kind, std::move(pool), a.value("ratio", 0.5),
                   where == "front" ? NoisePosition::front : NoisePosition::after, 0, t.labels);
}

std::size_t moved_positions(std::span<const std::string> a, std::span<const std::string> b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += i >= b.size() || a[i] != b[i];
  return n;
}

class Campaign {
 public:
  explicit Campaign(const CampaignConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    graph_ = cfg.graph ? cfg.graph : std::make_shared<const TextAttributedGraph>(load_dataset(cfg.dataset));
    surrogate_ = cfg.surrogate;
    if (!surrogate_ && !cfg.surrogate_path.empty())
      surrogate_ = std::make_shared<const SurrogateModel>(load_model(cfg.surrogate_path));
    if (cfg_.victim.kind == VictimKind::inprocess_surrogate) {
      // Without its own model the in-process victim is the surrogate itself.
      if (!cfg_.victim.model && cfg_.victim.model_path.empty()) cfg_.victim.model = surrogate_;
      if (!surrogate_) {
        surrogate_ = cfg_.victim.model;
        if (!surrogate_ && !cfg_.victim.model_path.empty())
          surrogate_ = std::make_shared<const SurrogateModel>(load_model(cfg_.victim.model_path));
      }
    }
    if (cfg_.vector == AttackVector::structure && (cfg_.attack == "nettack" || cfg_.attack == "prbcd") && !surrogate_)
      throw std::invalid_argument(cfg_.attack + " needs a surrogate model");
    if (cfg_.vector == AttackVector::text && cfg_.attack != "identity") {
      vocab_ = cfg.vocab;
      if (!vocab_) {
        const auto path = cfg_.attack_config.value("embeddings", std::string{});
        if (path.empty()) throw std::invalid_argument("text attacks need an embeddings file");
        vocab_ = std::make_shared<const EmbeddingVocab>(load_embeddings(
            path, cfg_.attack_config.value("k", std::size_t{50}), cfg_.attack_config.value("min_cos", 0.5)));
      }
      text_cfg_ = text_config(cfg_.attack_config, cfg_.victim.query_budget);
    }
  }

  CampaignReport run() {
    const auto start = std::chrono::steady_clock::now();
    CampaignReport report;
    report.config = to_json(cfg_);
    try {
      if (cfg_.vector == AttackVector::prompt) {
        prompt_ = prompt_template(cfg_.attack_config, *graph_);
        noise_ = noise_spec(cfg_.attack, cfg_.attack_config, *prompt_);
      }
      VictimSpec spec = cfg_.victim;
      victim_ = open_victim(spec, graph_);
      execute(report);
    } catch (const AttackInapplicable& e) {
      report = CampaignReport{};
      report.config = to_json(cfg_);
      report.status = CampaignStatus::inapplicable;
      report.reason = e.what();
    }
    if (victim_) report.victim_calls = victim_->calls();
    report.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!cfg_.output_dir.empty()) save_report(report, cfg_.output_dir);
    return report;
  }

 private:
  VictimQuery clean_query(NodeId v) const {
    switch (cfg_.vector) {
      case AttackVector::structure: return NodeQuery{v, {}};
      case AttackVector::text: return TextQuery{graph_->texts()[static_cast<std::size_t>(v)], v};
      case AttackVector::prompt: return PromptQuery{render_prompt(*prompt_), v, prompt_->labels};
    }
    return NodeQuery{v, {}};
  }

  void execute(CampaignReport& report) {
    const auto& test = graph_->split().test;
    if (test.empty()) throw std::invalid_argument("dataset has no test nodes");
    // Pre-attack predictions, once for all repeats.
    std::vector<std::string> pre(test.size());
    parallel_for(test.size(), cfg_.threads, [&](std::size_t i) { pre[i] = victim_->classify(clean_query(test[i])); });
    std::vector<int> pre_index(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      pre_index[i] = class_index(*graph_, pre[i]);
      pre_label_[test[i]] = pre[i];
    }
    const auto sets = sample_targets(pre_index, test, graph_->labels(), cfg_.sample_fraction, cfg_.repeats,
                                     cfg_.seed, cfg_.targets_per_repeat);
    for (std::size_t r = 0; r < sets.size(); ++r) {
      std::vector<TargetRecord> records(sets[r].size());
      std::optional<std::vector<NodePair>> shared_flips;
      if (cfg_.vector == AttackVector::structure && cfg_.attack == "prbcd" &&
          prbcd_config(cfg_.attack_config).mode == PrbcdMode::global) {
        // One perturbed graph for the whole test split; targets are evaluated on it.
        shared_flips = global_prbcd(test, r);
        report.global_flips.push_back(*shared_flips);
      }
      parallel_for(sets[r].size(), cfg_.threads, [&](std::size_t i) {
        records[i] = attack_one(sets[r][i], r, shared_flips ? &*shared_flips : nullptr);
      });
      if (cfg_.vector == AttackVector::text) report.query_budget_total += sets[r].size() * text_cfg_.query_budget;
      report.per_repeat.push_back(compute_metrics(records));
      report.records.insert(report.records.end(), records.begin(), records.end());
    }
    report.aggregate = mean_metrics(report.per_repeat);
  }

  std::vector<NodePair> global_prbcd(std::span<const NodeId> targets, std::size_t repeat) const {
    auto p = prbcd_config(cfg_.attack_config);
    const auto b = cfg_.attack_config.value("budget", json(nullptr));
    // Default global budget: 5% of the edges.
    p.budget = b.is_number_integer() ? b.get<std::size_t>()
                                     : std::max<std::size_t>(1, static_cast<std::size_t>(
                                                                    std::ceil(0.05 * static_cast<double>(graph_->num_edges()))));
    p.seed = hash_seed(cfg_.seed, repeat);
    return prbcd(*graph_, *surrogate_, targets, p).flips.flips();
  }

  TargetRecord attack_one(NodeId v, std::size_t repeat, const std::vector<NodePair>* shared_flips) const {
    TargetRecord rec;
    rec.repeat = repeat;
    rec.id = v;
    rec.pre_label = pre_label_.at(v);
    rec.true_label = graph_->classes()[static_cast<std::size_t>(graph_->labels()[static_cast<std::size_t>(v)])];
    const auto seed = hash_seed(cfg_.seed, static_cast<std::uint64_t>(v));
    switch (cfg_.vector) {
      case AttackVector::structure: {
        std::vector<NodePair> flips;
        if (shared_flips) {
          flips = *shared_flips;
        } else if (cfg_.attack == "nettack") {
          NettackConfig n;
          n.seed = seed;
          if (cfg_.attack_config.contains("budget")) n.budget = node_budget(cfg_.attack_config, *graph_, v);
          flips = nettack(*graph_, *surrogate_, v, n).flips.flips();
        } else if (cfg_.attack == "random") {
          Rng rng(seed);
          const NodeId t[] = {v};
          flips = random_flip_baseline(*graph_, t, node_budget(cfg_.attack_config, *graph_, v), rng).flips();
        } else if (cfg_.attack == "prbcd") {
          auto p = prbcd_config(cfg_.attack_config);
          p.budget = node_budget(cfg_.attack_config, *graph_, v);
          p.seed = seed;
          const NodeId t[] = {v};
          flips = prbcd(*graph_, *surrogate_, t, p).flips.flips();
        }
        rec.edits = flips.size();
        rec.post_label = victim_->classify(NodeQuery{v, std::move(flips)});
        rec.queries = 1;
        break;
      }
      case AttackVector::text: {
        const auto& x = graph_->texts()[static_cast<std::size_t>(v)];
        if (cfg_.attack == "identity") {
          rec.post_label = victim_->classify(TextQuery{x, v});
          rec.queries = 1;
          break;
        }
        auto t = text_cfg_;
        t.seed = seed;
        LabelOracle oracle = [this, v](const std::string& text) { return victim_->classify(TextQuery{text, v}); };
        const auto res = cfg_.attack == "hlbb" ? hlbb(oracle, x, rec.pre_label, *vocab_, t)
                                               : texthoaxer(oracle, x, rec.pre_label, *vocab_, t);
        rec.post_label = res.success ? res.adversarial_label : rec.pre_label;
        rec.queries = res.queries_used;
        rec.edits = res.words_changed;
        break;
      }
      case AttackVector::prompt: {
        TransformedPrompt tp = cfg_.attack == "shuffle"   ? shuffle_labels(*prompt_, seed)
                               : cfg_.attack == "identity" ? identity_prompt(*prompt_)
                                                           : inject_noise(*prompt_, noise_->with_seed(seed));
        rec.edits = cfg_.attack == "shuffle" ? moved_positions(prompt_->labels, tp.labels)
                                             : tp.labels.size() - prompt_->labels.size();
        rec.post_label = victim_->classify(PromptQuery{tp.rendered, v, tp.labels});
        rec.queries = 1;
        break;
      }
    }
    rec.success = rec.post_label != rec.true_label;
    return rec;
  }

  CampaignConfig cfg_;
  std::shared_ptr<const TextAttributedGraph> graph_;
  std::shared_ptr<const SurrogateModel> surrogate_;
  std::shared_ptr<const EmbeddingVocab> vocab_;
  TextAttackConfig text_cfg_;
  std::optional<PromptTemplate> prompt_;
  std::optional<NoiseSpec> noise_;
  std::shared_ptr<Victim> victim_;
  std::unordered_map<NodeId, std::string> pre_label_;
};

json metrics_json(const CampaignMetrics& m) {
  return {{"targets", m.targets},   {"pre_correct", m.pre_correct}, {"acc_pre", m.acc_pre},
          {"acc_post", m.acc_post}, {"asr_strict", m.asr_strict},   {"asr_loose", m.asr_loose}};
}

}  // namespace

CampaignReport run_campaign(const CampaignConfig& cfg) { return Campaign(cfg).run(); }

json summary_json(const CampaignReport& report) {
  json j{{"status", report.status == CampaignStatus::ok ? "ok" : "inapplicable"},
         {"config", report.config},
         {"victim_calls", report.victim_calls},
         {"wall_clock_seconds", report.wall_clock_seconds}};
  if (!report.reason.empty()) j["reason"] = report.reason;
  if (report.query_budget_total) j["query_budget_total"] = report.query_budget_total;
  j["per_repeat"] = json::array();
  for (const auto& m : report.per_repeat) j["per_repeat"].push_back(metrics_json(m));
  if (report.aggregate) j["aggregate"] = metrics_json(*report.aggregate);
  if (!report.global_flips.empty()) {
    j["global_flips"] = json::array();
    for (const auto& set : report.global_flips) {
      json flips = json::array();
      for (const auto& f : set) flips.push_back({f.u, f.v});
      j["global_flips"].push_back(flips);
    }
  }
  return j;
}

std::string records_jsonl(const CampaignReport& report) {
  std::ostringstream out;
  for (const auto& r : report.records)
    out << json{{"repeat", r.repeat},         {"id", r.id},           {"pre_label", r.pre_label},
                {"post_label", r.post_label}, {"true_label", r.true_label}, {"success", r.success},
                {"queries", r.queries},       {"edits", r.edits}}
               .dump()
        << '\n';
  return out.str();
}

void save_report(const CampaignReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream summary(dir / "summary.json");
  summary << summary_json(report).dump(2) << '\n';
  std::ofstream records(dir / "records.jsonl");
  records << records_jsonl(report);
  if (!summary || !records) throw std::runtime_error("cannot write report to " + dir.string());
}

}  // namespace trustglm
