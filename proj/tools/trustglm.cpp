#include "trustglm/defense.hpp"
#include "trustglm/harness.hpp"
#include "trustglm/promptattack.hpp"
#include "trustglm/structattack.hpp"
#include "trustglm/surrogate.hpp"
#include "trustglm/textattack.hpp"
#include "trustglm/victim.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>

using namespace trustglm;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

double split_accuracy(Victim& victim, const TextAttributedGraph& g, std::span<const NodeId> nodes) {
  if (nodes.empty()) return 0.0;
  std::size_t hit = 0;
  for (NodeId v : nodes)
    hit += victim.classify(NodeQuery{v, {}}) == g.classes()[static_cast<std::size_t>(g.labels()[static_cast<std::size_t>(v)])];
  return static_cast<double>(hit) / static_cast<double>(nodes.size());
}

void print_metrics(const json& summary) {
  std::cout << "status: " << summary.at("status").get<std::string>();
  if (summary.contains("reason")) std::cout << " (" << summary.at("reason").get<std::string>() << ")";
  std::cout << '\n';
  if (!summary.contains("aggregate")) return;
  auto row = [](const std::string& name, const json& m) {
    std::cout << std::left << std::setw(10) << name << std::right << std::fixed << std::setprecision(4)
              << " targets " << std::setw(5) << m.at("targets").get<std::size_t>() << "  acc_pre "
              << m.at("acc_pre").get<double>() << "  acc_post " << m.at("acc_post").get<double>()
              << "  asr_strict " << m.at("asr_strict").get<double>() << "  asr_loose "
              << m.at("asr_loose").get<double>() << '\n';
  };
  std::size_t r = 0;
  for (const auto& m : summary.at("per_repeat")) row("repeat " + std::to_string(r++), m);
  row("mean", summary.at("aggregate"));
}

// Keys of a JSON object become "--key value" arguments unless already given.
std::vector<std::string> expand_config(std::vector<std::string> args, const json& doc) {
  for (const auto& [key, value] : doc.items()) {
    const auto flag = "--" + key;
    bool given = false;
    for (const auto& a : args) given |= a == flag || a.rfind(flag + "=", 0) == 0;
    if (given) continue;
    auto push = [&](const json& v) {
      args.push_back(flag);
      args.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    };
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
    } else if (value.is_array()) {
      for (const auto& v : value) push(v);
    } else {
      push(value);
    }
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trustglm: attacks and defenses for text-attributed graph classifiers"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, out;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON config (campaign for attack/evaluate, option defaults otherwise)");
  app.add_option("--seed", seed, "random seed");
  app.add_option("--out", out, "output path");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "validate a dataset directory and print its statistics");
  std::string dataset;
  ingest->add_option("dataset", dataset, "dataset directory")->required();

  // train-surrogate
  auto* train = app.add_subcommand("train-surrogate", "train an SGC or GCN surrogate");
  std::string kind = "gcn2";
  TrainConfig tc;
  train->add_option("--dataset", dataset)->required();
  train->add_option("--kind", kind, "sgc or gcn2");
  train->add_option("--epochs", tc.epochs);
  train->add_option("--lr", tc.learning_rate);
  train->add_option("--hidden", tc.hidden_dim);
  train->add_option("--weight-decay", tc.weight_decay);

  // attack
  auto* attack = app.add_subcommand("attack", "run an attack campaign");
  attack->require_subcommand(1);
  std::string attack_name, surrogate_path;
  std::optional<double> fraction;
  std::optional<std::size_t> repeats, threads, targets;
  for (const char* v : {"structure", "text", "prompt"}) {
    auto* sub = attack->add_subcommand(v, std::string(v) + " attack campaign");
    sub->add_option("--attack", attack_name, "attack name (overrides the config)");
    sub->add_option("--dataset", dataset, "dataset directory (overrides the config)");
    sub->add_option("--surrogate", surrogate_path, "surrogate model (overrides the config)");
    sub->add_option("--fraction", fraction, "fraction of correct test nodes per repeat");
    sub->add_option("--targets", targets, "fixed number of targets per repeat");
    sub->add_option("--repeats", repeats);
    sub->add_option("--threads", threads);
  }

  // defend
  auto* defend = app.add_subcommand("defend", "train or build a defense");
  defend->require_subcommand(1);
  AdvTrainConfig ac;
  std::string samples_path, embeddings, victim_path, text_attack = "hlbb", mode = "shuffle", style = "comma",
                                                     position, noise_kind_name = "in_domain", fit_mock, instruction{kDefaultInstruction};
  std::vector<std::string> pool, pool_files;
  double ratio = 0.5;
  std::size_t copies = 1, budget = 1000, aug_threads = 1;
  for (const char* m : {"fgsm", "pgd"}) {
    auto* sub = defend->add_subcommand(m, std::string(m) + " adversarial training of a surrogate");
    sub->add_option("--dataset", dataset)->required();
    sub->add_option("--kind", kind, "sgc or gcn2");
    sub->add_option("--epsilon", ac.epsilon);
    sub->add_option("--alpha", ac.alpha);
    sub->add_option("--epochs", ac.base.epochs);
    sub->add_option("--lr", ac.base.learning_rate);
    sub->add_option("--hidden", ac.base.hidden_dim);
    if (std::string(m) == "pgd") {
      sub->add_option("--steps", ac.num_steps);
      sub->add_option("--step-size", ac.step_size);
    }
  }
  auto* text_aug = defend->add_subcommand("text-augment", "attack training texts and keep the successes");
  text_aug->add_option("--samples", samples_path, "JSONL with id, text, label")->required();
  text_aug->add_option("--embeddings", embeddings)->required();
  text_aug->add_option("--victim", victim_path, "victim spec JSON")->required();
  text_aug->add_option("--dataset", dataset, "dataset for in-process victims");
  text_aug->add_option("--attack", text_attack, "hlbb or texthoaxer");
  text_aug->add_option("--budget", budget, "queries per sample");
  text_aug->add_option("--threads", aug_threads);
  auto* prompt_aug = defend->add_subcommand("prompt-augment", "label-order/noise augmented prompt corpus");
  prompt_aug->add_option("--dataset", dataset)->required();
  prompt_aug->add_option("--mode", mode, "shuffle or noise");
  prompt_aug->add_option("--style", style, "comma or newline_answer");
  prompt_aug->add_option("--instruction", instruction);
  prompt_aug->add_option("--pool", pool, "noise labels");
  prompt_aug->add_option("--pool-file", pool_files, "JSON label lists");
  prompt_aug->add_option("--noise-kind", noise_kind_name, "in_domain or cross_domain");
  prompt_aug->add_option("--ratio", ratio);
  prompt_aug->add_option("--position", position, "front or after");
  prompt_aug->add_option("--copies", copies, "transformed copies per training node");
  prompt_aug->add_option("--fit-mock", fit_mock, "also write a mock victim spec fitted on the corpus");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "clean accuracy of a victim, or an identity campaign");
  std::string model_path;
  evaluate->add_option("--dataset", dataset);
  evaluate->add_option("--model", model_path, "surrogate model file");

  // report
  auto* report = app.add_subcommand("report", "print a saved campaign report");
  std::string report_dir;
  report->add_option("dir", report_dir)->required();

  // A --config for the non-campaign commands supplies option defaults.
  std::vector<std::string> args(argv + 1, argv + argc);
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] != "--config") continue;
    const bool campaign = std::find(args.begin(), args.end(), "attack") != args.end() ||
                          std::find(args.begin(), args.end(), "evaluate") != args.end();
    if (!campaign) {
      try {
        args = expand_config(args, read_json(args[i + 1]));
      } catch (const std::exception& e) {
        std::cerr << "trustglm: " << e.what() << '\n';
        return 2;
      }
    }
    break;
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*ingest) {
      const auto g = load_dataset(dataset);
      const json stats{{"nodes", g.num_nodes()},
                       {"edges", g.num_edges()},
                       {"directed_edges", 2 * g.num_edges()},
                       {"classes", g.num_classes()},
                       {"feature_dim", g.feature_dim()},
                       {"train", g.split().train.size()},
                       {"val", g.split().val.size()},
                       {"test", g.split().test.size()},
                       {"dropped_self_loops", g.dropped_self_loops()},
                       {"dropped_duplicates", g.dropped_duplicates()}};
      std::cout << stats.dump(2) << '\n';
      if (!out.empty()) save_dataset(g, out);
      return 0;
    }

    if (*train) {
      if (out.empty()) throw std::invalid_argument("train-surrogate needs --out");
      if (seed) tc.seed = *seed;
      const auto g = load_dataset(dataset);
      const auto model = train_surrogate(g, tc, surrogate_kind_from_string(kind));
      save_model(model, out);
      std::cout << json{{"train_accuracy", accuracy(model, g, g.split().train)},
                        {"test_accuracy", accuracy(model, g, g.split().test)},
                        {"model", out}}
                       .dump(2)
                << '\n';
      return 0;
    }

    if (*attack) {
      const auto* sub = attack->get_subcommands().front();
      json doc = config_path.empty() ? json::object() : read_json(config_path);
      doc["vector"] = sub->get_name();
      if (!attack_name.empty()) doc["attack"] = attack_name;
      if (!dataset.empty()) doc["dataset"] = fs::absolute(dataset).string();
      if (!surrogate_path.empty()) doc["surrogate"] = fs::absolute(surrogate_path).string();
      if (fraction) doc["sample_fraction"] = *fraction;
      if (targets) doc["targets_per_repeat"] = *targets;
      if (repeats) doc["repeats"] = *repeats;
      if (threads) doc["threads"] = *threads;
      if (seed) doc["seed"] = *seed;
      if (!out.empty()) doc["output_dir"] = fs::absolute(out).string();
      const auto base = config_path.empty() ? fs::current_path() : fs::absolute(config_path).parent_path();
      const auto cfg = campaign_config_from_json(doc, base);
      const auto r = run_campaign(cfg);
      print_metrics(summary_json(r));
      if (!cfg.output_dir.empty()) std::cout << "report: " << cfg.output_dir.string() << '\n';
      return 0;
    }

    if (*defend) {
      const auto* sub = defend->get_subcommands().front();
      const auto name = sub->get_name();
      if (out.empty()) throw std::invalid_argument("defend needs --out");
      if (name == "fgsm" || name == "pgd") {
        ac.method = name == "fgsm" ? AdvMethod::fgsm : AdvMethod::pgd;
        ac.kind = surrogate_kind_from_string(kind);
        if (seed) ac.base.seed = *seed;
        const auto g = load_dataset(dataset);
        const auto model = train_adversarial(g, ac);
        save_model(model, out);
        std::cout << json{{"train_accuracy", accuracy(model, g, g.split().train)},
                          {"test_accuracy", accuracy(model, g, g.split().test)},
                          {"model", out}}
                         .dump(2)
                  << '\n';
        return 0;
      }
      if (name == "text-augment") {
        std::vector<TextSample> samples;
        std::ifstream in(samples_path);
        if (!in) throw std::runtime_error("cannot open " + samples_path);
        std::string line;
        for (std::size_t n = 1; std::getline(in, line); ++n) {
          if (line.empty()) continue;
          try {
            const auto j = json::parse(line);
            samples.push_back({j.at("id").get<std::int64_t>(), j.at("text").get<std::string>(),
                               j.at("label").get<std::string>()});
          } catch (const json::exception& e) {
            throw std::runtime_error(samples_path + ":" + std::to_string(n) + ": " + e.what());
          }
        }
        const auto vocab = load_embeddings(embeddings);
        auto spec = victim_spec_from_json(read_json(victim_path));
        std::shared_ptr<const TextAttributedGraph> graph;
        if (!dataset.empty()) graph = std::make_shared<const TextAttributedGraph>(load_dataset(dataset));
        const auto victim = open_victim(spec, graph);
        TextAttackConfig tcfg;
        tcfg.query_budget = budget;
        const auto base_seed = seed.value_or(0);
        const auto data = augment_text_dataset(
            samples,
            [&](const TextSample& s) {
              auto c = tcfg;
              c.seed = hash_seed(base_seed, static_cast<std::uint64_t>(s.id));
              LabelOracle oracle = [&](const std::string& t) { return victim->classify(TextQuery{t, -1}); };
              return text_attack == "texthoaxer" ? texthoaxer(oracle, s.text, s.label, vocab, c)
                                                 : hlbb(oracle, s.text, s.label, vocab, c);
            },
            aug_threads);
        write_text(out, to_jsonl(data));
        std::cout << "clean " << data.clean.size() << ", adversarial " << data.adversarial.size() << " -> " << out << '\n';
        return 0;
      }
      // prompt-augment
      const auto g = load_dataset(dataset);
      PromptTemplate format;
      format.instruction = instruction;
      format.style = style == "newline_answer" ? PromptStyle::newline_answer : PromptStyle::comma;
      if (style != "comma" && style != "newline_answer") throw std::invalid_argument("unknown style " + style);
      std::optional<NoiseSpec> spec;
      if (mode == "noise") {
        std::vector<std::vector<std::string>> sources;
        if (!pool.empty()) sources.push_back(pool);
        for (const auto& f : pool_files) sources.push_back(load_label_list(f));
        if (noise_kind_name != "in_domain" && noise_kind_name != "cross_domain")
          throw std::invalid_argument("unknown noise kind " + noise_kind_name);
        const auto noise_kind = noise_kind_name == "in_domain" ? NoiseKind::in_domain : NoiseKind::cross_domain;
        if (position.empty()) position = noise_kind == NoiseKind::in_domain ? "front" : "after";
        if (position != "front" && position != "after") throw std::invalid_argument("position must be front or after");
        spec.emplace(noise_kind, build_noise_pool(noise_kind, g.classes(), sources), ratio,
                     position == "front" ? NoisePosition::front : NoisePosition::after, 0, g.classes());
      } else if (mode != "shuffle") {
        throw std::invalid_argument("mode must be shuffle or noise");
      }
      std::vector<PromptSample> samples;
      for (NodeId v : g.split().train) samples.push_back({v, g.classes()});
      std::vector<PromptCorpusEntry> corpus;
      for (std::size_t c = 0; c < copies; ++c) {
        const auto part = augment_prompt_corpus(samples, mode == "shuffle" ? PromptAugmentMode::shuffle : PromptAugmentMode::noise,
                                                format, spec, hash_seed(seed.value_or(0), c));
        corpus.insert(corpus.end(), part.begin(), part.end());
      }
      write_text(out, to_jsonl(corpus));
      std::cout << corpus.size() << " prompts -> " << out << '\n';
      if (!fit_mock.empty()) {
        VictimSpec v;
        v.kind = VictimKind::mock_prompt;
        v.rule = fit_mock_prompt(corpus, g);
        write_text(fit_mock, to_json(v).dump(2) + "\n");
        std::cout << "fitted mock (" << to_string(v.rule.policy) << ") -> " << fit_mock << '\n';
      }
      return 0;
    }

    if (*evaluate) {
      if (!config_path.empty()) {
        json doc = read_json(config_path);
        doc["attack"] = "identity";
        if (!dataset.empty()) doc["dataset"] = fs::absolute(dataset).string();
        if (seed) doc["seed"] = *seed;
        if (!out.empty()) doc["output_dir"] = fs::absolute(out).string();
        const auto r = run_campaign(campaign_config_from_json(doc, fs::absolute(config_path).parent_path()));
        print_metrics(summary_json(r));
        return 0;
      }
      if (dataset.empty() || model_path.empty()) throw std::invalid_argument("evaluate needs --config, or --dataset and --model");
      auto g = std::make_shared<const TextAttributedGraph>(load_dataset(dataset));
      VictimSpec spec;
      spec.model_path = model_path;
      const auto victim = open_victim(spec, g);
      std::cout << json{{"train_accuracy", split_accuracy(*victim, *g, g->split().train)},
                        {"val_accuracy", split_accuracy(*victim, *g, g->split().val)},
                        {"test_accuracy", split_accuracy(*victim, *g, g->split().test)}}
                       .dump(2)
                << '\n';
      return 0;
    }

    if (*report) {
      const auto summary = read_json(fs::path(report_dir) / "summary.json");
      const auto& c = summary.at("config");
      std::cout << c.value("vector", "?") << " / " << c.value("attack", "?") << " on " << c.value("dataset", "?") << '\n';
      print_metrics(summary);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "trustglm: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
