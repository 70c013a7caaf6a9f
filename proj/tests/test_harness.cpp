#include "doctest.h"

#include "support.hpp"
#include "text_fixtures.hpp"
#include "trustglm/defense.hpp"
#include "trustglm/harness.hpp"

#include "json.hpp"

#include <fstream>
#include <set>
#include <thread>

using namespace trustglm;
using namespace trustglm::testing;
using nlohmann::json;

namespace {

std::shared_ptr<const TextAttributedGraph> shared(TextAttributedGraph g) {
  return std::make_shared<const TextAttributedGraph>(std::move(g));
}

std::shared_ptr<const SurrogateModel> trained(const TextAttributedGraph& g, SurrogateKind kind, std::uint64_t seed = 0) {
  TrainConfig cfg;
  cfg.seed = seed;
  return std::make_shared<const SurrogateModel>(train_surrogate(g, cfg, kind));
}

std::string dense_label(const SurrogateModel& m, const TextAttributedGraph& g, const Matrix& a, NodeId v) {
  Eigen::Index c = 0;
  dense_logits(m, dense_normalize(a), g.features()).row(v).maxCoeff(&c);
  return g.classes()[static_cast<std::size_t>(c)];
}

std::vector<std::string> sh(const std::string& script) { return {"/bin/sh", "-c", script}; }

}  // namespace

// ---------------------------------------------------------------------------
// Victims

TEST_CASE("surrogate victim answers the dense argmax, with and without flips") {
  const auto g = shared(planted_graph(30, 3, 0.3, 0.05, 6, 1.0, 4));
  for (auto kind : {SurrogateKind::sgc, SurrogateKind::gcn2}) {
    const auto m = trained(*g, kind);
    VictimSpec spec;
    spec.model = m;
    const auto victim = open_victim(spec, g);
    CHECK(victim->concurrent());
    const Matrix a = dense_adjacency(*g);
    for (NodeId v = 0; v < 30; ++v) CHECK(victim->classify(NodeQuery{v, {}}) == dense_label(*m, *g, a, v));

    Rng rng(kind == SurrogateKind::sgc ? 1 : 2);
    for (int trial = 0; trial < 20; ++trial) {
      const auto v = static_cast<NodeId>(rng.index(30));
      std::vector<NodePair> flips;
      Matrix ap = a;
      std::set<NodePair> seen;
      for (int k = 0; k < 3; ++k) {
        const auto u = static_cast<NodeId>(rng.index(30));
        if (u == v || !seen.insert(NodePair::make(u, v)).second) continue;
        flips.push_back(NodePair::make(u, v));
        ap(u, v) = ap(v, u) = 1.0 - ap(u, v);
      }
      CHECK(victim->classify(NodeQuery{v, flips}) == dense_label(*m, *g, ap, v));
    }
  }
}

TEST_CASE("surrogate victim loads a saved model") {
  const auto g = shared(planted_graph(20, 2, 0.3, 0.05, 4, 1.0, 8));
  const auto dir = scratch_dir("harness_model");
  const auto m = trained(*g, SurrogateKind::sgc);
  save_model(*m, dir / "m.bin");
  VictimSpec spec;
  spec.model_path = dir / "m.bin";
  const auto victim = open_victim(spec, g);
  const auto loaded = load_model(dir / "m.bin");
  const Matrix a = dense_adjacency(*g);
  for (NodeId v : g->split().train) CHECK(victim->classify(NodeQuery{v, {}}) == dense_label(loaded, *g, a, v));
  CHECK_THROWS_AS(victim->classify(TextQuery{"hello", 0}), std::invalid_argument);
}

TEST_CASE("victim handle caches by payload and spends budget on misses only") {
  const auto g = shared(keyword_graph(12, 1));
  VictimHandle h(make_mock_prompt_victim({}, g), 1);
  const auto first = h.query(TextQuery{"Theory again", -1});
  CHECK(h.used() == 1);
  CHECK(h.query(TextQuery{"Theory again", -1}) == first);
  CHECK(h.used() == 1);
  CHECK(h.cached(TextQuery{"Theory again", -1}));
  CHECK(h.victim().calls() == 1);
  CHECK_THROWS_AS(h.query(TextQuery{"something else", -1}), BudgetExhausted);
  // The node id is part of the payload, so this is a different input.
  CHECK_FALSE(h.cached(TextQuery{"Theory again", 3}));
}

TEST_CASE("wire payloads round trip") {
  const VictimQuery queries[] = {NodeQuery{4, {{1, 4}, {4, 9}}}, TextQuery{"some text", -1}, TextQuery{"t", 2},
                                 PromptQuery{"P: a, b.", 3, {"a", "b"}}};
  for (const auto& q : queries) {
    const auto back = query_from_payload(json::parse(to_payload(q).dump()));
    CHECK(to_payload(back) == to_payload(q));
  }
  CHECK(to_payload(NodeQuery{4, {{1, 4}}}) == json::parse(R"({"node":4,"flips":[[1,4]]})"));
  CHECK(to_payload(TextQuery{"x", -1}) == json::parse(R"({"text":"x"})"));
  CHECK_THROWS_AS(query_from_payload(json::parse(R"({"foo":1})")), VictimProtocolError);
}

TEST_CASE("subprocess victim handshakes and answers in order") {
  VictimSpec spec;
  spec.kind = VictimKind::subprocess;
  // Echoes the handshake, then labels every query "b" with its id.
  spec.command = sh(R"(read l; echo '{"type":"ready","labels":["a","b"]}';
    while read l; do id=$(echo "$l" | sed 's/.*"id":\([0-9]*\).*/\1/'); echo "{\"type\":\"label\",\"id\":$id,\"label\":\"b\"}"; done)");
  const auto victim = open_victim(spec);
  CHECK(victim->kind() == VictimKind::subprocess);
  CHECK_FALSE(victim->concurrent());
  CHECK(victim->labels() == std::vector<std::string>{"a", "b"});
  for (int i = 0; i < 5; ++i) CHECK(victim->classify(TextQuery{"q" + std::to_string(i), -1}) == "b");
  CHECK(victim->calls() == 5);
}

TEST_CASE("subprocess victim failure paths") {
  VictimSpec spec;
  spec.kind = VictimKind::subprocess;
  spec.handshake_timeout = std::chrono::milliseconds(200);

  spec.command = sh("sleep 5");
  const auto t0 = std::chrono::steady_clock::now();
  CHECK_THROWS_AS(open_victim(spec), VictimTimeout);
  CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(3));

  spec.command = {"cat"};  // echoes hello back instead of ready
  CHECK_THROWS_AS(open_victim(spec), VictimProtocolError);

  spec.command = {"/nonexistent/victim"};
  CHECK_THROWS_AS(open_victim(spec), VictimProtocolError);

  spec.command = sh(R"(read l; echo '{"type":"ready","labels":[]}'; read l; echo '{"type":"label","id":7,"label":"x"}')");
  const auto wrong_id = open_victim(spec);
  CHECK_THROWS_AS(wrong_id->classify(TextQuery{"q", -1}), VictimProtocolError);

  spec.command = sh(R"(read l; echo '{"type":"ready","labels":[]}'; read l; echo 'not json')");
  const auto garbage = open_victim(spec);
  CHECK_THROWS_AS(garbage->classify(TextQuery{"q", -1}), VictimProtocolError);
}

TEST_CASE("mock victim executable over stdio matches the in-process victims") {
  const auto g = shared(keyword_graph(40, 3));
  const auto dir = scratch_dir("harness_stdio");
  save_dataset(*g, dir / "data");
  const auto m = trained(*g, SurrogateKind::gcn2);
  save_model(*m, dir / "m.bin");

  VictimSpec spec;
  spec.kind = VictimKind::subprocess;
  spec.command = {TRUSTGLM_MOCK_VICTIM, "--dataset", (dir / "data").string(), "--model", (dir / "m.bin").string()};
  const auto remote = open_victim(spec);
  CHECK(remote->labels() == g->classes());

  const auto local_nodes = make_surrogate_victim(std::make_shared<const SurrogateModel>(load_model(dir / "m.bin")), g);
  const auto local_words = make_mock_prompt_victim({}, g);
  for (NodeId v = 0; v < 40; v += 3) {
    CHECK(remote->classify(NodeQuery{v, {}}) == local_nodes->classify(NodeQuery{v, {}}));
    const NodePair flip = NodePair::make(v, (v + 7) % 40);
    CHECK(remote->classify(NodeQuery{v, {flip}}) == local_nodes->classify(NodeQuery{v, {flip}}));
    const auto& text = g->texts()[static_cast<std::size_t>(v)];
    CHECK(remote->classify(TextQuery{text, v}) == local_words->classify(TextQuery{text, v}));
    const std::vector<std::string> order{"Case Based", "Rule Learning", "Neural Networks", "Theory"};
    CHECK(remote->classify(PromptQuery{"p", v, order}) == local_words->classify(PromptQuery{"p", v, order}));
  }
}

TEST_CASE("victim errors travel back over the wire") {
  const auto g = shared(keyword_graph(10, 3));
  const auto dir = scratch_dir("harness_error");
  save_dataset(*g, dir / "data");
  VictimSpec spec;
  spec.kind = VictimKind::subprocess;
  spec.command = {TRUSTGLM_MOCK_VICTIM, "--dataset", (dir / "data").string()};
  const auto remote = open_victim(spec);
  try {
    remote->classify(NodeQuery{1, {}});
    FAIL("expected an error");
  } catch (const VictimProtocolError& e) {
    CHECK(std::string(e.what()).find("--model") != std::string::npos);
  }
  // The channel stays usable after an error reply.
  CHECK_FALSE(remote->classify(TextQuery{"Theory", -1}).empty());
}

TEST_CASE("socket victim talks to a TCP server") {
  const auto g = shared(keyword_graph(20, 5));
  auto local = make_mock_prompt_victim({}, g);
  TcpListener listener;
  std::thread server([&] { listener.serve(*local, 1); });
  {
    VictimSpec spec;
    spec.kind = VictimKind::socket;
    spec.port = listener.port();
    const auto remote = open_victim(spec);
    CHECK(remote->kind() == VictimKind::socket);
    CHECK(remote->labels() == g->classes());
    for (NodeId v = 0; v < 20; ++v) {
      const auto& t = g->texts()[static_cast<std::size_t>(v)];
      CHECK(remote->classify(TextQuery{t, v}) == MockPromptRule{}.predict(t, g->classes()));
    }
  }
  server.join();
}

TEST_CASE("socket victim on a closed port names the address") {
  std::uint16_t port = 0;
  {
    TcpListener probe;
    port = probe.port();
  }
  VictimSpec spec;
  spec.kind = VictimKind::socket;
  spec.port = port;
  try {
    open_victim(spec);
    FAIL("expected a connection error");
  } catch (const VictimConnectionError& e) {
    CHECK(std::string(e.what()).find("127.0.0.1:" + std::to_string(port)) != std::string::npos);
  }
}

TEST_CASE("mock prompt rule") {
  const std::vector<std::string> c{"Theory", "Neural Networks", "Rule Learning"};
  const std::vector<std::string> r{"Rule Learning", "Neural Networks", "Theory"};
  const std::string both = "On neural networks and theory.";
  MockPromptRule first;
  CHECK(first.predict(both, c) == "Theory");
  CHECK(first.predict(both, r) == "Neural Networks");
  CHECK(first.predict("nothing", c) == "Theory");
  CHECK(first.predict("nothing", r) == "Rule Learning");

  MockPromptRule fitted{MockPolicy::text_position, "Neural Networks"};
  CHECK(fitted.predict(both, c) == "Neural Networks");
  CHECK(fitted.predict(both, r) == "Neural Networks");
  CHECK(fitted.predict("nothing", c) == "Neural Networks");
  CHECK(fitted.predict("nothing", std::vector<std::string>{"Theory", "Rule Learning"}) == "Rule Learning");
  // Longer label wins at the same position.
  CHECK(fitted.predict("rule learning methods", std::vector<std::string>{"Rule", "Rule Learning"}) == "Rule Learning");
}

TEST_CASE("victim spec json round trip") {
  VictimSpec s;
  s.kind = VictimKind::mock_prompt;
  s.rule = {MockPolicy::text_position, "Theory"};
  s.query_budget = 77;
  const auto back = victim_spec_from_json(to_json(s));
  CHECK(back.kind == s.kind);
  CHECK(back.rule.policy == s.rule.policy);
  CHECK(back.rule.fallback == s.rule.fallback);
  CHECK(back.query_budget == 77);
  CHECK_THROWS_AS(victim_spec_from_json(json{{"kind", "oracle"}}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Sampling and metrics

TEST_CASE("target sampling") {
  std::vector<NodeId> test(150);
  std::vector<int> labels(150, 0);
  std::vector<int> pre(150, 0);
  for (std::size_t i = 0; i < 150; ++i) test[i] = static_cast<NodeId>(i);
  for (std::size_t i = 100; i < 150; ++i) pre[i] = 1;  // 100 correct

  const auto full = sample_targets(pre, test, labels, 1.0, 3, 9);
  for (const auto& s : full) CHECK(s == correct_nodes(pre, test, labels));
  CHECK(full[0].size() == 100);

  const auto tenth = sample_targets(pre, test, labels, 0.10, 3, 9);
  for (const auto& s : tenth) {
    CHECK(s.size() == 10);
    CHECK(std::set<NodeId>(s.begin(), s.end()).size() == 10);
    for (NodeId v : s) CHECK(v < 100);
  }
  CHECK(sample_targets(pre, test, labels, 0.101, 1, 9)[0].size() == 11);
  CHECK((tenth[0] != tenth[1] || tenth[1] != tenth[2]));
  CHECK(sample_targets(pre, test, labels, 0.10, 3, 9) == tenth);
  CHECK(sample_targets(pre, test, labels, 0.10, 3, 10) != tenth);
  CHECK(sample_targets(pre, test, labels, 0.5, 1, 9, 7)[0].size() == 7);

  // Each correct node is drawn about equally often.
  std::vector<int> hits(100, 0);
  for (const auto& s : sample_targets(pre, test, labels, 0.10, 2000, 1))
    for (NodeId v : s) ++hits[static_cast<std::size_t>(v)];
  CHECK(*std::min_element(hits.begin(), hits.end()) > 140);
  CHECK(*std::max_element(hits.begin(), hits.end()) < 260);

  std::fill(pre.begin(), pre.end(), 1);
  CHECK_THROWS_AS(sample_targets(pre, test, labels, 0.1, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(sample_targets(pre, test, labels, 0.0, 1, 0), std::invalid_argument);
}

TEST_CASE("metric arithmetic") {
  std::vector<TargetRecord> records(200);
  for (std::size_t i = 0; i < 200; ++i) {
    records[i].pre_label = records[i].true_label = "a";
    records[i].post_label = i < 64 ? "b" : "a";
  }
  const auto m = compute_metrics(records);
  CHECK(m.asr_strict == 0.32);
  CHECK(m.acc_post == doctest::Approx(0.68).epsilon(1e-15));
  CHECK(m.acc_pre == 1.0);
  CHECK(m.acc_post == m.acc_pre * (1.0 - m.asr_strict));

  for (auto& r : records) r.post_label = "a";
  const auto none = compute_metrics(records);
  CHECK(none.asr_strict == 0.0);
  CHECK(none.asr_loose == 0.0);

  // Wrong-before targets count toward loose ASR only.
  records[0].pre_label = records[0].post_label = "b";
  const auto mixed = compute_metrics(records);
  CHECK(mixed.asr_strict == 0.0);
  CHECK(mixed.asr_loose == doctest::Approx(1.0 / 200));

  CHECK_THROWS_AS(compute_metrics(std::vector<TargetRecord>{}), std::invalid_argument);
  CHECK_THROWS_AS(compute_metrics(std::vector<TargetRecord>{{0, 1, "b", "b", "a", true, 1, 0}}), std::invalid_argument);
}

TEST_CASE("relative drop of a 67.71 to 41.51 accuracy pair is 38.7 percent") {
  const double drop = relative_drop(67.71, 41.51) * 100.0;
  CHECK(std::abs(drop - 38.70) <= 0.05);
  // On a sample that was fully correct before, the drop is the strict ASR.
  CHECK(relative_drop(1.0, 0.68) == doctest::Approx(0.32));
}

// ---------------------------------------------------------------------------
// Campaigns

namespace {

CampaignConfig structure_campaign(std::shared_ptr<const TextAttributedGraph> g,
                                  std::shared_ptr<const SurrogateModel> m, const std::string& attack) {
  CampaignConfig c;
  c.graph = std::move(g);
  c.victim.model = m;
  c.surrogate = m;
  c.vector = AttackVector::structure;
  c.attack = attack;
  c.sample_fraction = 0.5;
  c.repeats = 3;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_CASE("identity campaign leaves every prediction alone") {
  const auto g = shared(planted_graph(60, 3, 0.2, 0.03, 6, 1.5, 2));
  const auto m = trained(*g, SurrogateKind::gcn2);
  const auto r = run_campaign(structure_campaign(g, m, "identity"));
  REQUIRE(r.status == CampaignStatus::ok);
  REQUIRE(r.aggregate);
  CHECK(r.aggregate->asr_strict == 0.0);
  CHECK(r.aggregate->acc_post == r.aggregate->acc_pre);
  CHECK(r.per_repeat.size() == 3);
  for (const auto& rec : r.records) CHECK(rec.edits == 0);
}

TEST_CASE("structure campaigns are reproducible and respect the sampled set") {
  const auto g = shared(planted_graph(60, 3, 0.2, 0.03, 6, 1.5, 3));
  const auto m = trained(*g, SurrogateKind::sgc);
  auto cfg = structure_campaign(g, m, "nettack");
  const auto a = run_campaign(cfg);
  cfg.threads = 4;
  const auto b = run_campaign(cfg);
  CHECK(a.records == b.records);
  for (std::size_t r = 0; r < a.per_repeat.size(); ++r) {
    const auto& x = a.per_repeat[r];
    // Every sampled target was correct before the attack.
    CHECK(x.acc_pre == 1.0);
    CHECK(x.acc_post == 1.0 - x.asr_strict);
  }
  for (const auto& rec : a.records) {
    CHECK(rec.pre_label == rec.true_label);
    CHECK(rec.edits <= std::max<std::size_t>(1, g->degree(rec.id)));
  }
  // Pre-attack predictions are shared across repeats: one victim call per
  // test node, plus one per attacked target.
  CHECK(a.victim_calls == g->split().test.size() + a.records.size());
}

TEST_CASE("global prbcd applies one flip set to all targets") {
  const auto g = shared(planted_graph(50, 2, 0.2, 0.03, 6, 1.0, 5));
  const auto m = trained(*g, SurrogateKind::gcn2);
  auto cfg = structure_campaign(g, m, "prbcd");
  cfg.attack_config = {{"mode", "global"}, {"budget", 6}, {"epochs", 30}};
  const auto r = run_campaign(cfg);
  REQUIRE(r.global_flips.size() == 3);
  for (const auto& rec : r.records) CHECK(rec.edits == r.global_flips[rec.repeat].size());
  for (const auto& set : r.global_flips) CHECK(set.size() <= 6);
}

TEST_CASE("local prbcd and random campaigns stay within the per-target budget") {
  const auto g = shared(planted_graph(40, 2, 0.2, 0.05, 6, 1.0, 6));
  const auto m = trained(*g, SurrogateKind::gcn2);
  for (const std::string attack : {"prbcd", "random"}) {
    auto cfg = structure_campaign(g, m, attack);
    cfg.attack_config = {{"budget", 2}, {"epochs", 20}};
    cfg.repeats = 1;
    const auto r = run_campaign(cfg);
    for (const auto& rec : r.records) CHECK(rec.edits <= 2);
  }
}

TEST_CASE("prompt campaigns against the mock victim, before and after augmentation") {
  const auto g = shared(keyword_graph(120, 7));
  CampaignConfig cfg;
  cfg.graph = g;
  cfg.vector = AttackVector::prompt;
  cfg.victim.kind = VictimKind::mock_prompt;
  cfg.attack = "shuffle";
  cfg.sample_fraction = 1.0;
  cfg.seed = 3;

  cfg.attack = "identity";
  const auto id = run_campaign(cfg);
  CHECK(id.aggregate->asr_strict == 0.0);

  cfg.attack = "shuffle";
  const auto before = run_campaign(cfg);
  REQUIRE(before.status == CampaignStatus::ok);
  CHECK(before.aggregate->asr_strict > 0.0);

  std::vector<PromptSample> train;
  for (NodeId v : g->split().train) train.push_back({v, g->classes()});
  std::vector<PromptCorpusEntry> corpus;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto part = augment_prompt_corpus(train, PromptAugmentMode::shuffle, PromptTemplate{}, std::nullopt, s);
    corpus.insert(corpus.end(), part.begin(), part.end());
  }
  cfg.victim.rule = fit_mock_prompt(corpus, *g);
  CHECK(cfg.victim.rule.policy == MockPolicy::text_position);
  const auto after = run_campaign(cfg);
  CHECK(after.aggregate->asr_strict == 0.0);
}

TEST_CASE("noise prompt campaign and the inapplicable case") {
  const auto g = shared(keyword_graph(60, 8));
  CampaignConfig cfg;
  cfg.graph = g;
  cfg.vector = AttackVector::prompt;
  cfg.victim.kind = VictimKind::mock_prompt;
  cfg.attack = "cross_noise";
  cfg.attack_config = {{"pool", {"Databases", "Operating Systems", "Graphics"}}, {"ratio", 0.5}};
  cfg.sample_fraction = 1.0;
  const auto r = run_campaign(cfg);
  REQUIRE(r.status == CampaignStatus::ok);
  for (const auto& rec : r.records) CHECK(rec.edits == 2);

  cfg.attack = "shuffle";
  cfg.attack_config = {{"labels", json::array()}};
  const auto none = run_campaign(cfg);
  CHECK(none.status == CampaignStatus::inapplicable);
  CHECK_FALSE(none.aggregate);
  CHECK(summary_json(none).at("status") == "inapplicable");
}

TEST_CASE("text campaign query accounting") {
  // Class names double as vocabulary words so substitutions can move the mock.
  std::vector<std::string> texts;
  std::vector<int> labels;
  for (int i = 0; i < 30; ++i) {
    labels.push_back(i % 2);
    texts.push_back(i % 2 ? "The movie was really good." : "The story is a tale.");
  }
  DataSplit split;
  for (NodeId i = 0; i < 30; ++i) split.test.push_back(i);
  const auto g = shared(TextAttributedGraph(30, std::vector<NodePair>{}, Matrix::Zero(30, 2), texts, labels,
                                            {"story", "movie"}, split));
  CampaignConfig cfg;
  cfg.graph = g;
  cfg.vector = AttackVector::text;
  cfg.victim.kind = VictimKind::mock_prompt;
  cfg.victim.query_budget = 40;
  cfg.vocab = std::make_shared<const EmbeddingVocab>(toy_vocab());
  cfg.attack_config = {{"population_size", 6}, {"iterations", 10}};
  cfg.sample_fraction = 1.0;
  cfg.repeats = 2;
  for (const std::string attack : {"hlbb", "texthoaxer"}) {
    cfg.attack = attack;
    const auto r = run_campaign(cfg);
    REQUIRE(r.status == CampaignStatus::ok);
    CHECK(r.victim_calls <= g->split().test.size() + r.query_budget_total);
    std::size_t successes = 0;
    for (const auto& rec : r.records) {
      CHECK(rec.queries <= 40);
      if (rec.success) {
        ++successes;
        CHECK(rec.true_label == "movie");  // "story" is also the fallback
        CHECK(rec.edits >= 1);
      }
    }
    CHECK(successes > 0);
  }
}

TEST_CASE("campaign reports persist and configs round trip") {
  const auto g = planted_graph(40, 2, 0.2, 0.05, 4, 1.0, 10);
  const auto dir = scratch_dir("harness_report");
  save_dataset(g, dir / "data");
  save_model(train_surrogate(g, TrainConfig{}, SurrogateKind::sgc), dir / "m.bin");
  const json doc = {{"dataset", "data"},
                    {"victim", {{"kind", "inprocess_surrogate"}, {"model", "m.bin"}}},
                    {"vector", "structure"},
                    {"attack", "random"},
                    {"attack_config", {{"budget", 1}}},
                    {"sample_fraction", 0.5},
                    {"repeats", 2},
                    {"seed", 4},
                    {"output_dir", "out"}};
  const auto cfg = campaign_config_from_json(doc, dir);
  CHECK(cfg.dataset == dir / "data");
  const auto r = run_campaign(cfg);
  REQUIRE(std::filesystem::exists(dir / "out" / "summary.json"));
  std::ifstream in(dir / "out" / "records.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = json::parse(line);
    CHECK(j.contains("pre_label"));
    CHECK(j.contains("queries"));
    ++n;
  }
  CHECK(n == r.records.size());
  const auto summary = json::parse(std::ifstream(dir / "out" / "summary.json"));
  CHECK(summary.at("per_repeat").size() == 2);
  CHECK(summary.at("aggregate").at("asr_strict").get<double>() == doctest::Approx(r.aggregate->asr_strict));

  const auto again = campaign_config_from_json(to_json(cfg));
  CHECK(again.attack == cfg.attack);
  CHECK(again.repeats == 2);
  CHECK(again.dataset == cfg.dataset);

  auto bad = doc;
  bad["attack"] = "nettack2";
  CHECK_THROWS_AS(campaign_config_from_json(bad, dir), std::invalid_argument);
  bad = doc;
  bad["sample_fraction"] = 0.0;
  CHECK_THROWS_AS(campaign_config_from_json(bad, dir), std::invalid_argument);
}
