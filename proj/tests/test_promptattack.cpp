#include "doctest.h"

#include "prompt_fixtures.hpp"
#include "support.hpp"
#include "trustglm/promptattack.hpp"

#include "json.hpp"

#include <map>
#include <random>
#include <set>

using namespace trustglm;
using namespace trustglm::testing;

namespace {

// Reference Fisher–Yates written against the raw standard engine.
std::vector<std::string> reference_shuffle(std::vector<std::string> v, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % i;
    std::uint64_t x = eng();
    while (x >= limit) x = eng();
    std::swap(v[i - 1], v[x % i]);
  }
  return v;
}

bool is_subsequence(const std::vector<std::string>& small, const std::vector<std::string>& big) {
  std::size_t k = 0;
  for (const auto& s : big)
    if (k < small.size() && s == small[k]) ++k;
  return k == small.size();
}

PromptTemplate cora(PromptStyle style) {
  return {std::string(kDefaultInstruction), style == PromptStyle::comma ? kCoraComma : kCoraNewline, style};
}

}  // namespace

TEST_SUITE("promptattack") {

TEST_CASE("render_prompt reproduces the reference Cora prompts") {
  CHECK(render_prompt(cora(PromptStyle::comma)) == kCommaOriginal);
  CHECK(render_prompt(cora(PromptStyle::newline_answer)) == kNewlineOriginal);

  auto in_front = cora(PromptStyle::comma);
  in_front.labels = kCitationNoise;
  in_front.labels.insert(in_front.labels.end(), kCoraComma.begin(), kCoraComma.end());
  CHECK(render_prompt(in_front) == kCommaInDomain);

  auto in_after = cora(PromptStyle::newline_answer);
  in_after.labels.insert(in_after.labels.end(), kCitationNoise.begin(), kCitationNoise.end());
  CHECK(render_prompt(in_after) == kNewlineInDomain);
}

TEST_CASE("render_prompt edge cases") {
  PromptTemplate one{std::string(kDefaultInstruction), {"X"}, PromptStyle::comma};
  CHECK(render_prompt(one) == std::string(kDefaultInstruction) + ": X.");
  PromptTemplate none{std::string(kDefaultInstruction), {}, PromptStyle::comma};
  CHECK_THROWS_AS(render_prompt(none), AttackInapplicable);
  PromptTemplate dup{std::string(kDefaultInstruction), {"a", "a"}, PromptStyle::comma};
  CHECK_THROWS_AS(render_prompt(dup), std::invalid_argument);
}

TEST_CASE("render_prompt is injective on label orders") {
  const auto base = cora(PromptStyle::comma);
  std::map<std::string, std::vector<std::string>> seen;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const auto t = shuffle_labels(base, seed);
    const auto [it, fresh] = seen.emplace(t.rendered, t.labels);
    if (!fresh) CHECK(it->second == t.labels);  // equal bytes only from equal orders
  }
  CHECK(seen.size() > 400);
  auto a = base, b = base;
  std::swap(b.labels[0], b.labels[1]);
  CHECK(render_prompt(a) != render_prompt(b));
  a.style = b.style = PromptStyle::newline_answer;
  CHECK(render_prompt(a) != render_prompt(b));
}

TEST_CASE("shuffle_labels") {
  PromptTemplate single{std::string(kDefaultInstruction), {"only"}, PromptStyle::comma};
  CHECK(shuffle_labels(single, 5).labels == single.labels);
  const auto base = cora(PromptStyle::comma);
  CHECK(shuffle_labels(base, 9).labels == shuffle_labels(base, 9).labels);
  const auto s42 = shuffle_labels(base, 42);
  CHECK(s42.labels == reference_shuffle(kCoraComma, 42));
  CHECK(s42.labels == kCoraCommaSeed42);
  CHECK(s42.kind == TransformKind::shuffle);
  CHECK(s42.seed == 42);
}

TEST_CASE("shuffle outputs are permutations") {
  Rng rng(1);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto n = 1 + rng.index(12);
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < n; ++i) labels.push_back("L" + std::to_string(rng.index(1000)) + "_" + std::to_string(i));
    auto out = shuffled_labels(labels, rng.next());
    std::sort(out.begin(), out.end());
    std::sort(labels.begin(), labels.end());
    CHECK(out == labels);
  }
}

TEST_CASE("inject_noise") {
  const auto base = cora(PromptStyle::comma);
  std::vector<std::vector<std::string>> sources{kCitationNoise, {"Diabetes Type 1", "Diabetes Type 2", "Experimental"}};
  const auto pool = build_noise_pool(NoiseKind::in_domain, kCoraComma, sources);
  SUBCASE("ratio 1.0, front") {
    const NoiseSpec spec(NoiseKind::in_domain, pool, 1.0, NoisePosition::front, 3, kCoraComma);
    const auto t = inject_noise(base, spec);
    REQUIRE(t.labels.size() == 14);
    CHECK(std::vector<std::string>(t.labels.begin() + 7, t.labels.end()) == kCoraComma);
    for (std::size_t i = 0; i < 7; ++i)
      CHECK(std::find(pool.begin(), pool.end(), t.labels[i]) != pool.end());
    CHECK(t.kind == TransformKind::in_noise);
  }
  SUBCASE("ratio 0.5 uses the ceiling") {
    const NoiseSpec spec(NoiseKind::in_domain, pool, 0.5, NoisePosition::after, 3, kCoraComma);
    const auto t = inject_noise(base, spec);
    CHECK(t.labels.size() == 11);
    CHECK(std::vector<std::string>(t.labels.begin(), t.labels.begin() + 7) == kCoraComma);
  }
  SUBCASE("noise equal to an original label is skipped") {
    std::vector<std::string> with_dup{"Theory", "A", "B", "C", "D", "E", "F", "G"};
    const NoiseSpec spec(NoiseKind::in_domain, with_dup, 1.0, NoisePosition::front, 8, kCoraComma);
    const auto t = inject_noise(base, spec);
    CHECK(t.labels.size() == 14);
    CHECK(std::count(t.labels.begin(), t.labels.end(), "Theory") == 1);
  }
  SUBCASE("exhausted pool") {
    const std::vector<std::string> tiny{"A", "B"};
    const NoiseSpec spec(NoiseKind::in_domain, tiny, 1.0, NoisePosition::front, 1, kCoraComma);
    CHECK_THROWS_AS(inject_noise(base, spec), PoolExhausted);
  }
  SUBCASE("cross-domain pool overlapping the origin is rejected at construction") {
    std::vector<std::string> bad = kAmazonLabels;
    bad.push_back("Theory");
    CHECK_THROWS_AS(NoiseSpec(NoiseKind::cross_domain, bad, 1.0, NoisePosition::front, 1, kCoraComma),
                    std::invalid_argument);
    CHECK_NOTHROW(NoiseSpec(NoiseKind::in_domain, bad, 1.0, NoisePosition::front, 1, kCoraComma));
  }
}

TEST_CASE("noise outputs satisfy their invariants on random cases") {
  Rng rng(77);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto n = 1 + rng.index(8);
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < n; ++i) labels.push_back("orig" + std::to_string(i));
    std::vector<std::string> pool;
    for (std::size_t i = 0; i < 30; ++i) pool.push_back("noise" + std::to_string(i));
    if (rng.bernoulli(0.5)) pool.push_back("orig0");
    const double ratio = rng.bernoulli(0.5) ? 0.5 : 1.0 + rng.uniform(0, 2);
    const auto kind = pool.back() == "orig0" ? NoiseKind::in_domain
                      : rng.bernoulli(0.5) ? NoiseKind::cross_domain : NoiseKind::in_domain;
    const NoiseSpec spec(kind, pool, ratio, rng.bernoulli(0.5) ? NoisePosition::front : NoisePosition::after,
                         rng.next(), labels);
    const auto t = inject_noise({"I", labels, PromptStyle::comma}, spec);
    CHECK(is_subsequence(labels, t.labels));
    CHECK(t.labels.size() == n + static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9)));
    CHECK(std::set<std::string>(t.labels.begin(), t.labels.end()).size() == t.labels.size());
  }
}

TEST_CASE("build_noise_pool") {
  std::vector<std::vector<std::string>> sources{{"Theory", "cs.AI", "cs.LG"}, {"cs.AI", "Diabetes"}};
  const auto in = build_noise_pool(NoiseKind::in_domain, kCoraComma, sources);
  CHECK(in == std::vector<std::string>{"Theory", "cs.AI", "cs.LG", "Diabetes"});
  const auto cross = build_noise_pool(NoiseKind::cross_domain, kCoraComma, sources);
  CHECK(std::find(cross.begin(), cross.end(), "Theory") == cross.end());
  for (const auto& l : cross) CHECK(std::find(kCoraComma.begin(), kCoraComma.end(), l) == kCoraComma.end());
  const std::vector<std::vector<std::string>> only_origin{{"Theory"}};
  CHECK_THROWS_AS(build_noise_pool(NoiseKind::cross_domain, kCoraComma, only_origin), std::invalid_argument);
  CHECK_THROWS_AS(build_noise_pool(NoiseKind::in_domain, kCoraComma, {}), std::invalid_argument);

  // Citation-to-Amazon cross-domain pool is disjoint from the Amazon labels.
  const std::vector<std::vector<std::string>> citation{kCoraComma, kCitationNoise};
  const auto amazon_cross = build_noise_pool(NoiseKind::cross_domain, kAmazonLabels, citation);
  for (const auto& l : amazon_cross)
    CHECK(std::find(kAmazonLabels.begin(), kAmazonLabels.end(), l) == kAmazonLabels.end());
}

TEST_CASE("sample_labels draws a seeded subset") {
  std::vector<std::string> mag;
  for (int i = 0; i < 300; ++i) mag.push_back("mag" + std::to_string(i));
  const auto a = sample_labels(mag, 40, 5);
  CHECK(a.size() == 40);
  CHECK(std::set<std::string>(a.begin(), a.end()).size() == 40);
  CHECK(a == sample_labels(mag, 40, 5));
  CHECK(a != sample_labels(mag, 40, 6));
  CHECK_THROWS(sample_labels(std::vector<std::string>(mag.begin(), mag.begin() + 10), 40, 1));
}

TEST_CASE("transformed prompts export as JSONL") {
  const auto t = shuffle_labels(cora(PromptStyle::newline_answer), 7);
  const auto j = nlohmann::json::parse(to_jsonl(t, 31));
  CHECK(j.at("id") == 31);
  CHECK(j.at("transform") == "shuffle");
  CHECK(j.at("seed") == 7);
  CHECK(j.at("labels").get<std::vector<std::string>>() == t.labels);
  CHECK(j.at("rendered") == t.rendered);
  CHECK(transform_kind_from_string("cross_noise") == TransformKind::cross_noise);
}

}  // TEST_SUITE
