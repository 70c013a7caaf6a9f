#include "trustglm/textattack.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace trustglm {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Tokenization

namespace {

bool word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || std::isalnum(u);
}

std::string lower(std::string s) {
  for (auto& c : s)
    if (static_cast<unsigned char>(c) < 0x80) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool is_single_token(const std::string& w) {
  return !w.empty() && std::all_of(w.begin(), w.end(), word_char);
}

std::string match_case(const std::string& original, std::string replacement) {
  const auto first = static_cast<unsigned char>(original.front());
  if (first < 0x80 && std::isupper(first) && !replacement.empty() &&
      static_cast<unsigned char>(replacement.front()) < 0x80)
    replacement.front() = static_cast<char>(std::toupper(static_cast<unsigned char>(replacement.front())));
  return replacement;
}

}  // namespace

TokenizedText tokenize(const std::string& text) {
  TokenizedText t;
  std::string gap;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!word_char(text[i])) {
      gap.push_back(text[i++]);
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && word_char(text[j])) ++j;
    t.gaps.push_back(std::move(gap));
    gap.clear();
    t.words.push_back(text.substr(i, j - i));
    t.keys.push_back(lower(t.words.back()));
    i = j;
  }
  t.gaps.push_back(std::move(gap));
  return t;
}

std::vector<std::string> token_keys(const std::string& text) { return tokenize(text).keys; }

std::string TokenizedText::render(std::span<const std::string> replacements) const {
  std::string out = gaps.front();
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i < replacements.size() && !replacements[i].empty()) out += match_case(words[i], replacements[i]);
    else out += words[i];
    out += gaps[i + 1];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embeddings

EmbeddingVocab::EmbeddingVocab(std::vector<std::string> words, Matrix vectors,
                               std::size_t k_synonyms, double min_cos)
    : words_(std::move(words)), vectors_(std::move(vectors)), k_(k_synonyms), min_cos_(min_cos) {
  if (static_cast<std::size_t>(vectors_.rows()) != words_.size())
    throw std::invalid_argument("embedding rows do not match word count");
  for (Eigen::Index r = 0; r < vectors_.rows(); ++r) {
    const double norm = vectors_.row(r).norm();
    if (!(norm > 0.0) || !std::isfinite(norm))
      throw std::invalid_argument("embedding for '" + words_[static_cast<std::size_t>(r)] + "' has zero or non-finite norm");
    vectors_.row(r) /= norm;
  }
  for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], i);

  // Synonym index by blocked all-pairs cosine. Only words that survive
  // tokenization as a single token may serve as replacements.
  std::vector<char> eligible(words_.size());
  for (std::size_t i = 0; i < words_.size(); ++i)
    eligible[i] = is_single_token(words_[i]) && index_.at(words_[i]) == i;
  synonyms_.resize(words_.size());
  const Eigen::Index n = vectors_.rows();
  constexpr Eigen::Index block = 512;
  std::vector<std::pair<double, std::size_t>> cand;
  for (Eigen::Index start = 0; start < n; start += block) {
    const Eigen::Index rows = std::min(block, n - start);
    const Matrix gram = vectors_.middleRows(start, rows) * vectors_.transpose();
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto i = static_cast<std::size_t>(start + r);
      cand.clear();
      for (Eigen::Index j = 0; j < n; ++j) {
        const auto jj = static_cast<std::size_t>(j);
        if (jj == i || !eligible[jj]) continue;
        if (gram(r, j) >= min_cos_) cand.emplace_back(gram(r, j), jj);
      }
      auto better = [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
      };
      const auto keep = std::min(cand.size(), k_);
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), better);
      for (std::size_t c = 0; c < keep; ++c) synonyms_[i].push_back(cand[c].second);
    }
  }
}

std::optional<std::size_t> EmbeddingVocab::find(const std::string& key) const {
  const auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

EmbeddingVocab load_embeddings(const std::filesystem::path& path, std::size_t k_synonyms,
                               double min_cos) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embeddings " + path.string());
  std::vector<std::string> words;
  std::vector<double> values;
  std::size_t dim = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream fields(line);
    std::string word, tok;
    fields >> word;
    std::size_t count = 0;
    while (fields >> tok) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed number '" + tok + "'");
      values.push_back(v);
      ++count;
    }
    if (count == 0)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": no vector components");
    if (dim == 0) dim = count;
    if (count != dim)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(dim) + " components, got " + std::to_string(count));
    words.push_back(lower(word));
  }
  if (words.empty()) throw std::runtime_error(path.string() + ": empty embedding file");
  Matrix vectors = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), static_cast<Eigen::Index>(words.size()), static_cast<Eigen::Index>(dim));
  return EmbeddingVocab(std::move(words), std::move(vectors), k_synonyms, min_cos);
}

double text_similarity(const EmbeddingVocab& vocab, const std::string& a, const std::string& b) {
  const auto ka = token_keys(a);
  const auto kb = token_keys(b);
  auto pool = [&](const std::vector<std::string>& keys, std::size_t& hits) {
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(vocab.dim()));
    for (const auto& k : keys)
      if (const auto idx = vocab.find(k)) {
        sum += vocab.vector(*idx);
        ++hits;
      }
    return sum;
  };
  std::size_t ha = 0, hb = 0;
  const auto ua = pool(ka, ha);
  const auto ub = pool(kb, hb);
  if (ha == 0 || hb == 0) return 0.0;
  if (ka == kb) return 1.0;
  const double na = ua.norm(), nb = ub.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(ua.dot(ub) / (na * nb), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Attack machinery

void TextAttackConfig::validate() const {
  if (query_budget < 1) throw std::invalid_argument("query_budget must be >= 1");
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || !(lambda1 + lambda2 + lambda3 > 0))
    throw std::invalid_argument("lambdas must be non-negative with a positive sum");
  if (!(step_size > 0)) throw std::invalid_argument("step_size must be > 0");
  if (population_size < 1) throw std::invalid_argument("population_size must be >= 1");
  if (max_restarts < 1) throw std::invalid_argument("max_restarts must be >= 1");
}

namespace {

using Choice = std::vector<int>;  // per word: -1 keeps the original, else a vocab index

class Context {
 public:
  Context(const EmbeddingVocab& vocab, const std::string& x) : vocab_(vocab), doc_(tokenize(x)) {
    orig_.resize(doc_.keys.size());
    u_ = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(vocab.dim()));
    for (std::size_t i = 0; i < doc_.keys.size(); ++i) {
      orig_[i] = vocab.find(doc_.keys[i]);
      if (!orig_[i]) continue;
      u_ += vocab.vector(*orig_[i]);
      ++in_vocab_;
      if (!vocab.synonyms(*orig_[i]).empty()) positions_.push_back(i);
    }
  }

  const EmbeddingVocab& vocab() const { return vocab_; }
  std::size_t size() const { return doc_.keys.size(); }
  const std::vector<std::size_t>& positions() const { return positions_; }
  std::size_t original(std::size_t i) const { return *orig_[i]; }
  const std::vector<std::size_t>& synonyms(std::size_t i) const { return vocab_.synonyms(*orig_[i]); }
  const Eigen::RowVectorXd& pooled_original() const { return u_; }
  Choice identity() const { return Choice(size(), -1); }

  std::string render(const Choice& c) const {
    std::vector<std::string> rep(size());
    for (std::size_t i = 0; i < size(); ++i)
      if (c[i] >= 0) rep[i] = vocab_.word(static_cast<std::size_t>(c[i]));
    return doc_.render(rep);
  }

  // Same value as text_similarity(x, render(c)).
  double similarity(const Choice& c) const {
    if (in_vocab_ == 0) return 0.0;
    if (changed(c) == 0) return 1.0;
    Eigen::RowVectorXd v = u_;
    for (std::size_t i = 0; i < size(); ++i)
      if (c[i] >= 0) v += vocab_.vector(static_cast<std::size_t>(c[i])) - vocab_.vector(*orig_[i]);
    const double nu = u_.norm(), nv = v.norm();
    if (nu == 0.0 || nv == 0.0) return 0.0;
    return std::clamp(u_.dot(v) / (nu * nv), -1.0, 1.0);
  }

  static std::size_t changed(const Choice& c) {
    return static_cast<std::size_t>(std::count_if(c.begin(), c.end(), [](int v) { return v >= 0; }));
  }

  int random_synonym(std::size_t i, Rng& rng, int avoid = -1) const {
    const auto& syn = synonyms(i);
    if (avoid < 0 || syn.size() < 2) return static_cast<int>(syn[rng.index(syn.size())]);
    int pick = avoid;
    while (pick == avoid) pick = static_cast<int>(syn[rng.index(syn.size())]);
    return pick;
  }

 private:
  const EmbeddingVocab& vocab_;
  TokenizedText doc_;
  std::vector<std::optional<std::size_t>> orig_;
  std::vector<std::size_t> positions_;
  Eigen::RowVectorXd u_;
  std::size_t in_vocab_ = 0;
};

bool adversarial(QueryBudget& q, const Context& ctx, const Choice& c, const std::string& y) {
  if (Context::changed(c) == 0) return false;  // the clean text is known to keep y
  return q.query(ctx.render(c)) != y;
}

std::optional<Choice> init_choice(QueryBudget& q, const Context& ctx, const std::string& y,
                                  const TextAttackConfig& cfg, Rng& rng) {
  const auto& pos = ctx.positions();
  if (pos.empty()) return std::nullopt;
  try {
    for (std::size_t r = 0; r < cfg.max_restarts; ++r) {
      const double prob = cfg.max_restarts == 1
                              ? 1.0
                              : 0.1 + 0.9 * static_cast<double>(r) / static_cast<double>(cfg.max_restarts - 1);
      Choice c = ctx.identity();
      for (std::size_t i : pos)
        if (rng.bernoulli(prob)) c[i] = ctx.random_synonym(i, rng);
      if (Context::changed(c) == 0) {
        const auto i = pos[rng.index(pos.size())];
        c[i] = ctx.random_synonym(i, rng);
      }
      if (adversarial(q, ctx, c, y)) return c;
    }
  } catch (const BudgetExhausted&) {
  }
  return std::nullopt;
}

struct Scored {
  Choice choice;
  double sim;
  std::size_t changes;
};

bool ranks_before(const Scored& a, const Scored& b) {
  if (a.sim != b.sim) return a.sim > b.sim;
  if (a.changes != b.changes) return a.changes < b.changes;
  return a.choice < b.choice;
}

Choice mutate(const Context& ctx, Choice c, Rng& rng) {
  std::vector<std::size_t> perturbed;
  for (std::size_t i : ctx.positions())
    if (c[i] >= 0) perturbed.push_back(i);
  if (perturbed.empty()) {
    const auto i = ctx.positions()[rng.index(ctx.positions().size())];
    c[i] = ctx.random_synonym(i, rng);
    return c;
  }
  const auto i = perturbed[rng.index(perturbed.size())];
  if (rng.bernoulli(0.5) || ctx.synonyms(i).size() < 2) c[i] = -1;
  else c[i] = ctx.random_synonym(i, rng, c[i]);
  return c;
}

Choice crossover(const Choice& a, const Choice& b, Rng& rng) {
  Choice child(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) child[i] = rng.bernoulli(0.5) ? a[i] : b[i];
  return child;
}

TextAttackResult start_result(const std::string& x, const std::string& y) {
  TextAttackResult r;
  r.original_text = x;
  r.original_label = y;
  return r;
}

// One uncached, charged query confirms the label flip before reporting.
void finish(TextAttackResult& r, QueryBudget& q, const Context& ctx, const Choice& best) {
  const auto text = ctx.render(best);
  try {
    r.adversarial_label = q.query_fresh(text);
    r.success = r.adversarial_label != r.original_label;
  } catch (const BudgetExhausted&) {
    r.success = false;
  }
  if (r.success) {
    r.adversarial_text = text;
    r.words_changed = Context::changed(best);
    r.similarity = ctx.similarity(best);
  }
  r.queries_used = q.used();
}

// Handles the clean-label check. Returns true when the attack is already
// decided (victim wrong on x, or no budget to even check).
bool precheck(TextAttackResult& r, QueryBudget& q, const Context& ctx) {
  try {
    if (q.query(r.original_text) == r.original_label) return false;
  } catch (const BudgetExhausted&) {
    r.queries_used = q.used();
    return true;
  }
  finish(r, q, ctx, ctx.identity());
  if (r.success) r.similarity = text_similarity(ctx.vocab(), r.original_text, r.original_text);
  return true;
}

}  // namespace

std::optional<std::string> init_adversarial(QueryBudget& victim, const std::string& x,
                                            const std::string& y, const EmbeddingVocab& vocab,
                                            const TextAttackConfig& cfg, Rng& rng) {
  const Context ctx(vocab, x);
  const auto c = init_choice(victim, ctx, y, cfg, rng);
  if (!c) return std::nullopt;
  return ctx.render(*c);
}

TextAttackResult hlbb(const LabelOracle& victim, const std::string& x, const std::string& y,
                      const EmbeddingVocab& vocab, const TextAttackConfig& cfg) {
  cfg.validate();
  QueryBudget q(victim, cfg.query_budget, 1);
  const Context ctx(vocab, x);
  auto r = start_result(x, y);
  if (precheck(r, q, ctx)) return r;
  Rng rng(cfg.seed);
  const auto init = init_choice(q, ctx, y, cfg, rng);
  if (!init) {
    r.queries_used = q.used();
    return r;
  }
  r.init_similarity = ctx.similarity(*init);
  Choice best = *init;

  try {
    // Reduction: put back original words wherever the label stays flipped.
    std::vector<std::size_t> perturbed;
    for (std::size_t i = 0; i < best.size(); ++i)
      if (best[i] >= 0) perturbed.push_back(i);
    rng.shuffle(std::span<std::size_t>(perturbed));
    for (std::size_t i : perturbed) {
      Choice trial = best;
      trial[i] = -1;
      if (adversarial(q, ctx, trial, y)) best = std::move(trial);
    }
  } catch (const BudgetExhausted&) {
  }

  std::vector<Scored> pop{{best, ctx.similarity(best), Context::changed(best)}};
  auto admit = [&](Choice c) {
    for (const auto& p : pop)
      if (p.choice == c) return;
    if (adversarial(q, ctx, c, y)) {
      const double s = ctx.similarity(c);
      const auto changes = Context::changed(c);
      pop.push_back({std::move(c), s, changes});
    }
  };
  auto select = [&] {
    std::sort(pop.begin(), pop.end(), ranks_before);
    if (pop.size() > cfg.population_size) pop.resize(cfg.population_size);
  };

  try {
    for (std::size_t i = 1; i < cfg.population_size; ++i) admit(mutate(ctx, pop.front().choice, rng));
    select();
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
      const std::size_t parents = pop.size();
      for (std::size_t c = 0; c < cfg.population_size; ++c) {
        const auto& a = pop[rng.index(parents)].choice;
        const auto& b = pop[rng.index(parents)].choice;
        admit(mutate(ctx, crossover(a, b, rng), rng));
      }
      select();
      r.trace.push_back(pop.front().sim);
    }
  } catch (const BudgetExhausted&) {
    select();
    r.trace.push_back(pop.front().sim);
  }
  finish(r, q, ctx, pop.front().choice);
  return r;
}

double texthoaxer_loss(double similarity, std::span<const double> row_norms,
                       const TextAttackConfig& cfg) {
  double sq = 0.0, abs = 0.0;
  for (double n : row_norms) {
    sq += n * n;
    abs += std::abs(n);
  }
  return cfg.lambda1 * -similarity + cfg.lambda2 * sq + cfg.lambda3 * abs;
}

double texthoaxer_objective(const EmbeddingVocab& vocab, const std::string& x,
                            const std::string& x_adv, const TextAttackConfig& cfg) {
  const auto a = token_keys(x);
  const auto b = token_keys(x_adv);
  if (a.size() != b.size()) throw std::invalid_argument("texthoaxer_objective: token counts differ");
  std::vector<double> norms;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) continue;
    const auto ia = vocab.find(a[i]), ib = vocab.find(b[i]);
    if (!ia || !ib) throw std::invalid_argument("texthoaxer_objective: substituted word outside vocabulary");
    norms.push_back((vocab.vector(*ib) - vocab.vector(*ia)).norm());
  }
  return texthoaxer_loss(text_similarity(vocab, x, x_adv), norms, cfg);
}

namespace {

double choice_objective(const Context& ctx, const Choice& c, const TextAttackConfig& cfg) {
  std::vector<double> norms;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (c[i] >= 0)
      norms.push_back((ctx.vocab().vector(static_cast<std::size_t>(c[i])) - ctx.vocab().vector(ctx.original(i))).norm());
  return texthoaxer_loss(ctx.similarity(c), norms, cfg);
}

}  // namespace

TextAttackResult texthoaxer(const LabelOracle& victim, const std::string& x, const std::string& y,
                            const EmbeddingVocab& vocab, const TextAttackConfig& cfg) {
  cfg.validate();
  QueryBudget q(victim, cfg.query_budget, 1);
  const Context ctx(vocab, x);
  auto r = start_result(x, y);
  if (precheck(r, q, ctx)) return r;
  Rng rng(cfg.seed);
  const auto init = init_choice(q, ctx, y, cfg, rng);
  if (!init) {
    r.queries_used = q.used();
    return r;
  }
  r.init_similarity = ctx.similarity(*init);
  r.init_objective = choice_objective(ctx, *init, cfg);

  const auto& pos = ctx.positions();
  const auto rows = static_cast<Eigen::Index>(pos.size());
  const auto dim = static_cast<Eigen::Index>(vocab.dim());
  auto embed = [&](std::size_t i, int choice) {
    return choice >= 0 ? vocab.vector(static_cast<std::size_t>(choice)) : vocab.vector(ctx.original(i));
  };
  auto discrete_rows = [&](const Choice& c) {
    Matrix p = Matrix::Zero(rows, dim);
    for (Eigen::Index r2 = 0; r2 < rows; ++r2) {
      const auto i = pos[static_cast<std::size_t>(r2)];
      p.row(r2) = embed(i, c[i]) - vocab.vector(ctx.original(i));
    }
    return p;
  };

  Choice accepted = *init;
  Choice best = *init;
  double best_loss = r.init_objective;
  Matrix p = discrete_rows(accepted);
  std::vector<char> frozen(pos.size(), 0);
  const Eigen::RowVectorXd& u = ctx.pooled_original();
  const double nu = u.norm();

  try {
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
      // Exact gradient of the continuous objective.
      const Eigen::RowVectorXd v = u + p.colwise().sum();
      const double nv = v.norm();
      Eigen::RowVectorXd dsim = Eigen::RowVectorXd::Zero(dim);
      if (nu > 0.0 && nv > 0.0) dsim = u / (nu * nv) - u.dot(v) * v / (nu * nv * nv * nv);
      for (Eigen::Index k = 0; k < rows; ++k) {
        if (frozen[static_cast<std::size_t>(k)]) continue;
        const double norm = p.row(k).norm();
        Eigen::RowVectorXd g = -cfg.lambda1 * dsim + 2.0 * cfg.lambda2 * p.row(k);
        if (norm > 0.0) g += cfg.lambda3 * p.row(k) / norm;
        p.row(k) -= cfg.step_size * g;
      }
      // Snap each row to the nearest admissible word.
      Choice cand = accepted;
      for (Eigen::Index k = 0; k < rows; ++k) {
        if (frozen[static_cast<std::size_t>(k)]) continue;
        const auto i = pos[static_cast<std::size_t>(k)];
        const Eigen::RowVectorXd target = vocab.vector(ctx.original(i)) + p.row(k);
        int pick = -1;
        double best_d = (target - vocab.vector(ctx.original(i))).squaredNorm();
        for (std::size_t s : ctx.synonyms(i)) {
          const double d = (target - vocab.vector(s)).squaredNorm();
          if (d < best_d) {
            best_d = d;
            pick = static_cast<int>(s);
          }
        }
        cand[i] = pick;
      }
      if (cand != accepted) {
        if (adversarial(q, ctx, cand, y)) {
          accepted = cand;
          const double loss = choice_objective(ctx, cand, cfg);
          if (loss < best_loss) {
            best_loss = loss;
            best = cand;
          }
        } else {
          // Rows whose move broke the attack keep their accepted word.
          for (Eigen::Index k = 0; k < rows; ++k) {
            const auto i = pos[static_cast<std::size_t>(k)];
            if (cand[i] != accepted[i]) {
              frozen[static_cast<std::size_t>(k)] = 1;
              p.row(k) = embed(i, accepted[i]) - vocab.vector(ctx.original(i));
            }
          }
        }
      }
      r.trace.push_back(best_loss);
      if (std::all_of(frozen.begin(), frozen.end(), [](char f) { return f != 0; })) break;
    }
  } catch (const BudgetExhausted&) {
  }
  finish(r, q, ctx, best);
  r.objective = best_loss;
  return r;
}

std::string to_json(const TextAttackResult& r) {
  json j{{"original_text", r.original_text},
         {"adversarial_text", r.adversarial_text ? json(*r.adversarial_text) : json(nullptr)},
         {"original_label", r.original_label},
         {"adversarial_label", r.adversarial_label},
         {"success", r.success},
         {"queries_used", r.queries_used},
         {"words_changed", r.words_changed},
         {"similarity", r.similarity}};
  return j.dump();
}

}  // namespace trustglm
