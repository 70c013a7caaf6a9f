#include "trustglm/structattack.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace trustglm {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Nettack

std::size_t NettackConfig::resolve_budget(const TextAttributedGraph& graph, NodeId v0) const {
  if (budget) {
    if (*budget < 1) throw std::invalid_argument("nettack budget must be >= 1");
    return *budget;
  }
  return std::max<std::size_t>(1, graph.degree(v0));
}

namespace {

// Neighbor list of `node` with the pair (v0, u) toggled.
void toggled_neighbors(const TextAttributedGraph& graph, NodeId node, NodeId v0,
                       std::optional<NodeId> toggle, std::vector<NodeId>& out) {
  const auto& base = graph.neighbors()[static_cast<std::size_t>(node)];
  out.assign(base.begin(), base.end());
  if (!toggle) return;
  NodeId other = -1;
  if (node == v0) other = *toggle;
  else if (node == *toggle) other = v0;
  if (other < 0) return;
  const auto it = std::lower_bound(out.begin(), out.end(), other);
  if (it != out.end() && *it == other) out.erase(it);
  else out.insert(it, other);
}

}  // namespace

double sgc_target_margin(const TextAttributedGraph& graph, const Matrix& xw, NodeId v0, int c_old,
                         std::optional<NodeId> toggle) {
  auto degree = [&](NodeId i) {
    double d = static_cast<double>(graph.degree(i)) + 1.0;
    if (toggle && (i == v0 || i == *toggle)) d += graph.has_edge(v0, *toggle) ? -1.0 : 1.0;
    return d;
  };
  std::vector<NodeId> first, second;
  toggled_neighbors(graph, v0, v0, toggle, first);
  first.push_back(v0);
  const double d0 = degree(v0);
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(xw.cols());
  for (NodeId k : first) {
    const double dk = degree(k);
    const double a0k = 1.0 / std::sqrt(d0 * dk);
    toggled_neighbors(graph, k, v0, toggle, second);
    second.push_back(k);
    Eigen::RowVectorXd inner = Eigen::RowVectorXd::Zero(xw.cols());
    for (NodeId j : second) inner += xw.row(j) / std::sqrt(dk * degree(j));
    row += a0k * inner;
  }
  return margin_score(row.transpose(), c_old);
}

NettackResult nettack(const TextAttributedGraph& graph, const SurrogateModel& model, NodeId v0,
                      const NettackConfig& cfg) {
  if (model.kind != SurrogateKind::sgc) throw std::invalid_argument("nettack needs an sgc surrogate");
  if (v0 < 0 || static_cast<std::size_t>(v0) >= graph.num_nodes())
    throw std::out_of_range("nettack target out of range");
  const auto& test = graph.split().test;
  if (std::find(test.begin(), test.end(), v0) == test.end())
    throw std::invalid_argument("nettack target " + std::to_string(v0) + " is not a test node");

  const std::size_t budget = cfg.resolve_budget(graph, v0);
  const Matrix xw = graph.features() * model.w1;
  const int c_old = graph.labels()[static_cast<std::size_t>(v0)];

  NettackResult result;
  result.flips = EdgeFlipSet(budget);
  TextAttributedGraph current = graph;
  double score = sgc_target_margin(current, xw, v0, c_old);
  result.initial_score = score;

  while (score <= 0.0 && result.flips.size() < budget) {
    double best_score = -std::numeric_limits<double>::infinity();
    NodeId best_u = -1;
    // Ascending u visits pairs in lexicographic order, so strict '>' keeps
    // the smallest pair among ties.
    for (NodeId u = 0; static_cast<std::size_t>(u) < current.num_nodes(); ++u) {
      if (u == v0 || result.flips.contains(NodePair::make(v0, u))) continue;
      const double s = sgc_target_margin(current, xw, v0, c_old, u);
      if (s > best_score) {
        best_score = s;
        best_u = u;
      }
    }
    if (best_u < 0 || best_score <= score) break;
    result.flips.add(v0, best_u);
    EdgeFlipSet step(1);
    step.add(v0, best_u);
    current = apply_edge_flips(current, step);
    score = best_score;
    result.trace.push_back({NodePair::make(v0, best_u), score});
  }
  result.success = score > 0.0;
  return result;
}

// ---------------------------------------------------------------------------
// Projection and sampling

Vector project_budget(const Eigen::Ref<const Vector>& p, double budget) {
  if (budget < 0.0) throw std::invalid_argument("project_budget: negative budget");
  Vector clamped = p.cwiseMax(0.0).cwiseMin(1.0);
  if (clamped.sum() <= budget) return clamped;
  // sum(clamp(p - mu, 0, 1)) is non-increasing in mu; bisect for = budget,
  // keeping hi on the feasible side.
  auto mass = [&](double mu) { return (p.array() - mu).cwiseMax(0.0).cwiseMin(1.0).sum(); };
  double lo = 0.0;
  double hi = p.maxCoeff();
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mass(mid) > budget) lo = mid;
    else hi = mid;
  }
  return (p.array() - hi).cwiseMax(0.0).cwiseMin(1.0).matrix();
}

EdgeFlipSet sample_flips(const Eigen::Ref<const Vector>& p, std::span<const NodePair> slots,
                         Rng& rng) {
  if (static_cast<std::size_t>(p.size()) != slots.size())
    throw std::invalid_argument("sample_flips: size mismatch");
  EdgeFlipSet out(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i)
    if (rng.bernoulli(p[static_cast<Eigen::Index>(i)])) out.add(slots[i].u, slots[i].v);
  return out;
}

namespace {

std::vector<NodePair> incident_pairs(std::size_t n, std::span<const NodeId> targets) {
  std::vector<NodePair> out;
  out.reserve(targets.size() * n);
  for (NodeId t : targets)
    for (NodeId u = 0; static_cast<std::size_t>(u) < n; ++u)
      if (u != t) out.push_back(NodePair::make(t, u));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

EdgeFlipSet random_flip_baseline(const TextAttributedGraph& graph,
                                 std::span<const NodeId> targets, std::size_t budget, Rng& rng) {
  EdgeFlipSet out(budget);
  if (budget == 0 || targets.empty() || graph.num_nodes() < 2) return out;
  const auto n = graph.num_nodes();
  if (targets.size() * n <= 4 * budget + 4096) {
    auto candidates = incident_pairs(n, targets);
    const auto take = std::min(budget, candidates.size());
    for (std::size_t i = 0; i < take; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.index(candidates.size() - i));
      std::swap(candidates[i], candidates[j]);
      out.add(candidates[i].u, candidates[i].v);
    }
    return out;
  }
  while (out.size() < budget) {
    const NodeId t = targets[static_cast<std::size_t>(rng.index(targets.size()))];
    const auto u = static_cast<NodeId>(rng.index(n));
    if (u == t || out.contains(NodePair::make(t, u))) continue;
    out.add(t, u);
  }
  return out;
}

// ---------------------------------------------------------------------------
// PRBCD

void PrbcdConfig::validate() const {
  if (block_size < budget) throw std::invalid_argument("block_size must be >= budget");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (!(resample_fraction > 0.0 && resample_fraction < 1.0))
    throw std::invalid_argument("resample_fraction must be in (0,1)");
  if (resample_period < 1) throw std::invalid_argument("resample_period must be >= 1");
  if (num_samples < 1) throw std::invalid_argument("num_samples must be >= 1");
}

CandidateScope PrbcdConfig::resolved_scope() const {
  if (scope) return *scope;
  return mode == PrbcdMode::local ? CandidateScope::target_incident : CandidateScope::all_pairs;
}

namespace {

// Candidate universe addressed by a dense index.
class PairUniverse {
 public:
  PairUniverse(std::size_t n, CandidateScope scope, std::span<const NodeId> targets) : n_(n) {
    if (scope == CandidateScope::target_incident) explicit_ = incident_pairs(n, targets);
  }

  std::uint64_t size() const {
    return explicit_ ? explicit_->size() : static_cast<std::uint64_t>(n_) * (n_ - 1) / 2;
  }

  NodePair at(std::uint64_t k) const {
    if (explicit_) return (*explicit_)[static_cast<std::size_t>(k)];
    // Row-major upper triangle: row u holds n-1-u pairs.
    const double nn = static_cast<double>(n_);
    auto u = static_cast<std::uint64_t>(
        std::floor((2.0 * nn - 1.0 - std::sqrt((2.0 * nn - 1.0) * (2.0 * nn - 1.0) - 8.0 * static_cast<double>(k))) / 2.0));
    auto row_start = [&](std::uint64_t r) { return r * (2 * n_ - r - 1) / 2; };
    while (u > 0 && row_start(u) > k) --u;
    while (row_start(u + 1) <= k) ++u;
    const auto v = u + 1 + (k - row_start(u));
    return {static_cast<NodeId>(u), static_cast<NodeId>(v)};
  }

 private:
  std::uint64_t n_;
  std::optional<std::vector<NodePair>> explicit_;
};

}  // namespace

PrbcdResult prbcd(const TextAttributedGraph& graph, const SurrogateModel& model,
                  std::span<const NodeId> targets, const PrbcdConfig& cfg,
                  const PrbcdObserver& observer) {
  cfg.validate();
  if (targets.empty()) throw std::invalid_argument("prbcd needs at least one target");
  if (cfg.mode == PrbcdMode::local && targets.size() != 1)
    throw std::invalid_argument("local prbcd takes exactly one target");

  const EdgeWeightObjective objective(model, graph, targets, cfg.loss_kind);
  PrbcdResult result;
  result.flips = EdgeFlipSet(cfg.budget);
  result.clean_loss = objective.loss(std::span<const NodePair>{});
  result.loss = result.clean_loss;
  if (cfg.budget == 0) return result;

  Rng rng(cfg.seed);
  const PairUniverse universe(graph.num_nodes(), cfg.resolved_scope(), targets);
  const auto universe_size = universe.size();
  if (universe_size == 0) return result;
  const bool full_block = cfg.block_size >= universe_size;
  const auto block_size = static_cast<std::size_t>(std::min<std::uint64_t>(cfg.block_size, universe_size));

  std::vector<std::uint64_t> block_index;
  std::unordered_set<std::uint64_t> in_block;
  auto draw_new = [&](std::size_t count) {
    while (count > 0) {
      const auto k = rng.index(universe_size);
      if (in_block.insert(k).second) {
        block_index.push_back(k);
        --count;
      }
    }
  };
  if (full_block) {
    block_index.resize(static_cast<std::size_t>(universe_size));
    std::iota(block_index.begin(), block_index.end(), 0);
  } else {
    draw_new(block_size);
  }
  auto slots_of = [&] {
    std::vector<NodePair> s(block_index.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = universe.at(block_index[i]);
    return s;
  };
  std::vector<NodePair> slots = slots_of();
  Vector p = Vector::Zero(static_cast<Eigen::Index>(slots.size()));
  const auto budget = static_cast<double>(cfg.budget);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto eg = objective.gradient(p, slots);
    // Step scaled by budget / num_nodes, so lr is comparable across graph sizes.
    const double step = cfg.learning_rate * budget / static_cast<double>(graph.num_nodes()) /
                        std::sqrt(static_cast<double>(epoch) + 1.0);
    p = project_budget(p + step * eg.grad, budget);
    if (observer)
      observer({epoch, eg.loss, p.sum(), p.size() ? p.minCoeff() : 0.0,
                p.size() ? p.maxCoeff() : 0.0, slots.size()});

    const bool last = epoch + 1 == cfg.epochs;
    if (!full_block && !last && (epoch + 1) % cfg.resample_period == 0) {
      // Replace the slots contributing least (|grad| * p) with fresh pairs.
      std::vector<std::size_t> order(slots.size());
      std::iota(order.begin(), order.end(), 0);
      const Vector score = eg.grad.cwiseAbs().cwiseProduct(p);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return score[static_cast<Eigen::Index>(a)] < score[static_cast<Eigen::Index>(b)]; });
      const auto replace = static_cast<std::size_t>(cfg.resample_fraction * static_cast<double>(slots.size()));
      std::vector<char> drop(slots.size(), 0);
      for (std::size_t i = 0; i < replace; ++i) drop[order[i]] = 1;
      std::vector<std::uint64_t> kept_index;
      std::vector<double> kept_p;
      for (std::size_t i = 0; i < slots.size(); ++i) {
        if (drop[i]) {
          in_block.erase(block_index[i]);
        } else {
          kept_index.push_back(block_index[i]);
          kept_p.push_back(p[static_cast<Eigen::Index>(i)]);
        }
      }
      block_index = std::move(kept_index);
      draw_new(replace);
      slots = slots_of();
      p = Vector::Zero(static_cast<Eigen::Index>(slots.size()));
      for (std::size_t i = 0; i < kept_p.size(); ++i) p[static_cast<Eigen::Index>(i)] = kept_p[i];
    }
  }

  // Bernoulli rounding: keep the best feasible draw.
  bool have = false;
  for (std::size_t k = 0; k < cfg.num_samples; ++k) {
    auto drawn = sample_flips(p, slots, rng);
    if (drawn.size() > cfg.budget) continue;
    ++result.feasible_samples;
    const double loss = objective.loss(drawn.flips());
    if (!have || loss > result.loss) {
      have = true;
      result.loss = loss;
      result.flips = EdgeFlipSet(cfg.budget);
      for (const auto& f : drawn.flips()) result.flips.add(f.u, f.v);
    }
  }
  if (!have) {
    std::vector<std::size_t> order(slots.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return p[static_cast<Eigen::Index>(a)] > p[static_cast<Eigen::Index>(b)];
    });
    result.flips = EdgeFlipSet(cfg.budget);
    for (std::size_t i = 0; i < order.size() && result.flips.size() < cfg.budget; ++i) {
      if (p[static_cast<Eigen::Index>(order[i])] <= 0.0) break;
      result.flips.add(slots[order[i]].u, slots[order[i]].v);
    }
    result.loss = objective.loss(result.flips.flips());
    result.used_fallback = true;
  }
  return result;
}

// ---------------------------------------------------------------------------
// JSON

std::string to_json(const FlipRecord& record) {
  json flips = json::array();
  for (const auto& f : record.flips.flips()) flips.push_back({f.u, f.v});
  json j{{"target", record.target ? json(*record.target) : json(nullptr)},
         {"budget", record.flips.budget()},
         {"flips", std::move(flips)},
         {"success", record.success},
         {"seed", record.seed}};
  return j.dump();
}

FlipRecord flip_record_from_json(const std::string& text) {
  const auto j = json::parse(text);
  FlipRecord r;
  if (!j.at("target").is_null()) r.target = j.at("target").get<NodeId>();
  r.flips = EdgeFlipSet(j.at("budget").get<std::size_t>());
  for (const auto& f : j.at("flips")) r.flips.add(f.at(0).get<NodeId>(), f.at(1).get<NodeId>());
  r.success = j.at("success").get<bool>();
  r.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

}  // namespace trustglm
