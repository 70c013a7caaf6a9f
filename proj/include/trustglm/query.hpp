#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>

namespace trustglm {

class BudgetExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Hard-label oracle: serialized input in, label out.
using LabelOracle = std::function<std::string(const std::string&)>;

/// Per-sample view of a victim: a response cache keyed by the serialized
/// input and a query budget charged only on cache misses. `reserve` holds
/// back queries from query() so that query_fresh() can always verify.
class QueryBudget {
 public:
  QueryBudget(LabelOracle oracle, std::size_t budget, std::size_t reserve = 0)
      : oracle_(std::move(oracle)), budget_(budget), reserve_(std::min(reserve, budget)) {}

  std::string query(const std::string& input) {
    if (auto it = cache_.find(input); it != cache_.end()) return it->second;
    if (used_ + reserve_ >= budget_) throw BudgetExhausted("query budget exhausted");
    ++used_;
    auto label = oracle_(input);
    cache_.emplace(input, label);
    return label;
  }

  /// Always reaches the victim and is always charged, reserve included.
  std::string query_fresh(const std::string& input) {
    if (used_ >= budget_) throw BudgetExhausted("query budget exhausted");
    ++used_;
    auto label = oracle_(input);
    cache_.insert_or_assign(input, label);
    return label;
  }

  bool cached(const std::string& input) const { return cache_.count(input) > 0; }
  std::size_t used() const { return used_; }
  std::size_t budget() const { return budget_; }
  std::size_t remaining() const { return budget_ - used_; }

 private:
  LabelOracle oracle_;
  std::size_t budget_;
  std::size_t reserve_;
  std::size_t used_ = 0;
  std::unordered_map<std::string, std::string> cache_;
};

}  // namespace trustglm
