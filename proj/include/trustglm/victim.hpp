#pragma once

#include "trustglm/defense.hpp"
#include "trustglm/graph.hpp"
#include "trustglm/query.hpp"
#include "trustglm/surrogate.hpp"

#include "json.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

namespace trustglm {

class VictimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class VictimTimeout : public VictimError {
 public:
  using VictimError::VictimError;
};
class VictimProtocolError : public VictimError {
 public:
  using VictimError::VictimError;
};
class VictimConnectionError : public VictimError {
 public:
  using VictimError::VictimError;
};

// ---------------------------------------------------------------------------
// Queries

/// Target node on the graph with `flips` applied.
struct NodeQuery {
  NodeId node = 0;
  std::vector<NodePair> flips;
};

/// Replacement text for a node (node < 0 when there is none).
struct TextQuery {
  std::string text;
  NodeId node = -1;
};

/// Rendered prompt plus the candidate list it was rendered from.
struct PromptQuery {
  std::string prompt;
  NodeId node = -1;
  std::vector<std::string> labels;
};

using VictimQuery = std::variant<NodeQuery, TextQuery, PromptQuery>;

/// The "payload" object of the wire protocol.
nlohmann::json to_payload(const VictimQuery& query);
VictimQuery query_from_payload(const nlohmann::json& payload);

// ---------------------------------------------------------------------------
// Mock prompt victim

enum class MockPolicy {
  prompt_order,   // first candidate (in prompt order) found in the node text
  text_position,  // candidate found earliest in the node text
};

std::string to_string(MockPolicy policy);
MockPolicy mock_policy_from_string(const std::string& name);

/// Deterministic substring classifier. Matching is case-insensitive. With
/// prompt_order and no match it answers the first candidate; with
/// text_position it answers `fallback` if it is a candidate, else the
/// lexicographically smallest candidate. Only prompt_order depends on
/// candidate order.
struct MockPromptRule {
  MockPolicy policy = MockPolicy::prompt_order;
  std::optional<std::string> fallback;

  std::string predict(const std::string& text, std::span<const std::string> candidates) const;
};

/// "Retrains" the mock on a prompt corpus whose ids are node ids: picks the
/// policy with the higher accuracy against the graph's labels (ties go to the
/// order-invariant one) and learns the majority label as fallback.
MockPromptRule fit_mock_prompt(std::span<const PromptCorpusEntry> corpus, const TextAttributedGraph& graph);

// ---------------------------------------------------------------------------
// Victims

enum class VictimKind { inprocess_surrogate, subprocess, socket, mock_prompt };

std::string to_string(VictimKind kind);
VictimKind victim_kind_from_string(const std::string& name);

struct VictimSpec {
  VictimKind kind = VictimKind::inprocess_surrogate;
  std::filesystem::path model_path;              // inprocess_surrogate
  std::shared_ptr<const SurrogateModel> model;   // inprocess_surrogate, overrides model_path
  std::vector<std::string> command;              // subprocess argv
  std::string host = "127.0.0.1";                // socket
  std::uint16_t port = 0;                        // socket
  MockPromptRule rule;                           // mock_prompt
  std::chrono::milliseconds handshake_timeout{10000};
  std::chrono::milliseconds query_timeout{60000};
  std::size_t query_budget = 1000;               // per attacked sample
};

nlohmann::json to_json(const VictimSpec& spec);
VictimSpec victim_spec_from_json(const nlohmann::json& j);

/// A hard-label classifier. classify() serializes calls on victims that do
/// not allow concurrent queries and counts every call that reaches the
/// backend.
class Victim {
 public:
  virtual ~Victim() = default;

  virtual VictimKind kind() const = 0;
  virtual bool concurrent() const = 0;
  /// Label vocabulary announced by the victim.
  virtual const std::vector<std::string>& labels() const = 0;

  std::string classify(const VictimQuery& query);
  std::size_t calls() const { return calls_; }

 protected:
  virtual std::string do_classify(const VictimQuery& query) = 0;

 private:
  std::mutex mutex_;
  std::atomic<std::size_t> calls_{0};
};

/// Opens and, for subprocess and socket victims, handshakes. `graph` is
/// required by the in-process kinds.
std::shared_ptr<Victim> open_victim(const VictimSpec& spec,
                                    std::shared_ptr<const TextAttributedGraph> graph = nullptr);

/// In-process victims built directly from objects.
std::shared_ptr<Victim> make_surrogate_victim(std::shared_ptr<const SurrogateModel> model,
                                              std::shared_ptr<const TextAttributedGraph> graph);
std::shared_ptr<Victim> make_mock_prompt_victim(MockPromptRule rule,
                                                std::shared_ptr<const TextAttributedGraph> graph);

/// One attacked sample's view of a victim: answers are cached by the query
/// payload and every miss spends one unit of the budget.
class VictimHandle {
 public:
  VictimHandle(std::shared_ptr<Victim> victim, std::size_t budget);

  /// Throws BudgetExhausted on a miss with no budget left.
  std::string query(const VictimQuery& query);

  bool cached(const VictimQuery& query) const;
  std::size_t used() const { return used_; }
  std::size_t budget() const { return budget_; }
  std::size_t remaining() const { return budget_ - used_; }
  Victim& victim() const { return *victim_; }

 private:
  std::shared_ptr<Victim> victim_;
  std::size_t budget_;
  std::size_t used_ = 0;
  std::unordered_map<std::string, std::string> cache_;
};

// ---------------------------------------------------------------------------
// Serving

/// Answers protocol requests read from in_fd on out_fd until end of input.
/// Failed queries get {"type":"error","id":n,"message":...}.
void serve_victim(Victim& victim, int in_fd, int out_fd);

/// Listening TCP socket on 127.0.0.1; port 0 picks a free port.
class TcpListener {
 public:
  explicit TcpListener(std::uint16_t port = 0);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }
  /// Serves `connections` clients one after another (0 = forever).
  void serve(Victim& victim, std::size_t connections = 0);

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

}  // namespace trustglm
