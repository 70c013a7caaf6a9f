#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace trustglm {

using NodeId = std::int32_t;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unordered node pair stored with u < v.
struct NodePair {
  NodeId u = 0;
  NodeId v = 0;

  static NodePair make(NodeId a, NodeId b) { return a < b ? NodePair{a, b} : NodePair{b, a}; }
  auto operator<=>(const NodePair&) const = default;
};

struct DataSplit {
  std::vector<NodeId> train;
  std::vector<NodeId> val;
  std::vector<NodeId> test;

  bool operator==(const DataSplit&) const = default;
};

/// A set of undirected edge toggles bounded by a budget.
class EdgeFlipSet {
 public:
  EdgeFlipSet() = default;
  explicit EdgeFlipSet(std::size_t budget) : budget_(budget) {}

  /// Adds a flip; throws std::invalid_argument on self-loops, duplicates or
  /// when the budget is already used up.
  void add(NodeId a, NodeId b);
  bool contains(NodePair p) const;

  std::size_t budget() const { return budget_; }
  std::size_t size() const { return flips_.size(); }
  bool empty() const { return flips_.empty(); }
  const std::vector<NodePair>& flips() const { return flips_; }

  bool operator==(const EdgeFlipSet&) const = default;

 private:
  std::size_t budget_ = 0;
  std::vector<NodePair> flips_;
};

/// Node-attributed undirected graph with per-node raw text. Node payload
/// (features, texts, labels, classes, split) is shared between graphs derived
/// by structural edits; only the edge set is owned per instance.
class TextAttributedGraph {
 public:
  /// Builds a graph from an arbitrary edge list. Edges are symmetrized,
  /// self-loops and duplicates are dropped and counted. Throws DatasetError on
  /// inconsistent payload.
  TextAttributedGraph(std::size_t num_nodes, std::span<const NodePair> edges, Matrix features,
                      std::vector<std::string> texts, std::vector<int> labels,
                      std::vector<std::string> classes, DataSplit split);

  std::size_t num_nodes() const { return num_nodes_; }
  std::size_t num_edges() const { return edges_.size(); }
  std::size_t feature_dim() const { return static_cast<std::size_t>(payload_->features.cols()); }
  std::size_t num_classes() const { return payload_->classes.size(); }

  /// Sorted, duplicate-free undirected edges with u < v.
  const std::vector<NodePair>& edges() const { return edges_; }
  /// Sorted neighbor lists (both directions).
  const std::vector<std::vector<NodeId>>& neighbors() const { return neighbors_; }
  bool has_edge(NodeId a, NodeId b) const;
  std::size_t degree(NodeId v) const { return neighbors_[static_cast<std::size_t>(v)].size(); }

  const Matrix& features() const { return payload_->features; }
  const std::vector<std::string>& texts() const { return payload_->texts; }
  const std::vector<int>& labels() const { return payload_->labels; }
  const std::vector<std::string>& classes() const { return payload_->classes; }
  const DataSplit& split() const { return payload_->split; }

  std::size_t dropped_self_loops() const { return dropped_self_loops_; }
  std::size_t dropped_duplicates() const { return dropped_duplicates_; }

  /// Same node payload, different edge set.
  TextAttributedGraph with_edges(std::vector<NodePair> edges) const;

  bool operator==(const TextAttributedGraph& other) const;

 private:
  struct Payload {
    Matrix features;
    std::vector<std::string> texts;
    std::vector<int> labels;
    std::vector<std::string> classes;
    DataSplit split;
  };

  TextAttributedGraph(std::shared_ptr<const Payload> payload, std::size_t num_nodes);
  void set_edges(std::span<const NodePair> edges);

  std::shared_ptr<const Payload> payload_;
  std::size_t num_nodes_ = 0;
  std::vector<NodePair> edges_;
  std::vector<std::vector<NodeId>> neighbors_;
  std::size_t dropped_self_loops_ = 0;
  std::size_t dropped_duplicates_ = 0;
};

/// Symmetric normalized adjacency D^{-1/2}(A + I)D^{-1/2}.
struct NormalizedAdjacency {
  SparseMatrix matrix;
};

/// Loads a dataset directory (edges.tsv, features.f32, texts.jsonl,
/// labels.csv, classes.json, split.json).
TextAttributedGraph load_dataset(const std::filesystem::path& root, const std::string& name = {});

/// Writes a graph in the layout read by load_dataset.
void save_dataset(const TextAttributedGraph& graph, const std::filesystem::path& root);

NormalizedAdjacency normalize_adjacency(const TextAttributedGraph& graph);

TextAttributedGraph apply_edge_flips(const TextAttributedGraph& graph, const EdgeFlipSet& flips);

struct Subgraph {
  TextAttributedGraph graph;
  std::vector<NodeId> original_index;  // sub-index -> original node id
};

/// Induced subgraph on all nodes within k hops of center.
Subgraph khop_subgraph(const TextAttributedGraph& graph, NodeId center, std::size_t k);

/// Nodes within k hops of any seed, sorted.
std::vector<NodeId> khop_nodes(const TextAttributedGraph& graph, std::span<const NodeId> seeds,
                               std::size_t k);

}  // namespace trustglm
