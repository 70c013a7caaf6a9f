#include "trustglm/graph.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <deque>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace trustglm {

namespace fs = std::filesystem;
using nlohmann::json;

void EdgeFlipSet::add(NodeId a, NodeId b) {
  if (a == b) throw std::invalid_argument("edge flip on a self-loop");
  const auto p = NodePair::make(a, b);
  if (contains(p)) throw std::invalid_argument("duplicate edge flip");
  if (flips_.size() >= budget_) throw std::invalid_argument("edge flip budget exceeded");
  flips_.push_back(p);
}

bool EdgeFlipSet::contains(NodePair p) const {
  return std::find(flips_.begin(), flips_.end(), p) != flips_.end();
}

TextAttributedGraph::TextAttributedGraph(std::size_t num_nodes, std::span<const NodePair> edges,
                                         Matrix features, std::vector<std::string> texts,
                                         std::vector<int> labels, std::vector<std::string> classes,
                                         DataSplit split)
    : num_nodes_(num_nodes) {
  if (static_cast<std::size_t>(features.rows()) != num_nodes)
    throw DatasetError("feature rows (" + std::to_string(features.rows()) +
                       ") != num_nodes (" + std::to_string(num_nodes) + ")");
  if (texts.size() != num_nodes)
    throw DatasetError("text count (" + std::to_string(texts.size()) + ") != num_nodes");
  if (labels.size() != num_nodes)
    throw DatasetError("label count (" + std::to_string(labels.size()) + ") != num_nodes");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes.size())
      throw DatasetError("label index " + std::to_string(labels[i]) + " of node " +
                         std::to_string(i) + " out of range");
  }
  std::vector<char> seen(num_nodes, 0);
  for (const auto* part : {&split.train, &split.val, &split.test}) {
    for (NodeId v : *part) {
      if (v < 0 || static_cast<std::size_t>(v) >= num_nodes)
        throw DatasetError("split references node " + std::to_string(v) + " out of range");
      if (seen[static_cast<std::size_t>(v)]++)
        throw DatasetError("split parts overlap at node " + std::to_string(v));
    }
  }
  payload_ = std::make_shared<const Payload>(Payload{std::move(features), std::move(texts),
                                                     std::move(labels), std::move(classes),
                                                     std::move(split)});
  set_edges(edges);
}

TextAttributedGraph::TextAttributedGraph(std::shared_ptr<const Payload> payload,
                                         std::size_t num_nodes)
    : payload_(std::move(payload)), num_nodes_(num_nodes) {}

void TextAttributedGraph::set_edges(std::span<const NodePair> edges) {
  edges_.clear();
  edges_.reserve(edges.size());
  dropped_self_loops_ = 0;
  for (const auto& e : edges) {
    if (e.u < 0 || e.v < 0 || static_cast<std::size_t>(e.u) >= num_nodes_ ||
        static_cast<std::size_t>(e.v) >= num_nodes_)
      throw DatasetError("edge (" + std::to_string(e.u) + "," + std::to_string(e.v) +
                         ") references a node out of range");
    if (e.u == e.v) {
      ++dropped_self_loops_;
      continue;
    }
    edges_.push_back(NodePair::make(e.u, e.v));
  }
  std::sort(edges_.begin(), edges_.end());
  const auto before = edges_.size();
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
  dropped_duplicates_ = before - edges_.size();

  neighbors_.assign(num_nodes_, {});
  for (const auto& e : edges_) {
    neighbors_[static_cast<std::size_t>(e.u)].push_back(e.v);
    neighbors_[static_cast<std::size_t>(e.v)].push_back(e.u);
  }
  for (auto& nb : neighbors_) std::sort(nb.begin(), nb.end());
}

bool TextAttributedGraph::has_edge(NodeId a, NodeId b) const {
  const auto& nb = neighbors_[static_cast<std::size_t>(a)];
  return std::binary_search(nb.begin(), nb.end(), b);
}

TextAttributedGraph TextAttributedGraph::with_edges(std::vector<NodePair> edges) const {
  TextAttributedGraph g(payload_, num_nodes_);
  g.set_edges(edges);
  return g;
}

bool TextAttributedGraph::operator==(const TextAttributedGraph& other) const {
  if (num_nodes_ != other.num_nodes_ || edges_ != other.edges_) return false;
  if (payload_ == other.payload_) return true;
  const auto& a = *payload_;
  const auto& b = *other.payload_;
  if (a.features.rows() != b.features.rows() || a.features.cols() != b.features.cols())
    return false;
  if (std::memcmp(a.features.data(), b.features.data(),
                  sizeof(double) * static_cast<std::size_t>(a.features.size())) != 0)
    return false;
  return a.texts == b.texts && a.labels == b.labels && a.classes == b.classes &&
         a.split == b.split;
}

// ---------------------------------------------------------------------------
// Dataset directory I/O

namespace {

std::ifstream open_input(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw DatasetError("cannot open " + path.string());
  return in;
}

std::uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

Matrix read_features(const fs::path& path) {
  auto in = open_input(path, std::ios::binary);
  unsigned char header[8];
  if (!in.read(reinterpret_cast<char*>(header), 8))
    throw DatasetError(path.string() + ": truncated header");
  const auto rows = read_u32_le(header);
  const auto cols = read_u32_le(header + 4);
  std::vector<unsigned char> raw(static_cast<std::size_t>(rows) * cols * 4);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw DatasetError(path.string() + ": expected " + std::to_string(rows) + "x" +
                       std::to_string(cols) + " floats");
  Matrix x(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) {
      const auto bits = read_u32_le(raw.data() + (static_cast<std::size_t>(r) * cols + c) * 4);
      x(r, c) = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  return x;
}

std::vector<NodePair> read_edges(const fs::path& path) {
  auto in = open_input(path);
  std::vector<NodePair> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::istringstream ls(line);
    long long u = 0, v = 0;
    if (!(ls >> u >> v))
      throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": malformed edge");
    edges.push_back({static_cast<NodeId>(u), static_cast<NodeId>(v)});
  }
  return edges;
}

std::vector<std::string> read_texts(const fs::path& path, std::size_t num_nodes) {
  auto in = open_input(path);
  std::vector<std::string> texts(num_nodes);
  std::vector<char> present(num_nodes, 0);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DatasetError(path.string() + ": " + e.what());
    }
    const auto id = j.at("id").get<long long>();
    if (id < 0 || static_cast<std::size_t>(id) >= num_nodes)
      throw DatasetError(path.string() + ": text id " + std::to_string(id) + " out of range");
    texts[static_cast<std::size_t>(id)] = j.at("text").get<std::string>();
    present[static_cast<std::size_t>(id)] = 1;
    ++rows;
  }
  if (rows != num_nodes)
    throw DatasetError(path.string() + ": " + std::to_string(rows) + " rows for " +
                       std::to_string(num_nodes) + " nodes");
  if (std::find(present.begin(), present.end(), 0) != present.end())
    throw DatasetError(path.string() + ": duplicate text ids");
  return texts;
}

std::vector<int> read_labels(const fs::path& path, std::size_t num_nodes) {
  auto in = open_input(path);
  std::vector<int> labels(num_nodes, -1);
  std::string line;
  std::getline(in, line);  // header
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DatasetError(path.string() + ": malformed row");
    const long long id = std::stoll(line.substr(0, comma));
    const long long label = std::stoll(line.substr(comma + 1));
    if (id < 0 || static_cast<std::size_t>(id) >= num_nodes)
      throw DatasetError(path.string() + ": node id " + std::to_string(id) + " out of range");
    labels[static_cast<std::size_t>(id)] = static_cast<int>(label);
    ++rows;
  }
  if (rows != num_nodes)
    throw DatasetError(path.string() + ": " + std::to_string(rows) + " rows for " +
                       std::to_string(num_nodes) + " nodes");
  return labels;
}

json read_json(const fs::path& path) {
  auto in = open_input(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DatasetError(path.string() + ": " + e.what());
  }
}

}  // namespace

TextAttributedGraph load_dataset(const fs::path& root, const std::string& name) {
  const fs::path dir = name.empty() ? root : root / name;
  for (const char* f : {"edges.tsv", "features.f32", "texts.jsonl", "labels.csv", "classes.json",
                        "split.json"}) {
    if (!fs::exists(dir / f)) throw DatasetError("missing file " + (dir / f).string());
  }
  Matrix features = read_features(dir / "features.f32");
  const auto n = static_cast<std::size_t>(features.rows());
  auto edges = read_edges(dir / "edges.tsv");
  auto texts = read_texts(dir / "texts.jsonl", n);
  auto labels = read_labels(dir / "labels.csv", n);
  auto classes = read_json(dir / "classes.json").get<std::vector<std::string>>();
  const auto sj = read_json(dir / "split.json");
  DataSplit split{sj.at("train").get<std::vector<NodeId>>(),
                  sj.at("val").get<std::vector<NodeId>>(),
                  sj.at("test").get<std::vector<NodeId>>()};
  return TextAttributedGraph(n, edges, std::move(features), std::move(texts), std::move(labels),
                             std::move(classes), std::move(split));
}

void save_dataset(const TextAttributedGraph& graph, const fs::path& root) {
  fs::create_directories(root);
  {
    std::ofstream out(root / "edges.tsv");
    for (const auto& e : graph.edges()) out << e.u << '\t' << e.v << '\n';
  }
  {
    std::ofstream out(root / "features.f32", std::ios::binary);
    const auto& x = graph.features();
    write_u32_le(out, static_cast<std::uint32_t>(x.rows()));
    write_u32_le(out, static_cast<std::uint32_t>(x.cols()));
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      for (Eigen::Index c = 0; c < x.cols(); ++c)
        write_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(x(r, c))));
  }
  {
    std::ofstream out(root / "texts.jsonl");
    for (std::size_t i = 0; i < graph.num_nodes(); ++i)
      out << json{{"id", i}, {"text", graph.texts()[i]}}.dump() << '\n';
  }
  {
    std::ofstream out(root / "labels.csv");
    out << "node_id,label_index\n";
    for (std::size_t i = 0; i < graph.num_nodes(); ++i) out << i << ',' << graph.labels()[i] << '\n';
  }
  {
    std::ofstream out(root / "classes.json");
    out << json(graph.classes()).dump() << '\n';
  }
  {
    std::ofstream out(root / "split.json");
    const auto& s = graph.split();
    out << json{{"train", s.train}, {"val", s.val}, {"test", s.test}}.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Structure operations

NormalizedAdjacency normalize_adjacency(const TextAttributedGraph& graph) {
  const auto n = graph.num_nodes();
  const auto& nb = graph.neighbors();
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i)
    inv_sqrt_deg[i] = 1.0 / std::sqrt(static_cast<double>(nb[i].size() + 1));

  SparseMatrix a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  Eigen::VectorXi per_row(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) per_row[static_cast<Eigen::Index>(i)] = static_cast<int>(nb[i].size() + 1);
  a.reserve(per_row);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    bool self_done = false;
    for (NodeId j : nb[i]) {
      if (!self_done && static_cast<std::size_t>(j) > i) {
        a.insert(row, row) = inv_sqrt_deg[i] * inv_sqrt_deg[i];
        self_done = true;
      }
      a.insert(row, j) = inv_sqrt_deg[i] * inv_sqrt_deg[static_cast<std::size_t>(j)];
    }
    if (!self_done) a.insert(row, row) = inv_sqrt_deg[i] * inv_sqrt_deg[i];
  }
  a.makeCompressed();
  return {std::move(a)};
}

TextAttributedGraph apply_edge_flips(const TextAttributedGraph& graph, const EdgeFlipSet& flips) {
  if (flips.empty()) return graph;
  const auto n = graph.num_nodes();
  std::vector<NodePair> toggles = flips.flips();
  for (const auto& f : toggles) {
    if (f.u < 0 || f.v < 0 || static_cast<std::size_t>(f.u) >= n ||
        static_cast<std::size_t>(f.v) >= n)
      throw std::out_of_range("edge flip (" + std::to_string(f.u) + "," + std::to_string(f.v) +
                              ") references a node >= " + std::to_string(n));
  }
  std::sort(toggles.begin(), toggles.end());
  // Symmetric difference of two sorted sets.
  std::vector<NodePair> edges;
  edges.reserve(graph.num_edges() + toggles.size());
  std::set_symmetric_difference(graph.edges().begin(), graph.edges().end(), toggles.begin(),
                                toggles.end(), std::back_inserter(edges));
  return graph.with_edges(std::move(edges));
}

std::vector<NodeId> khop_nodes(const TextAttributedGraph& graph, std::span<const NodeId> seeds,
                               std::size_t k) {
  std::vector<std::size_t> dist(graph.num_nodes(), SIZE_MAX);
  std::deque<NodeId> queue;
  for (NodeId s : seeds) {
    if (dist[static_cast<std::size_t>(s)] != 0) {
      dist[static_cast<std::size_t>(s)] = 0;
      queue.push_back(s);
    }
  }
  std::vector<NodeId> out;
  while (!queue.empty()) {
    const NodeId v = queue.front();
    queue.pop_front();
    out.push_back(v);
    const auto d = dist[static_cast<std::size_t>(v)];
    if (d == k) continue;
    for (NodeId w : graph.neighbors()[static_cast<std::size_t>(v)]) {
      if (dist[static_cast<std::size_t>(w)] == SIZE_MAX) {
        dist[static_cast<std::size_t>(w)] = d + 1;
        queue.push_back(w);
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

Subgraph khop_subgraph(const TextAttributedGraph& graph, NodeId center, std::size_t k) {
  if (center < 0 || static_cast<std::size_t>(center) >= graph.num_nodes())
    throw std::out_of_range("khop_subgraph: center out of range");
  const NodeId seeds[] = {center};
  auto nodes = khop_nodes(graph, seeds, k);
  std::vector<NodeId> local(graph.num_nodes(), -1);
  for (std::size_t i = 0; i < nodes.size(); ++i)
    local[static_cast<std::size_t>(nodes[i])] = static_cast<NodeId>(i);

  std::vector<NodePair> edges;
  for (const auto& e : graph.edges()) {
    const auto a = local[static_cast<std::size_t>(e.u)];
    const auto b = local[static_cast<std::size_t>(e.v)];
    if (a >= 0 && b >= 0) edges.push_back(NodePair::make(a, b));
  }
  Matrix x(static_cast<Eigen::Index>(nodes.size()), graph.features().cols());
  std::vector<std::string> texts;
  std::vector<int> labels;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = graph.features().row(nodes[i]);
    texts.push_back(graph.texts()[static_cast<std::size_t>(nodes[i])]);
    labels.push_back(graph.labels()[static_cast<std::size_t>(nodes[i])]);
  }
  auto remap = [&](const std::vector<NodeId>& part) {
    std::vector<NodeId> r;
    for (NodeId v : part)
      if (local[static_cast<std::size_t>(v)] >= 0) r.push_back(local[static_cast<std::size_t>(v)]);
    return r;
  };
  const auto& s = graph.split();
  DataSplit split{remap(s.train), remap(s.val), remap(s.test)};
  return {TextAttributedGraph(nodes.size(), edges, std::move(x), std::move(texts),
                              std::move(labels), graph.classes(), std::move(split)),
          std::move(nodes)};
}

}  // namespace trustglm
