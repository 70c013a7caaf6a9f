#include "trustglm/victim.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <csignal>
#include <cstring>
#include <map>

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

namespace trustglm {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Payloads

json to_payload(const VictimQuery& query) {
  return std::visit(
      [](const auto& q) -> json {
        using T = std::decay_t<decltype(q)>;
        if constexpr (std::is_same_v<T, NodeQuery>) {
          json flips = json::array();
          for (const auto& f : q.flips) flips.push_back({f.u, f.v});
          return {{"node", q.node}, {"flips", flips}};
        } else if constexpr (std::is_same_v<T, TextQuery>) {
          json j{{"text", q.text}};
          if (q.node >= 0) j["node"] = q.node;
          return j;
        } else {
          json j{{"prompt", q.prompt}, {"labels", q.labels}};
          if (q.node >= 0) j["node"] = q.node;
          return j;
        }
      },
      query);
}

VictimQuery query_from_payload(const json& payload) {
  if (!payload.is_object()) throw VictimProtocolError("payload must be an object");
  const NodeId node = payload.value("node", NodeId{-1});
  if (payload.contains("text")) return TextQuery{payload.at("text").get<std::string>(), node};
  if (payload.contains("prompt"))
    return PromptQuery{payload.at("prompt").get<std::string>(), node,
                       payload.value("labels", std::vector<std::string>{})};
  if (payload.contains("node")) {
    NodeQuery q{node, {}};
    for (const auto& f : payload.value("flips", json::array()))
      q.flips.push_back(NodePair::make(f.at(0).get<NodeId>(), f.at(1).get<NodeId>()));
    return q;
  }
  throw VictimProtocolError("payload has none of text, prompt, node");
}

// ---------------------------------------------------------------------------
// Mock prompt rule

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

std::string to_string(MockPolicy policy) {
  return policy == MockPolicy::prompt_order ? "prompt_order" : "text_position";
}

MockPolicy mock_policy_from_string(const std::string& name) {
  if (name == "prompt_order") return MockPolicy::prompt_order;
  if (name == "text_position") return MockPolicy::text_position;
  throw std::invalid_argument("unknown mock policy '" + name + "'");
}

std::string MockPromptRule::predict(const std::string& text, std::span<const std::string> candidates) const {
  if (candidates.empty()) throw std::invalid_argument("mock victim needs at least one candidate");
  const auto haystack = lower(text);
  if (policy == MockPolicy::prompt_order) {
    for (const auto& c : candidates)
      if (haystack.find(lower(c)) != std::string::npos) return c;
    return candidates.front();
  }
  // Earliest match; longer label first at equal position, then by name.
  const std::string* best = nullptr;
  std::size_t best_pos = std::string::npos;
  for (const auto& c : candidates) {
    const auto pos = haystack.find(lower(c));
    if (pos == std::string::npos) continue;
    if (!best || pos < best_pos || (pos == best_pos && (c.size() > best->size() ||
                                                       (c.size() == best->size() && c < *best)))) {
      best = &c;
      best_pos = pos;
    }
  }
  if (best) return *best;
  if (fallback && std::find(candidates.begin(), candidates.end(), *fallback) != candidates.end())
    return *fallback;
  return *std::min_element(candidates.begin(), candidates.end());
}

MockPromptRule fit_mock_prompt(std::span<const PromptCorpusEntry> corpus, const TextAttributedGraph& graph) {
  if (corpus.empty()) throw std::invalid_argument("cannot fit the mock victim on an empty corpus");
  std::map<std::string, std::size_t> counts;
  auto truth = [&](const PromptCorpusEntry& e) -> const std::string& {
    if (e.id < 0 || static_cast<std::size_t>(e.id) >= graph.num_nodes())
      throw std::out_of_range("corpus id " + std::to_string(e.id) + " is not a node");
    return graph.classes()[static_cast<std::size_t>(graph.labels()[static_cast<std::size_t>(e.id)])];
  };
  for (const auto& e : corpus) ++counts[truth(e)];
  // std::map iterates by name, so ties resolve to the smallest label.
  const auto majority = std::max_element(counts.begin(), counts.end(), [](const auto& a, const auto& b) {
                          return a.second < b.second;
                        })->first;

  const MockPromptRule candidates[] = {{MockPolicy::text_position, majority},
                                       {MockPolicy::prompt_order, std::nullopt}};
  const MockPromptRule* best = nullptr;
  std::size_t best_hits = 0;
  for (const auto& rule : candidates) {
    std::size_t hits = 0;
    for (const auto& e : corpus)
      hits += rule.predict(graph.texts()[static_cast<std::size_t>(e.id)], e.prompt.labels) == truth(e);
    if (!best || hits > best_hits) {
      best = &rule;
      best_hits = hits;
    }
  }
  return *best;
}

// ---------------------------------------------------------------------------
// Specs

std::string to_string(VictimKind kind) {
  switch (kind) {
    case VictimKind::inprocess_surrogate: return "inprocess_surrogate";
    case VictimKind::subprocess: return "subprocess";
    case VictimKind::socket: return "socket";
    case VictimKind::mock_prompt: return "mock_prompt";
  }
  return "?";
}

VictimKind victim_kind_from_string(const std::string& name) {
  for (auto k : {VictimKind::inprocess_surrogate, VictimKind::subprocess, VictimKind::socket,
                 VictimKind::mock_prompt})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown victim kind '" + name + "'");
}

json to_json(const VictimSpec& spec) {
  json j{{"kind", to_string(spec.kind)},
         {"handshake_timeout_ms", spec.handshake_timeout.count()},
         {"query_timeout_ms", spec.query_timeout.count()},
         {"query_budget", spec.query_budget}};
  switch (spec.kind) {
    case VictimKind::inprocess_surrogate: j["model"] = spec.model_path.string(); break;
    case VictimKind::subprocess: j["command"] = spec.command; break;
    case VictimKind::socket:
      j["host"] = spec.host;
      j["port"] = spec.port;
      break;
    case VictimKind::mock_prompt:
      j["policy"] = to_string(spec.rule.policy);
      if (spec.rule.fallback) j["fallback"] = *spec.rule.fallback;
      break;
  }
  return j;
}

VictimSpec victim_spec_from_json(const json& j) {
  VictimSpec s;
  s.kind = victim_kind_from_string(j.at("kind").get<std::string>());
  s.model_path = j.value("model", std::string{});
  s.command = j.value("command", std::vector<std::string>{});
  s.host = j.value("host", s.host);
  s.port = j.value("port", s.port);
  s.rule.policy = mock_policy_from_string(j.value("policy", std::string("prompt_order")));
  if (j.contains("fallback")) s.rule.fallback = j.at("fallback").get<std::string>();
  s.handshake_timeout = std::chrono::milliseconds(j.value("handshake_timeout_ms", s.handshake_timeout.count()));
  s.query_timeout = std::chrono::milliseconds(j.value("query_timeout_ms", s.query_timeout.count()));
  s.query_budget = j.value("query_budget", s.query_budget);
  return s;
}

// ---------------------------------------------------------------------------
// Victim base

std::string Victim::classify(const VictimQuery& query) {
  ++calls_;
  if (concurrent()) return do_classify(query);
  std::lock_guard lock(mutex_);
  return do_classify(query);
}

namespace {

class SurrogateVictim final : public Victim {
 public:
  SurrogateVictim(std::shared_ptr<const SurrogateModel> model, std::shared_ptr<const TextAttributedGraph> graph)
      : model_(std::move(model)), graph_(std::move(graph)), clean_(normalize_adjacency(*graph_).matrix) {
    if (static_cast<std::size_t>(model_->w1.rows()) != graph_->feature_dim())
      throw std::invalid_argument("surrogate input dimension " + std::to_string(model_->w1.rows()) +
                                  " does not match the dataset's " + std::to_string(graph_->feature_dim()));
  }

  VictimKind kind() const override { return VictimKind::inprocess_surrogate; }
  bool concurrent() const override { return true; }
  const std::vector<std::string>& labels() const override { return graph_->classes(); }

 protected:
  std::string do_classify(const VictimQuery& query) override {
    const auto* q = std::get_if<NodeQuery>(&query);
    if (!q) throw std::invalid_argument("surrogate victims answer node queries only");
    if (q->node < 0 || static_cast<std::size_t>(q->node) >= graph_->num_nodes())
      throw std::out_of_range("node " + std::to_string(q->node) + " out of range");
    const NodeId nodes[] = {q->node};
    if (q->flips.empty()) return argmax(forward_logits(*model_, clean_, graph_->features(), nodes));
    const auto a_hat = perturbed(q->flips);
    return argmax(forward_logits(*model_, *a_hat, graph_->features(), nodes));
  }

 private:
  std::string argmax(const Matrix& logits) const {
    Eigen::Index c = 0;
    logits.row(0).maxCoeff(&c);
    return graph_->classes()[static_cast<std::size_t>(c)];
  }

  // Global attacks query every target on one flip set; keep the last one.
  std::shared_ptr<const SparseMatrix> perturbed(const std::vector<NodePair>& flips) {
    std::lock_guard lock(memo_mutex_);
    if (memo_ && memo_flips_ == flips) return memo_;
    EdgeFlipSet set(flips.size());
    for (const auto& f : flips) set.add(f.u, f.v);
    memo_ = std::make_shared<const SparseMatrix>(normalize_adjacency(apply_edge_flips(*graph_, set)).matrix);
    memo_flips_ = flips;
    return memo_;
  }

  std::shared_ptr<const SurrogateModel> model_;
  std::shared_ptr<const TextAttributedGraph> graph_;
  SparseMatrix clean_;
  std::mutex memo_mutex_;
  std::vector<NodePair> memo_flips_;
  std::shared_ptr<const SparseMatrix> memo_;
};

class MockPromptVictim final : public Victim {
 public:
  MockPromptVictim(MockPromptRule rule, std::shared_ptr<const TextAttributedGraph> graph)
      : rule_(std::move(rule)), graph_(std::move(graph)) {}

  VictimKind kind() const override { return VictimKind::mock_prompt; }
  bool concurrent() const override { return true; }
  const std::vector<std::string>& labels() const override { return graph_->classes(); }

 protected:
  std::string do_classify(const VictimQuery& query) override {
    if (const auto* t = std::get_if<TextQuery>(&query)) return rule_.predict(t->text, graph_->classes());
    if (const auto* p = std::get_if<PromptQuery>(&query)) {
      if (p->node < 0 || static_cast<std::size_t>(p->node) >= graph_->num_nodes())
        throw std::out_of_range("prompt query needs a node in range");
      return rule_.predict(graph_->texts()[static_cast<std::size_t>(p->node)], p->labels);
    }
    throw std::invalid_argument("mock prompt victims do not answer node queries");
  }

 private:
  MockPromptRule rule_;
  std::shared_ptr<const TextAttributedGraph> graph_;
};

// Newline-delimited JSON over a pair of file descriptors.
class LineChannel {
 public:
  LineChannel(int in_fd, int out_fd, std::string peer) : in_(in_fd), out_(out_fd), peer_(std::move(peer)) {}

  void write_line(const std::string& line) {
    std::string data = line + "\n";
    std::size_t off = 0;
    while (off < data.size()) {
      const auto n = ::send(out_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
      if (n < 0 && errno == ENOTSOCK) {
        const auto w = ::write(out_, data.data() + off, data.size() - off);
        if (w < 0) throw VictimConnectionError("write to " + peer_ + " failed: " + std::strerror(errno));
        off += static_cast<std::size_t>(w);
        continue;
      }
      if (n < 0) {
        if (errno == EINTR) continue;
        throw VictimConnectionError("write to " + peer_ + " failed: " + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  /// Next line, or std::nullopt at end of input. Throws VictimTimeout.
  std::optional<std::string> read_line(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
        auto line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0)
        throw VictimTimeout("no response from " + peer_ + " within " + std::to_string(timeout.count()) + " ms");
      pollfd p{in_, POLLIN, 0};
      const int r = ::poll(&p, 1, static_cast<int>(std::min<std::int64_t>(left.count(), 60000)));
      if (r < 0 && errno == EINTR) continue;
      if (r < 0) throw VictimConnectionError("poll on " + peer_ + " failed: " + std::strerror(errno));
      if (r == 0) continue;
      char chunk[4096];
      const auto n = ::read(in_, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) continue;
      if (n < 0) throw VictimConnectionError("read from " + peer_ + " failed: " + std::strerror(errno));
      if (n == 0) {
        if (buffer_.empty()) return std::nullopt;
        auto line = std::move(buffer_);
        buffer_.clear();
        return line;
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  const std::string& peer() const { return peer_; }

 private:
  int in_;
  int out_;
  std::string peer_;
  std::string buffer_;
};

// Client side of the protocol; subclasses own the descriptors.
class RemoteVictim : public Victim {
 public:
  bool concurrent() const override { return false; }
  const std::vector<std::string>& labels() const override { return labels_; }

 protected:
  void handshake(LineChannel& channel, std::chrono::milliseconds timeout) {
    channel_ = &channel;
    channel.write_line(json{{"type", "hello"}, {"version", 1}}.dump());
    const auto reply = expect(timeout);
    if (reply.value("type", "") != "ready")
      throw VictimProtocolError(channel.peer() + " answered the handshake with " + reply.dump());
    labels_ = reply.value("labels", std::vector<std::string>{});
  }

  std::string do_classify(const VictimQuery& query) override {
    const auto id = next_id_++;
    channel_->write_line(json{{"type", "query"}, {"id", id}, {"payload", to_payload(query)}}.dump());
    const auto reply = expect(query_timeout_);
    if (reply.value("type", "") == "error")
      throw VictimProtocolError(channel_->peer() + " rejected query " + std::to_string(id) + ": " +
                                reply.value("message", std::string("unknown error")));
    if (reply.value("type", "") != "label" || reply.value("id", std::int64_t{-1}) != id ||
        !reply.contains("label") || !reply.at("label").is_string())
      throw VictimProtocolError(channel_->peer() + " sent " + reply.dump() + " for query " + std::to_string(id));
    return reply.at("label").get<std::string>();
  }

  std::chrono::milliseconds query_timeout_{60000};

 private:
  json expect(std::chrono::milliseconds timeout) {
    const auto line = channel_->read_line(timeout);
    if (!line) throw VictimProtocolError(channel_->peer() + " closed the connection");
    try {
      return json::parse(*line);
    } catch (const json::parse_error&) {
      throw VictimProtocolError(channel_->peer() + " sent malformed JSON: " + *line);
    }
  }

  LineChannel* channel_ = nullptr;
  std::int64_t next_id_ = 0;
  std::vector<std::string> labels_;
};

class SubprocessVictim final : public RemoteVictim {
 public:
  explicit SubprocessVictim(const VictimSpec& spec) {
    if (spec.command.empty()) throw std::invalid_argument("subprocess victim needs a command");
    // A victim that dies mid-write must surface as an error, not kill us.
    std::signal(SIGPIPE, SIG_IGN);
    query_timeout_ = spec.query_timeout;
    int to_child[2], from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0 || ::pipe2(from_child, O_CLOEXEC) != 0)
      throw VictimConnectionError(std::string("pipe failed: ") + std::strerror(errno));
    std::vector<char*> argv;
    for (const auto& a : spec.command) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    pid_ = ::fork();
    if (pid_ < 0) throw VictimConnectionError(std::string("fork failed: ") + std::strerror(errno));
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::execvp(argv[0], argv.data());
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    channel_.emplace(read_fd_, write_fd_, "subprocess '" + spec.command.front() + "'");
    try {
      handshake(*channel_, spec.handshake_timeout);
    } catch (...) {
      shutdown();
      throw;
    }
  }

  ~SubprocessVictim() override { shutdown(); }

  VictimKind kind() const override { return VictimKind::subprocess; }

 private:
  void shutdown() {
    if (write_fd_ >= 0) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    write_fd_ = read_fd_ = -1;
    if (pid_ > 0) {
      // Closing stdin asks politely; give it a moment before killing.
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid_, nullptr, WNOHANG) == pid_) {
          pid_ = -1;
          return;
        }
        ::usleep(2000);
      }
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
      pid_ = -1;
    }
  }

  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::optional<LineChannel> channel_;
};

class SocketVictim final : public RemoteVictim {
 public:
  explicit SocketVictim(const VictimSpec& spec) {
    query_timeout_ = spec.query_timeout;
    const auto address = spec.host + ":" + std::to_string(spec.port);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* found = nullptr;
    if (const int rc = ::getaddrinfo(spec.host.c_str(), std::to_string(spec.port).c_str(), &hints, &found); rc != 0)
      throw VictimConnectionError("cannot resolve " + address + ": " + ::gai_strerror(rc));
    std::string last_error = "no address";
    for (auto* ai = found; ai; ai = ai->ai_next) {
      fd_ = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
      if (fd_ < 0) continue;
      if (::connect(fd_, ai->ai_addr, ai->ai_addrlen) == 0) break;
      last_error = std::strerror(errno);
      ::close(fd_);
      fd_ = -1;
    }
    ::freeaddrinfo(found);
    if (fd_ < 0) throw VictimConnectionError("cannot connect to " + address + ": " + last_error);
    channel_.emplace(fd_, fd_, address);
    try {
      handshake(*channel_, spec.handshake_timeout);
    } catch (...) {
      ::close(fd_);
      fd_ = -1;
      throw;
    }
  }

  ~SocketVictim() override {
    if (fd_ >= 0) ::close(fd_);
  }

  VictimKind kind() const override { return VictimKind::socket; }

 private:
  int fd_ = -1;
  std::optional<LineChannel> channel_;
};

}  // namespace

std::shared_ptr<Victim> make_surrogate_victim(std::shared_ptr<const SurrogateModel> model,
                                              std::shared_ptr<const TextAttributedGraph> graph) {
  if (!model || !graph) throw std::invalid_argument("surrogate victim needs a model and a graph");
  return std::make_shared<SurrogateVictim>(std::move(model), std::move(graph));
}

std::shared_ptr<Victim> make_mock_prompt_victim(MockPromptRule rule,
                                                std::shared_ptr<const TextAttributedGraph> graph) {
  if (!graph) throw std::invalid_argument("mock prompt victim needs a graph");
  return std::make_shared<MockPromptVictim>(std::move(rule), std::move(graph));
}

std::shared_ptr<Victim> open_victim(const VictimSpec& spec, std::shared_ptr<const TextAttributedGraph> graph) {
  switch (spec.kind) {
    case VictimKind::inprocess_surrogate: {
      auto model = spec.model;
      if (!model) {
        if (spec.model_path.empty()) throw std::invalid_argument("inprocess victim needs a model");
        model = std::make_shared<const SurrogateModel>(load_model(spec.model_path));
      }
      return make_surrogate_victim(std::move(model), std::move(graph));
    }
    case VictimKind::mock_prompt: return make_mock_prompt_victim(spec.rule, std::move(graph));
    case VictimKind::subprocess: return std::make_shared<SubprocessVictim>(spec);
    case VictimKind::socket: return std::make_shared<SocketVictim>(spec);
  }
  throw std::invalid_argument("bad victim kind");
}

// ---------------------------------------------------------------------------

VictimHandle::VictimHandle(std::shared_ptr<Victim> victim, std::size_t budget)
    : victim_(std::move(victim)), budget_(budget) {
  if (!victim_) throw std::invalid_argument("victim handle needs a victim");
}

std::string VictimHandle::query(const VictimQuery& query) {
  auto key = to_payload(query).dump();
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  if (used_ >= budget_) throw BudgetExhausted("query budget of " + std::to_string(budget_) + " exhausted");
  ++used_;
  auto label = victim_->classify(query);
  cache_.emplace(std::move(key), label);
  return label;
}

bool VictimHandle::cached(const VictimQuery& query) const { return cache_.contains(to_payload(query).dump()); }

// ---------------------------------------------------------------------------

void serve_victim(Victim& victim, int in_fd, int out_fd) {
  LineChannel channel(in_fd, out_fd, "client");
  while (const auto line = channel.read_line(std::chrono::hours(24 * 365))) {
    if (line->empty()) continue;
    json reply;
    json request;
    try {
      request = json::parse(*line);
      const auto type = request.value("type", "");
      if (type == "hello") {
        reply = {{"type", "ready"}, {"labels", victim.labels()}};
      } else if (type == "query") {
        reply = {{"type", "label"},
                 {"id", request.at("id")},
                 {"label", victim.classify(query_from_payload(request.at("payload")))}};
      } else {
        throw VictimProtocolError("unknown request type '" + type + "'");
      }
    } catch (const std::exception& e) {
      reply = {{"type", "error"}, {"message", e.what()}};
      if (request.is_object() && request.contains("id")) reply["id"] = request["id"];
    }
    channel.write_line(reply.dump());
  }
}

TcpListener::TcpListener(std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd_ < 0) throw VictimConnectionError(std::string("socket failed: ") + std::strerror(errno));
  const int on = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &on, sizeof on);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 16) != 0) {
    const std::string why = std::strerror(errno);
    ::close(fd_);
    throw VictimConnectionError("cannot listen on 127.0.0.1:" + std::to_string(port) + ": " + why);
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

void TcpListener::serve(Victim& victim, std::size_t connections) {
  for (std::size_t served = 0; connections == 0 || served < connections; ++served) {
    const int client = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (client < 0) {
      if (errno == EINTR) continue;
      throw VictimConnectionError(std::string("accept failed: ") + std::strerror(errno));
    }
    try {
      serve_victim(victim, client, client);
    } catch (const VictimError&) {
      // A broken client must not take the server down.
    }
    ::close(client);
  }
}

}  // namespace trustglm
