// Stand-alone victim speaking the newline-delimited JSON protocol on stdio
// (default) or TCP. Node queries go to a saved surrogate, text and prompt
// queries to the substring rule.

#include "trustglm/victim.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <unistd.h>

using namespace trustglm;

namespace {

class Composite final : public Victim {
 public:
  Composite(std::shared_ptr<Victim> nodes, std::shared_ptr<Victim> words, std::vector<std::string> labels)
      : nodes_(std::move(nodes)), words_(std::move(words)), labels_(std::move(labels)) {}

  VictimKind kind() const override { return VictimKind::subprocess; }
  bool concurrent() const override { return false; }
  const std::vector<std::string>& labels() const override { return labels_; }

 protected:
  std::string do_classify(const VictimQuery& q) override {
    if (std::holds_alternative<NodeQuery>(q)) {
      if (!nodes_) throw std::invalid_argument("no surrogate loaded; start with --model to answer node queries");
      return nodes_->classify(q);
    }
    return words_->classify(q);
  }

 private:
  std::shared_ptr<Victim> nodes_, words_;
  std::vector<std::string> labels_;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trustglm mock victim"};
  std::string dataset, model, policy = "prompt_order", fallback;
  int port = -1;
  app.add_option("--dataset", dataset, "dataset directory")->required();
  app.add_option("--model", model, "surrogate model for node queries");
  app.add_option("--policy", policy, "prompt_order or text_position");
  app.add_option("--fallback", fallback, "fallback label for text_position");
  app.add_option("--listen", port, "serve TCP on 127.0.0.1:PORT instead of stdio (0 = any free port)");
  CLI11_PARSE(app, argc, argv);

  try {
    auto graph = std::make_shared<const TextAttributedGraph>(load_dataset(dataset));
    MockPromptRule rule{mock_policy_from_string(policy), std::nullopt};
    if (!fallback.empty()) rule.fallback = fallback;
    std::shared_ptr<Victim> nodes;
    if (!model.empty())
      nodes = make_surrogate_victim(std::make_shared<const SurrogateModel>(load_model(model)), graph);
    Composite victim(nodes, make_mock_prompt_victim(rule, graph), graph->classes());
    if (port < 0) {
      serve_victim(victim, STDIN_FILENO, STDOUT_FILENO);
    } else {
      TcpListener listener(static_cast<std::uint16_t>(port));
      std::cerr << "listening on 127.0.0.1:" << listener.port() << std::endl;
      listener.serve(victim);
    }
  } catch (const std::exception& e) {
    std::cerr << "trustglm_mock_victim: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
