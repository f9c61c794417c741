// Command-line driver for the retrieval laboratory. Subcommands map onto
// pipeline stages; a key=value config file provides defaults and flags
// override individual fields. Exit codes: 0 success, 1 validation error,
// 2 I/O error.

#include "odqa/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

namespace {

struct CommonArgs {
  std::string config_path;
  std::string arm;
  std::vector<std::string> overrides;  // key=value
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key = value config file");
  cmd->add_option("--arm", args.arm,
                  "experiment arm preset: baseline, scale, scale+ps, "
                  "scale+ps-100docs, scale+rerank");
  cmd->add_option("--set", args.overrides, "override a config field, key=value")
      ->take_all();
}

odqa::PipelineConfig resolve_config(const CommonArgs& args) {
  odqa::PipelineConfig cfg;
  if (!args.config_path.empty()) cfg = odqa::load_config(args.config_path);
  if (!args.arm.empty()) odqa::apply_arm(cfg, args.arm);
  for (const auto& ov : args.overrides) {
    auto eq = ov.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("--set expects key=value, got '" + ov + "'");
    }
    odqa::apply_config_override(cfg, ov.substr(0, eq), ov.substr(eq + 1));
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"odqa: exact-retrieval open-domain QA laboratory"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* desc;
    void (*run)(const odqa::PipelineConfig&);
  };
  const Sub subs[] = {
      {"synth", "generate a synthetic decoy corpus and question set", odqa::cmd_synth},
      {"build-index", "embed a corpus into an exact-search index", odqa::cmd_build_index},
      {"retrieve", "run exact top-c retrieval for a question file", odqa::cmd_retrieve},
      {"label", "export distant/strong supervision labels for a retrieval", odqa::cmd_label},
      {"train", "train the retriever projection with passage supervision", odqa::cmd_train},
      {"rerank-train", "train the document reranker against a frozen retriever",
       odqa::cmd_rerank_train},
      {"evaluate", "run retrieval + reader and emit an evaluation report", odqa::cmd_evaluate},
      {"sweep-k", "sweep reader depth k and emit an EM curve", odqa::cmd_sweep_k},
  };

  std::vector<CommonArgs> args(std::size(subs));
  std::vector<std::function<void()>> actions;
  for (size_t i = 0; i < std::size(subs); ++i) {
    CLI::App* cmd = app.add_subcommand(subs[i].name, subs[i].desc);
    add_common(cmd, args[i]);
    const Sub& sub = subs[i];
    CommonArgs& a = args[i];
    cmd->callback([&sub, &a] { sub.run(resolve_config(a)); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
