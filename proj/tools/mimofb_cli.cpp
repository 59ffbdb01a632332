// Command-line front end for the limited-feedback pipeline.
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mimofb/experiment.hpp"

namespace {

using mimofb::Stage;

struct Common {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "INI experiment configuration");
  cmd->add_option("--seed", c.seed, "Master seed (overrides [run] seed)");
  cmd->add_option("--out", c.out, "Output directory for artifacts and reports")->capture_default_str();
}

int stage_exit_code(Stage s) { return 10 + static_cast<int>(s); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned covariance codebooks and neural feedback encoders for FDD MIMO"};
  app.require_subcommand(1);

  struct Command {
    const char* name;
    const char* help;
    std::vector<Stage> stages;  // empty: take the stages from the config
  };
  const std::vector<Command> commands{
      {"gen-data", "Generate, SNR-filter and split a paired UL/DL dataset",
       {Stage::kGenerate, Stage::kFilter, Stage::kSplit}},
      {"build-codebook", "Learn codebooks from the training split", {Stage::kCodebooks}},
      {"label", "Write DNN training labels for each pilot count", {Stage::kLabel}},
      {"train-encoder", "Random-search and train the feedback encoders", {Stage::kTrain}},
      {"evaluate", "Evaluate transmit strategies on the test split", {Stage::kEvaluate}},
      {"sweep-pilots", "Mean spectral efficiency over the number of pilots", {Stage::kSweep}},
      {"run", "Run the stages listed in the configuration", {}},
  };

  Common common;
  std::vector<CLI::App*> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, common);
    subs.push_back(sub);
  }

  CLI11_PARSE(app, argc, argv);

  std::size_t which = 0;
  for (std::size_t i = 0; i < subs.size(); ++i)
    if (subs[i]->parsed()) which = i;

  mimofb::ExperimentConfig cfg;
  try {
    cfg = common.config.empty() ? mimofb::parse_experiment_config("")
                                : mimofb::load_experiment_config(common.config);
    if (common.seed) cfg.seed = *common.seed;
    if (!commands[which].stages.empty()) cfg.stages = commands[which].stages;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: stage config: %s\n", e.what());
    return 2;
  }

  try {
    const auto result = mimofb::run_experiment(cfg, common.out);
    for (const auto& p : result.written) std::printf("wrote %s\n", p.string().c_str());
    if (!result.report.strategies.empty() || result.report.sweep)
      std::cout << '\n' << mimofb::format_report(result.report);
  } catch (const mimofb::StageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return stage_exit_code(e.stage());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
