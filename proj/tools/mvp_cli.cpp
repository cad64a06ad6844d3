// mvp: command-line front end for the experiment harness.
//
//   mvp <verb> [--config PATH] [--seed N] [--out DIR] [verb flags]
//
// Verbs: synth, ingest, rarity, train-mv, sft, ppo, eval. Log verbosity comes
// from MVP_LOG_LEVEL (trace, debug, info, warn, error, off; default info).

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "mvp/harness.hpp"

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("mvp");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("MVP_LOG_LEVEL")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to "off"; only honor it when asked for.
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
  }
}

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string input;
  std::optional<long> min_side;
  std::optional<std::size_t> min_props;
  std::optional<double> dup_ratio_max;
  std::optional<std::string> blocklist;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find(',', start);
    if (end == std::string::npos) end = s.size();
    if (end > start) out.push_back(s.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  using namespace mvp::harness;

  CLI::App app{"Desk-scale market-value prompt adaptation experiments"};
  app.require_subcommand(1);
  Overrides o;

  auto shared = [&o](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "Experiment config (JSON)");
    cmd->add_option("--seed", o.seed, "Global seed (overrides config)");
    cmd->add_option("--out", o.out, "Output directory (overrides config)");
    cmd->add_option("--input", o.input, "Record file (overrides config)");
  };

  const std::vector<std::pair<std::string, std::string>> verbs = {
      {"synth", "Write a seeded synthetic collection"},
      {"ingest", "Run the cleaning pipeline over raw records"},
      {"rarity", "Rank items and assign price tiers"},
      {"train-mv", "Train the market-value classifier"},
      {"sft", "Supervised fine-tuning of the prompt policy"},
      {"ppo", "PPO training of the prompt policy"},
      {"eval", "Evaluate no-policy, SFT and PPO variants"},
  };
  for (const auto& [name, help] : verbs) {
    auto* cmd = app.add_subcommand(name, help);
    shared(cmd);
    if (name == "ingest") {
      cmd->add_option("--min-side", o.min_side, "Minimum image side in pixels");
      cmd->add_option("--min-props", o.min_props, "Minimum median property count per collection");
      cmd->add_option("--dup-ratio-max", o.dup_ratio_max, "Largest tolerated duplicate ratio");
      cmd->add_option("--blocklist", o.blocklist, "Comma-separated blocked substrings");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  const std::string verb = app.get_subcommands().front()->get_name();

  ExperimentConfig config;
  try {
    if (!o.config.empty()) config = ExperimentConfig::load(o.config);
    if (o.seed) config.seed = *o.seed;
    if (!o.out.empty()) config.paths.out_dir = o.out;
    if (!o.input.empty()) config.paths.input = o.input;
    if (o.min_side) config.pipeline.min_side = *o.min_side;
    if (o.min_props) config.pipeline.min_props = *o.min_props;
    if (o.dup_ratio_max) config.pipeline.dup_ratio_max = *o.dup_ratio_max;
    if (o.blocklist) config.pipeline.blocklist = split_list(*o.blocklist);
    config.validate();
    config.require_seed();
  } catch (const ConfigError& e) {
    spdlog::error("{}: {}", verb, e.what());
    return kExitConfig;
  }
  return run_command(verb, config);
}
