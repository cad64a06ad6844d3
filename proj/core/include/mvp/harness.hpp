#pragma once

// Experiment configuration and the command implementations behind the CLI.
// Every command validates its configuration before touching the filesystem,
// stages outputs in a temporary directory and moves them into place only on
// success. Exit codes: 0 success, 1 runtime failure, 2 configuration error.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvp/generator.hpp"
#include "mvp/ingest.hpp"
#include "mvp/mv_classifier.hpp"
#include "mvp/policy.hpp"
#include "mvp/ppo.hpp"
#include "mvp/rewards.hpp"

namespace mvp::harness {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string label = "run";
  std::optional<std::uint64_t> seed;

  struct Paths {
    fs::path input;       // record file; default <out_dir>/collection.jsonl
    fs::path out_dir = "out";
    fs::path mv_model;    // default <out_dir>/mv_model.bin
    fs::path sft_policy;  // default <out_dir>/sft_policy.bin
    fs::path ppo_policy;  // default <out_dir>/ppo_policy.bin
  } paths;

  ingest::PipelineOptions pipeline;
  ingest::SynthOptions synth;

  struct Generator {
    double keep_prob = 0.9;
    double extra_attr_rate = 1.0;
    bool pair_draw_seeds = true;
  } generator;

  reward::RewardWeights weights;
  struct Aesthetic {
    std::vector<std::string> pleasing;  // "trait:value" labels; empty = seeded pick
    std::size_t pleasing_count = 8;
  } aesthetic;
  std::string market_scorer = "classifier";  // or "rarity_oracle"

  reward::MlpConfig mlp;
  reward::TrainConfig mv_train;
  double holdout_fraction = 0.2;

  double sft_discard_prob = 0.5;
  policy::PolicyConfig policy;
  policy::SftConfig sft;

  policy::PpoConfig ppo;

  struct Prompts {
    std::size_t min_attrs = 1;
    std::size_t max_attrs = 2;
    std::size_t eval_count = 200;
  } prompts;

  struct Eval {
    int samples = 3;
    double temperature = 1.0;
  } eval;

  /// Throws ConfigError on unknown keys, wrong types or invalid values.
  /// Relative paths are kept as given (resolved against the working directory).
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const fs::path& path);
  nlohmann::json to_json() const;

  /// Range checks shared by every command; throws ConfigError.
  void validate() const;
  std::uint64_t require_seed() const;

  fs::path input_path() const;
  fs::path mv_model_path() const;
  fs::path sft_policy_path() const;
  fs::path ppo_policy_path() const;
};

/// Per-stage seeds derived from the global seed.
std::uint64_t stage_seed(const ExperimentConfig& config, std::string_view stage);

int cmd_synth(const ExperimentConfig& config);
int cmd_ingest(const ExperimentConfig& config);
int cmd_rarity(const ExperimentConfig& config);
int cmd_train_mv(const ExperimentConfig& config);
int cmd_sft(const ExperimentConfig& config);
int cmd_ppo(const ExperimentConfig& config);
int cmd_eval(const ExperimentConfig& config);

/// Dispatches a CLI verb; unknown verbs are configuration errors.
int run_command(const std::string& verb, const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Pieces shared by commands and tests.

struct EvalRow {
  std::string variant;
  double mean_mv = 0.0;
  double mean_aesthetic = 0.0;
  double mean_relevance = 0.0;
  double mean_total_reward = 0.0;
  double mean_r_mkt = 0.0;
  double mean_r_aes = 0.0;
  double mean_r_clip = 0.0;
  std::size_t samples = 0;
};

struct EvalTable {
  std::vector<EvalRow> rows;  // no-policy, sft-policy, ppo-policy
  std::uint64_t seed = 0;
  std::size_t prompt_count = 0;
  std::string prompt_source;

  const EvalRow& row(std::string_view variant) const;
  nlohmann::json to_json() const;
  std::string to_csv() const;
};

/// Everything the RL commands derive from the record file and the models.
struct World {
  std::vector<collection::NftRecord> records;
  std::vector<collection::Collection> collections;
  policy::Vocabulary vocab;
  env::GeneratorSpec generator;
  std::optional<reward::DeskAestheticScorer> aesthetic;
  std::optional<reward::DeskRelevanceScorer> relevance;
  std::optional<reward::MvClassifier> classifier;
  std::optional<reward::ClassifierMarketScorer> classifier_scorer;
  std::optional<reward::RarityTierOracle> oracle;

  World() = default;
  World(const World&) = delete;
  World& operator=(const World&) = delete;

  reward::RewardModels models(const reward::RewardWeights& w) const;
};

/// Loads records, builds the vocabulary, generator and scorers. The market
/// classifier is loaded from config when `market_scorer` is "classifier".
std::unique_ptr<World> build_world(const ExperimentConfig& config, bool need_market);

/// Seeded user prompts: a random record, shuffled, truncated to
/// min_attrs..max_attrs of its properties.
std::vector<int> sample_user_prompt(const World& world, const ExperimentConfig& config, Rng& rng);

EvalTable evaluate_variants(const ExperimentConfig& config, const World& world,
                            const policy::ActorCritic* sft, const policy::ActorCritic* ppo);

}  // namespace mvp::harness
