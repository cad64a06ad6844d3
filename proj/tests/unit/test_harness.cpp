#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mvp/harness.hpp"
#include "mvp/record_io.hpp"
#include "test_support.hpp"

using namespace mvp::harness;
using mvp::testing::TempDir;
using json = nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

/// A run small enough to go through every stage in well under a second.
ExperimentConfig small_config(const fs::path& out) {
  ExperimentConfig c;
  c.seed = 42;
  c.paths.out_dir = out;
  c.synth.n_items = 200;
  c.synth.n_trait_types = 4;
  c.synth.values_per_type = 4;
  c.mv_train.steps = 100;
  c.sft.epochs = 3;
  c.ppo.iterations = 5;
  c.ppo.batch_size = 4;
  c.ppo.max_len = 4;
  c.prompts.eval_count = 20;
  return c;
}

int run_cli(const std::string& args) {
  const auto cmd = fmt::format("MVP_LOG_LEVEL=off \"{}\" {} >/dev/null 2>&1", MVP_CLI_PATH, args);
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("config parsing") {
  auto ref = ExperimentConfig::load(fs::path(MVP_CONFIG_DIR) / "reference.json");
  CHECK(ref.label == "reference");
  CHECK(ref.require_seed() == 20240607);
  CHECK(ref.ppo.iterations == 500);
  CHECK_NOTHROW(ref.validate());
  auto round = ExperimentConfig::from_json(ref.to_json());
  CHECK(round.to_json() == ref.to_json());

  CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"seeed", 1}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"ppo", {{"iters", 1}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"seed", "one"}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig{}.require_seed(), ConfigError);
  CHECK_THROWS_AS(
      ExperimentConfig::from_json(json{{"seed", 1}, {"generator", {{"keep_prob", 2.0}}}}),
      ConfigError);
  auto bad = ref;
  bad.eval.samples = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  ExperimentConfig d;
  d.paths.out_dir = "x";
  CHECK(d.input_path() == fs::path("x") / "collection.jsonl");
  CHECK(d.ppo_policy_path() == fs::path("x") / "ppo_policy.bin");
  d.paths.input = "in.jsonl";
  CHECK(d.input_path() == fs::path("in.jsonl"));
}

TEST_CASE("stage seeds are distinct and stable") {
  ExperimentConfig c;
  c.seed = 7;
  CHECK(stage_seed(c, "sft") == stage_seed(c, "sft"));
  CHECK(stage_seed(c, "sft") != stage_seed(c, "ppo"));
  auto other = c;
  other.seed = 8;
  CHECK(stage_seed(c, "sft") != stage_seed(other, "sft"));
}

TEST_CASE("commands map errors to exit codes") {
  TempDir tmp("harness-exit");
  auto c = small_config(tmp.path());
  auto no_seed = c;
  no_seed.seed.reset();
  CHECK(cmd_synth(no_seed) == kExitConfig);
  CHECK(cmd_ingest(c) == kExitConfig);  // no input yet
  CHECK(run_command("frobnicate", c) == kExitConfig);

  {
    std::ofstream os(tmp.path() / "garbage.bin");
    os << "not a model";
  }
  REQUIRE(cmd_synth(c) == kExitOk);
  auto broken = c;
  broken.market_scorer = "rarity_oracle";
  broken.paths.sft_policy = tmp.path() / "garbage.bin";
  CHECK(cmd_ppo(broken) == kExitRuntime);
}

TEST_CASE("ingest of an empty file reports zero counts") {
  TempDir tmp("harness-empty");
  auto c = small_config(tmp.path() / "out");
  c.paths.input = tmp.path() / "empty.jsonl";
  std::ofstream(c.paths.input).close();
  REQUIRE(cmd_ingest(c) == kExitOk);
  auto stats = read_json(tmp.path() / "out" / "clean_stats.json");
  CHECK(stats["records_in"] == 0);
  CHECK(stats["records_out"] == 0);
  CHECK(stats["stages"].size() == 5);
  for (const auto& s : stats["stages"]) {
    CHECK(s["records_removed"] == 0);
    CHECK(s["fraction_removed"] == 0.0);
  }
  CHECK(slurp(tmp.path() / "out" / "cleaned.jsonl").empty());
  CHECK(fs::exists(tmp.path() / "out" / "clean_stats.csv"));
  CHECK(fs::exists(tmp.path() / "out" / "config.json"));
}

TEST_CASE("ingest of the planted corpus matches the plants") {
  TempDir tmp("harness-planted");
  auto corpus = mvp::testing::planted_corpus();
  auto c = small_config(tmp.path() / "out");
  c.paths.input = tmp.path() / "corpus.jsonl";
  {
    std::ofstream os(c.paths.input);
    mvp::collection::write_records(os, corpus.records);
    os << "{not json\n";
  }
  REQUIRE(cmd_ingest(c) == kExitOk);
  auto stats = read_json(tmp.path() / "out" / "clean_stats.json");
  CHECK(stats["parse_rejects"] == 1);
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(stats["stages"][k]["records_removed"] == corpus.removed_by_stage[k].size());
    CHECK(stats["stages"][k]["collections_removed"] == corpus.collections_removed_by_stage[k]);
  }
  std::ifstream is(tmp.path() / "out" / "cleaned.jsonl");
  auto kept = mvp::ingest::parse_records(is).records;
  std::size_t removed = 0;
  for (const auto& s : corpus.removed_by_stage) removed += s.size();
  CHECK(kept.size() == corpus.records.size() - removed);
  for (const auto& r : kept) {
    for (const auto& s : corpus.removed_by_stage) CHECK_FALSE(s.contains(mvp::testing::record_key(r)));
  }
}

TEST_CASE("rarity report equals the library ranking") {
  TempDir tmp("harness-rarity");
  auto c = small_config(tmp.path());
  c.synth.n_items = 1000;
  REQUIRE(cmd_synth(c) == kExitOk);
  REQUIRE(cmd_rarity(c) == kExitOk);
  auto report = read_json(tmp.path() / "rarity.json");
  std::map<std::string, int> tiers;
  for (const auto& e : report["entries"]) tiers[e["tier"].get<std::string>()]++;
  CHECK(tiers["High"] == 50);
  CHECK(tiers["Medium"] == 550);
  CHECK(tiers["Low"] == 400);

  std::ifstream is(tmp.path() / "collection.jsonl");
  auto records = mvp::ingest::parse_records(is).records;
  auto collections = mvp::collection::group_by_collection(records);
  REQUIRE(collections.size() == 1);
  std::ostringstream expected;
  mvp::collection::write_report_csv(expected, mvp::collection::rank_collection(collections[0]));
  CHECK(slurp(tmp.path() / "rarity.csv") == expected.str());
}

TEST_CASE("rarity of a single item and of several collections") {
  TempDir tmp("harness-rarity-small");
  auto c = small_config(tmp.path() / "one");
  c.paths.input = tmp.path() / "one.jsonl";
  {
    std::ofstream os(c.paths.input);
    mvp::collection::write_records(os, {mvp::testing::make_record("solo", "1", {{"A", "x"}})});
  }
  REQUIRE(cmd_rarity(c) == kExitOk);
  CHECK(slurp(tmp.path() / "one" / "rarity.csv") ==
        "token_id,rarity,rank,percentile,tier\n1,1,1,1,High\n");

  auto corpus = mvp::testing::planted_corpus();
  auto m = small_config(tmp.path() / "many");
  m.paths.input = tmp.path() / "many.jsonl";
  {
    std::ofstream os(m.paths.input);
    mvp::collection::write_records(os, corpus.records);
  }
  REQUIRE(cmd_rarity(m) == kExitOk);
  auto summary = read_json(tmp.path() / "many" / "rarity_summary.json");
  CHECK(summary.size() == 4);
  for (const auto& s : summary) {
    CHECK(fs::exists(tmp.path() / "many" / (s["file"].get<std::string>() + ".csv")));
  }
}

TEST_CASE("full pipeline is reproducible") {
  TempDir tmp("harness-pipeline");
  auto c = small_config(tmp.path());
  REQUIRE(cmd_synth(c) == kExitOk);
  REQUIRE(cmd_train_mv(c) == kExitOk);
  const auto model = slurp(tmp.path() / "mv_model.bin");
  const auto loss = slurp(tmp.path() / "mv_loss.csv");
  auto confusion = read_json(tmp.path() / "confusion_matrix.json");
  REQUIRE(cmd_train_mv(c) == kExitOk);
  CHECK(slurp(tmp.path() / "mv_model.bin") == model);
  CHECK(slurp(tmp.path() / "mv_loss.csv") == loss);
  long total = 0;
  for (const auto& row : confusion["counts"]) {
    for (const auto& x : row) total += x.get<long>();
  }
  CHECK(total == confusion["total"].get<long>());
  CHECK(total == confusion["n_holdout"].get<long>());
  CHECK(total == 40);  // 20% of 200 held out

  REQUIRE(cmd_sft(c) == kExitOk);
  CHECK(fs::exists(tmp.path() / "sft_policy.bin"));
  CHECK(fs::exists(tmp.path() / "sft_loss.json"));

  REQUIRE(cmd_ppo(c) == kExitOk);
  const auto metrics = slurp(tmp.path() / "ppo_metrics.csv");
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 1 + 5);
  CHECK(read_json(tmp.path() / "ppo_metrics.json").size() == 5);
  REQUIRE(cmd_ppo(c) == kExitOk);
  CHECK(slurp(tmp.path() / "ppo_metrics.csv") == metrics);

  REQUIRE(cmd_eval(c) == kExitOk);
  const auto table = slurp(tmp.path() / "eval_table.csv");
  const auto table_json = slurp(tmp.path() / "eval_table.json");
  REQUIRE(cmd_eval(c) == kExitOk);
  CHECK(slurp(tmp.path() / "eval_table.csv") == table);
  CHECK(slurp(tmp.path() / "eval_table.json") == table_json);
  CHECK(table.starts_with("variant,"));
  CHECK(std::count(table.begin(), table.end(), '\n') == 4);
  for (const auto& entry : fs::directory_iterator(tmp.path())) {
    CHECK_FALSE(entry.path().filename().string().starts_with(".staging"));
  }
}

TEST_CASE("identity generator keeps the user prompt fully relevant") {
  TempDir tmp("harness-identity");
  auto c = small_config(tmp.path());
  c.generator.keep_prob = 1.0;
  c.generator.extra_attr_rate = 0.0;
  c.market_scorer = "rarity_oracle";
  REQUIRE(cmd_synth(c) == kExitOk);
  auto world = build_world(c, true);
  auto table = evaluate_variants(c, *world, nullptr, nullptr);
  const auto& none = table.row("no-policy");
  CHECK(none.mean_relevance == 1.0);
  CHECK(none.mean_r_mkt == 0.0);
  CHECK(none.mean_r_aes == 0.0);
}

TEST_CASE("cli exit codes") {
  TempDir tmp("harness-cli");
  const auto out = tmp.path().string();
  CHECK(run_cli(fmt::format("synth --seed 3 --out \"{}\"", out)) == kExitOk);
  CHECK(fs::exists(tmp.path() / "collection.jsonl"));
  CHECK(fs::exists(tmp.path() / "config.json"));
  CHECK(run_cli(fmt::format("synth --out \"{}\"", out)) == kExitConfig);
  CHECK(run_cli("no-such-verb") == kExitConfig);
  CHECK(run_cli(fmt::format("ingest --seed 3 --out \"{}\" --min-side -4", out)) == kExitConfig);

  {
    std::ofstream os(tmp.path() / "bad.json");
    os << R"({"seed": 1, "colour": "blue"})";
  }
  CHECK(run_cli(fmt::format("ingest --config \"{}\"", (tmp.path() / "bad.json").string())) ==
        kExitConfig);
  CHECK(run_cli(fmt::format("ingest --seed 3 --out \"{}\" --input \"{}\" --min-props 2 "
                            "--dup-ratio-max 0.4 --blocklist http,0x",
                            out, (tmp.path() / "collection.jsonl").string())) == kExitOk);
  auto echo = read_json(tmp.path() / "config.json");
  CHECK(echo["pipeline"]["min_props"] == 2);
  CHECK(echo["pipeline"]["dup_ratio_max"] == 0.4);
  CHECK(echo["pipeline"]["blocklist"] == json::array({"http", "0x"}));

  {
    std::ofstream os(tmp.path() / "junk.bin");
    os << "junk";
  }
  auto cfg = json{{"seed", 3},
                  {"rewards", {{"market_scorer", "rarity_oracle"}}},
                  {"paths", {{"out_dir", out}, {"sft_policy", (tmp.path() / "junk.bin").string()}}}};
  {
    std::ofstream os(tmp.path() / "junk.json");
    os << cfg.dump();
  }
  CHECK(run_cli(fmt::format("ppo --config \"{}\"", (tmp.path() / "junk.json").string())) ==
        kExitRuntime);
}
