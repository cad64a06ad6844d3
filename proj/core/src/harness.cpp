#include "mvp/harness.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>
#include <string_view>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mvp/collection.hpp"
#include "mvp/record_io.hpp"
#include "mvp/rng.hpp"

namespace mvp::harness {

using nlohmann::json;
using collection::NftRecord;

namespace {

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("{}: expected an object", name()));
  }

  template <typename T>
  void get(const char* key, T& dst) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      dst = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(fmt::format("{}.{}: wrong type", name(), key));
    }
  }

  void get_path(const char* key, fs::path& dst) {
    std::string s = dst.string();
    get(key, s);
    dst = s;
  }

  bool has(const char* key) const { return j_.contains(key); }

  /// Child reader for an optional nested object; nullopt when absent.
  std::optional<ObjectReader> child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return std::nullopt;
    return ObjectReader(*it, where_.empty() ? key : where_ + "." + key);
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(fmt::format("unknown key: {}", qualified(key)));
    }
  }

 private:
  std::string name() const { return where_.empty() ? "config" : where_; }
  std::string qualified(const std::string& key) const {
    return where_.empty() ? key : where_ + "." + key;
  }

  const json& j_;
  std::string where_;
  std::set<std::string, std::less<>> seen_;
};

std::string ratio_reference_name(policy::RatioReference r) {
  return r == policy::RatioReference::kSft ? "sft" : "rollout";
}

// Outputs are written into a hidden directory beside the final location and
// renamed into place by commit(); an abandoned stage is removed.
class Staging {
 public:
  explicit Staging(fs::path out_dir) : out_(std::move(out_dir)) {
    fs::create_directories(out_);
    Rng rng(derive_seed(static_cast<std::uint64_t>(
                            std::chrono::steady_clock::now().time_since_epoch().count()),
                        reinterpret_cast<std::uintptr_t>(this)));
    tmp_ = out_ / fmt::format(".staging-{:016x}", rng.next_u64());
    fs::create_directories(tmp_);
  }
  ~Staging() {
    std::error_code ec;
    fs::remove_all(tmp_, ec);
  }
  Staging(const Staging&) = delete;
  Staging& operator=(const Staging&) = delete;

  fs::path path(const std::string& name) {
    names_.push_back(name);
    return tmp_ / name;
  }

  std::ofstream open(const std::string& name) {
    std::ofstream os(path(name), std::ios::binary);
    if (!os) throw std::runtime_error(fmt::format("cannot write {}", (tmp_ / name).string()));
    return os;
  }

  void write_text(const std::string& name, const std::string& text) {
    auto os = open(name);
    os << text;
    if (!os) throw std::runtime_error(fmt::format("write failed: {}", name));
  }

  void write_json(const std::string& name, const json& j) { write_text(name, j.dump(2) + "\n"); }

  void commit() {
    for (const auto& name : names_) fs::rename(tmp_ / name, out_ / name);
    names_.clear();
  }

 private:
  fs::path out_;
  fs::path tmp_;
  std::vector<std::string> names_;
};

void require_file(const fs::path& p, std::string_view what) {
  if (p.empty()) throw ConfigError(fmt::format("{}: no path configured", what));
  if (!fs::exists(p)) throw ConfigError(fmt::format("{} not found: {}", what, p.string()));
}

std::string fmt_double(double x) { return fmt::format("{:.12g}", x); }

std::vector<NftRecord> load_records(const ExperimentConfig& config) {
  const auto path = config.input_path();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(fmt::format("cannot read {}", path.string()));
  return collection::read_records(is);
}

// Filesystem-safe file stem for a collection id.
std::string file_stem(std::string_view id) {
  std::string out;
  for (char c : id) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    out += ok ? c : '_';
  }
  return out.empty() ? "collection" : out;
}

json report_json(const collection::RarityReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"token_id", e.token_id},
                       {"rarity", e.rarity},
                       {"rank", e.rank},
                       {"percentile", e.percentile},
                       {"tier", std::string(collection::to_string(e.tier))}});
  }
  return {{"collection_id", r.collection_id},
          {"n_items", r.entries.size()},
          {"tier_counts",
           {{"High", r.count(collection::Tier::kHigh)},
            {"Medium", r.count(collection::Tier::kMedium)},
            {"Low", r.count(collection::Tier::kLow)}}},
          {"entries", entries}};
}

std::string confusion_csv(const reward::ConfusionMatrix& cm) {
  std::string out = "prediction";
  const int n = static_cast<int>(cm.counts.size());
  auto name = [n](int c) {
    return n == 3 ? std::string(collection::to_string(collection::tier_from_class(c)))
                  : std::to_string(c);
  };
  for (int t = 0; t < n; ++t) out += ",truth_" + name(t);
  out += "\n";
  for (int p = 0; p < n; ++p) {
    out += name(p);
    for (int t = 0; t < n; ++t) out += fmt::format(",{}", cm.counts[p][t]);
    out += "\n";
  }
  return out;
}

json metrics_json(const std::vector<policy::IterationMetrics>& rows) {
  json arr = json::array();
  for (const auto& m : rows) {
    arr.push_back({{"iteration", m.iteration},
                   {"mean_reward", m.mean_reward},
                   {"mean_r_mkt", m.mean_r_mkt},
                   {"mean_r_aes", m.mean_r_aes},
                   {"mean_r_clip", m.mean_r_clip},
                   {"mean_kl", m.mean_kl},
                   {"policy_loss", m.policy_loss},
                   {"critic_loss", m.critic_loss}});
  }
  return arr;
}

policy::ActorCritic load_policy(const fs::path& path, const policy::Vocabulary& vocab,
                                std::string_view what) {
  auto p = policy::ActorCritic::load(path.string());
  if (p.vocab_size() != vocab.size()) {
    throw std::runtime_error(fmt::format("{} vocabulary size {} does not match records ({})", what,
                                         p.vocab_size(), vocab.size()));
  }
  return p;
}

template <typename F>
int guarded(std::string_view verb, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    spdlog::error("{}: {}", verb, e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}: {}", verb, e.what());
    return kExitRuntime;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  ObjectReader root(j, "");
  root.get("label", c.label);
  if (root.has("seed")) {
    std::uint64_t s = 0;
    root.get("seed", s);
    c.seed = s;
  }

  if (auto r = root.child("paths")) {
    r->get_path("input", c.paths.input);
    r->get_path("out_dir", c.paths.out_dir);
    r->get_path("mv_model", c.paths.mv_model);
    r->get_path("sft_policy", c.paths.sft_policy);
    r->get_path("ppo_policy", c.paths.ppo_policy);
    r->finish();
  }
  if (auto r = root.child("pipeline")) {
    r->get("min_side", c.pipeline.min_side);
    r->get("min_props", c.pipeline.min_props);
    r->get("dup_ratio_max", c.pipeline.dup_ratio_max);
    r->get("blocklist", c.pipeline.blocklist);
    r->get("stages", c.pipeline.stages);
    r->finish();
  }
  if (auto r = root.child("synth")) {
    r->get("n_items", c.synth.n_items);
    r->get("n_trait_types", c.synth.n_trait_types);
    r->get("values_per_type", c.synth.values_per_type);
    r->get("zipf_skew", c.synth.zipf_skew);
    r->get("presence_prob", c.synth.presence_prob);
    r->get("collection_id", c.synth.collection_id);
    r->get("side", c.synth.side);
    r->finish();
  }
  if (auto r = root.child("generator")) {
    r->get("keep_prob", c.generator.keep_prob);
    r->get("extra_attr_rate", c.generator.extra_attr_rate);
    r->get("pair_draw_seeds", c.generator.pair_draw_seeds);
    r->finish();
  }
  if (auto r = root.child("rewards")) {
    r->get("lambda_mkt", c.weights.lambda_mkt);
    r->get("lambda_aes", c.weights.lambda_aes);
    r->get("lambda_rel", c.weights.lambda_rel);
    r->get("beta", c.weights.beta);
    r->get("zeta", c.weights.zeta);
    r->get("market_scorer", c.market_scorer);
    if (auto a = r->child("aesthetic")) {
      a->get("pleasing", c.aesthetic.pleasing);
      a->get("pleasing_count", c.aesthetic.pleasing_count);
      a->finish();
    }
    r->finish();
  }
  if (auto r = root.child("mv")) {
    r->get("hidden", c.mlp.hidden);
    r->get("leaky_slope", c.mlp.leaky_slope);
    r->get("batch_norm", c.mlp.batch_norm);
    r->get("steps", c.mv_train.steps);
    r->get("batch_size", c.mv_train.batch_size);
    r->get("learning_rate", c.mv_train.learning_rate);
    r->get("balanced_sampling", c.mv_train.balanced_sampling);
    r->get("holdout_fraction", c.holdout_fraction);
    r->finish();
  }
  if (auto r = root.child("sft")) {
    r->get("discard_prob", c.sft_discard_prob);
    r->get("hidden", c.policy.hidden);
    r->get("max_positions", c.policy.max_positions);
    r->get("epochs", c.sft.epochs);
    r->get("batch_size", c.sft.batch_size);
    r->get("learning_rate", c.sft.learning_rate);
    r->get("max_grad_norm", c.sft.max_grad_norm);
    r->finish();
  }
  if (auto r = root.child("ppo")) {
    auto& p = c.ppo;
    r->get("clip_eps", p.clip_eps);
    r->get("gamma", p.gamma);
    r->get("kl_weight", p.kl_weight);
    r->get("policy_loss_weight", p.policy_loss_weight);
    r->get("critic_loss_weight", p.critic_loss_weight);
    r->get("samples_per_prompt", p.samples_per_prompt);
    r->get("learning_rate", p.learning_rate);
    r->get("max_grad_norm", p.max_grad_norm);
    r->get("batch_size", p.batch_size);
    r->get("epochs", p.epochs);
    r->get("iterations", p.iterations);
    r->get("max_len", p.max_len);
    r->get("temperature", p.temperature);
    r->get("kl_ceiling", p.kl_ceiling);
    std::string ref = ratio_reference_name(p.ratio_reference);
    r->get("ratio_reference", ref);
    if (ref == "rollout") {
      p.ratio_reference = policy::RatioReference::kRolloutSnapshot;
    } else if (ref == "sft") {
      p.ratio_reference = policy::RatioReference::kSft;
    } else {
      throw ConfigError("ppo.ratio_reference must be \"rollout\" or \"sft\"");
    }
    r->finish();
  }
  if (auto r = root.child("prompts")) {
    r->get("min_attrs", c.prompts.min_attrs);
    r->get("max_attrs", c.prompts.max_attrs);
    r->get("eval_count", c.prompts.eval_count);
    r->finish();
  }
  if (auto r = root.child("eval")) {
    r->get("samples", c.eval.samples);
    r->get("temperature", c.eval.temperature);
    r->finish();
  }
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError(fmt::format("cannot read config {}", path.string()));
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config {} is not valid JSON: {}", path.string(), e.what()));
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  json j;
  j["label"] = label;
  if (seed) j["seed"] = *seed;
  j["paths"] = {{"input", paths.input.string()},
                {"out_dir", paths.out_dir.string()},
                {"mv_model", paths.mv_model.string()},
                {"sft_policy", paths.sft_policy.string()},
                {"ppo_policy", paths.ppo_policy.string()}};
  j["pipeline"] = {{"min_side", pipeline.min_side},
                   {"min_props", pipeline.min_props},
                   {"dup_ratio_max", pipeline.dup_ratio_max},
                   {"blocklist", pipeline.blocklist},
                   {"stages", pipeline.stages}};
  j["synth"] = {{"n_items", synth.n_items},
                {"n_trait_types", synth.n_trait_types},
                {"values_per_type", synth.values_per_type},
                {"zipf_skew", synth.zipf_skew},
                {"presence_prob", synth.presence_prob},
                {"collection_id", synth.collection_id},
                {"side", synth.side}};
  j["generator"] = {{"keep_prob", generator.keep_prob},
                    {"extra_attr_rate", generator.extra_attr_rate},
                    {"pair_draw_seeds", generator.pair_draw_seeds}};
  j["rewards"] = {{"lambda_mkt", weights.lambda_mkt},
                  {"lambda_aes", weights.lambda_aes},
                  {"lambda_rel", weights.lambda_rel},
                  {"beta", weights.beta},
                  {"zeta", weights.zeta},
                  {"market_scorer", market_scorer},
                  {"aesthetic",
                   {{"pleasing", aesthetic.pleasing}, {"pleasing_count", aesthetic.pleasing_count}}}};
  j["mv"] = {{"hidden", mlp.hidden},
             {"leaky_slope", mlp.leaky_slope},
             {"batch_norm", mlp.batch_norm},
             {"steps", mv_train.steps},
             {"batch_size", mv_train.batch_size},
             {"learning_rate", mv_train.learning_rate},
             {"balanced_sampling", mv_train.balanced_sampling},
             {"holdout_fraction", holdout_fraction}};
  j["sft"] = {{"discard_prob", sft_discard_prob},
              {"hidden", policy.hidden},
              {"max_positions", policy.max_positions},
              {"epochs", sft.epochs},
              {"batch_size", sft.batch_size},
              {"learning_rate", sft.learning_rate},
              {"max_grad_norm", sft.max_grad_norm}};
  j["ppo"] = {{"clip_eps", ppo.clip_eps},
              {"gamma", ppo.gamma},
              {"kl_weight", ppo.kl_weight},
              {"policy_loss_weight", ppo.policy_loss_weight},
              {"critic_loss_weight", ppo.critic_loss_weight},
              {"samples_per_prompt", ppo.samples_per_prompt},
              {"learning_rate", ppo.learning_rate},
              {"max_grad_norm", ppo.max_grad_norm},
              {"batch_size", ppo.batch_size},
              {"epochs", ppo.epochs},
              {"iterations", ppo.iterations},
              {"max_len", ppo.max_len},
              {"temperature", ppo.temperature},
              {"kl_ceiling", ppo.kl_ceiling},
              {"ratio_reference", ratio_reference_name(ppo.ratio_reference)}};
  j["prompts"] = {{"min_attrs", prompts.min_attrs},
                  {"max_attrs", prompts.max_attrs},
                  {"eval_count", prompts.eval_count}};
  j["eval"] = {{"samples", eval.samples}, {"temperature", eval.temperature}};
  return j;
}

void ExperimentConfig::validate() const {
  auto check = [](bool ok, std::string_view msg) {
    if (!ok) throw ConfigError(std::string(msg));
  };
  check(!label.empty(), "label must not be empty");
  check(!paths.out_dir.empty(), "paths.out_dir must not be empty");
  check(pipeline.min_side > 0, "pipeline.min_side must be positive");
  check(pipeline.dup_ratio_max >= 0.0 && pipeline.dup_ratio_max <= 1.0,
        "pipeline.dup_ratio_max must lie in [0, 1]");
  check(pipeline.stages >= 1 && pipeline.stages <= 5, "pipeline.stages must be in 1..5");
  check(synth.n_items > 0, "synth.n_items must be positive");
  check(synth.n_trait_types > 0 && synth.values_per_type > 0, "synth vocabulary must be non-empty");
  check(synth.zipf_skew >= 0.0, "synth.zipf_skew must be non-negative");
  check(synth.presence_prob > 0.0 && synth.presence_prob <= 1.0,
        "synth.presence_prob must lie in (0, 1]");
  check(generator.keep_prob >= 0.0 && generator.keep_prob <= 1.0,
        "generator.keep_prob must lie in [0, 1]");
  check(generator.extra_attr_rate >= 0.0, "generator.extra_attr_rate must be non-negative");
  try {
    weights.validate();
    ppo.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  check(market_scorer == "classifier" || market_scorer == "rarity_oracle",
        "rewards.market_scorer must be \"classifier\" or \"rarity_oracle\"");
  check(!mlp.hidden.empty(), "mv.hidden must list at least one layer");
  for (auto h : mlp.hidden) check(h > 0, "mv.hidden widths must be positive");
  check(mv_train.steps > 0 && mv_train.batch_size > 0, "mv.steps and mv.batch_size must be positive");
  check(mv_train.learning_rate > 0.0, "mv.learning_rate must be positive");
  check(holdout_fraction > 0.0 && holdout_fraction < 1.0, "mv.holdout_fraction must lie in (0, 1)");
  check(sft_discard_prob >= 0.0 && sft_discard_prob < 1.0, "sft.discard_prob must lie in [0, 1)");
  check(policy.hidden > 0 && policy.max_positions > 0, "sft.hidden and sft.max_positions must be positive");
  check(sft.epochs > 0 && sft.batch_size > 0 && sft.learning_rate > 0.0,
        "sft.epochs, sft.batch_size and sft.learning_rate must be positive");
  check(prompts.min_attrs >= 1 && prompts.min_attrs <= prompts.max_attrs,
        "prompts need 1 <= min_attrs <= max_attrs");
  check(prompts.eval_count > 0, "prompts.eval_count must be positive");
  check(eval.samples > 0, "eval.samples must be positive");
  check(eval.temperature >= 0.0, "eval.temperature must be non-negative");
  for (const auto& label : aesthetic.pleasing) {
    check(label.find(':') != std::string::npos, "aesthetic.pleasing entries must be trait:value");
  }
}

std::uint64_t ExperimentConfig::require_seed() const {
  if (!seed) throw ConfigError("seed is mandatory (config key \"seed\" or --seed)");
  return *seed;
}

fs::path ExperimentConfig::input_path() const {
  return paths.input.empty() ? paths.out_dir / "collection.jsonl" : paths.input;
}
fs::path ExperimentConfig::mv_model_path() const {
  return paths.mv_model.empty() ? paths.out_dir / "mv_model.bin" : paths.mv_model;
}
fs::path ExperimentConfig::sft_policy_path() const {
  return paths.sft_policy.empty() ? paths.out_dir / "sft_policy.bin" : paths.sft_policy;
}
fs::path ExperimentConfig::ppo_policy_path() const {
  return paths.ppo_policy.empty() ? paths.out_dir / "ppo_policy.bin" : paths.ppo_policy;
}

std::uint64_t stage_seed(const ExperimentConfig& config, std::string_view stage) {
  return derive_seed(config.require_seed(), fnv1a(stage));
}

// ---------------------------------------------------------------------------
// Shared pieces

reward::RewardModels World::models(const reward::RewardWeights& w) const {
  reward::RewardModels m;
  m.market = oracle ? static_cast<const reward::MarketScorer*>(&*oracle)
                    : (classifier_scorer ? &*classifier_scorer : nullptr);
  m.aesthetic = aesthetic ? &*aesthetic : nullptr;
  m.relevance = relevance ? &*relevance : nullptr;
  m.weights = w;
  return m;
}

std::unique_ptr<World> build_world(const ExperimentConfig& config, bool need_market) {
  auto w = std::make_unique<World>();
  w->records = load_records(config);
  if (w->records.empty()) throw std::runtime_error("record file holds no records");
  w->collections = collection::group_by_collection(w->records);
  w->vocab = policy::Vocabulary::from_records(w->records);
  if (w->vocab.attribute_count() == 0) throw std::runtime_error("records carry no properties");

  // Extra attributes follow how often each attribute occurs across all items.
  std::vector<double> weights(w->vocab.attribute_count(), 0.0);
  for (const auto& r : w->records) {
    for (const auto& p : r.properties) weights[w->vocab.index_of(p)] += 1.0;
  }
  w->generator.vocab = w->vocab;
  w->generator.keep_prob = config.generator.keep_prob;
  w->generator.extra_attr_rate = config.generator.extra_attr_rate;
  w->generator.extra_weights = std::move(weights);
  w->generator.seed = stage_seed(config, "generator");
  w->generator.pair_draw_seeds = config.generator.pair_draw_seeds;
  w->generator.validate();

  std::map<int, double> pleasing;
  if (!config.aesthetic.pleasing.empty()) {
    for (const auto& label : config.aesthetic.pleasing) {
      const auto colon = label.find(':');
      auto key = collection::PropertyKey::make(label.substr(0, colon), label.substr(colon + 1));
      auto idx = w->vocab.find(key);
      if (!idx) throw ConfigError(fmt::format("pleasing attribute not in vocabulary: {}", label));
      pleasing[*idx] = 1.0;
    }
  } else {
    std::vector<int> all(w->vocab.attribute_count());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    Rng rng(stage_seed(config, "aesthetic"));
    rng.shuffle(all);
    const auto n = std::min(config.aesthetic.pleasing_count, all.size());
    for (std::size_t i = 0; i < n; ++i) pleasing[all[i]] = 1.0;
  }
  w->aesthetic.emplace(std::move(pleasing));
  w->relevance.emplace(w->vocab);

  if (need_market) {
    if (config.market_scorer == "rarity_oracle") {
      const auto largest = std::max_element(
          w->collections.begin(), w->collections.end(),
          [](const auto& a, const auto& b) { return a.size() < b.size(); });
      w->oracle.emplace(*largest, w->vocab);
    } else {
      w->classifier.emplace(reward::MvClassifier::load(config.mv_model_path().string()));
      if (w->classifier->config().input_dim != w->vocab.attribute_count()) {
        throw std::runtime_error(fmt::format(
            "market classifier expects {} attributes, records have {}",
            w->classifier->config().input_dim, w->vocab.attribute_count()));
      }
      w->classifier_scorer.emplace(*w->classifier, w->vocab);
    }
  }
  return w;
}

std::vector<int> sample_user_prompt(const World& world, const ExperimentConfig& config, Rng& rng) {
  // Records without properties cannot seed a prompt; retry a bounded number of times.
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const auto& record = world.records[rng.uniform_index(world.records.size())];
    if (record.properties.empty()) continue;
    std::vector<int> tokens;
    for (const auto& p : record.properties) tokens.push_back(world.vocab.index_of(p));
    rng.shuffle(tokens);
    const auto hi = std::min(config.prompts.max_attrs, tokens.size());
    const auto lo = std::min(config.prompts.min_attrs, hi);
    const auto n = lo + rng.uniform_index(hi - lo + 1);
    tokens.resize(n);
    return tokens;
  }
  throw std::runtime_error("no record with properties to build a prompt from");
}

const EvalRow& EvalTable::row(std::string_view variant) const {
  for (const auto& r : rows) {
    if (r.variant == variant) return r;
  }
  throw std::out_of_range(fmt::format("no eval row {}", variant));
}

json EvalTable::to_json() const {
  json arr = json::array();
  for (const auto& r : rows) {
    arr.push_back({{"variant", r.variant},
                   {"mean_mv", r.mean_mv},
                   {"mean_aesthetic", r.mean_aesthetic},
                   {"mean_relevance", r.mean_relevance},
                   {"mean_total_reward", r.mean_total_reward},
                   {"mean_r_mkt", r.mean_r_mkt},
                   {"mean_r_aes", r.mean_r_aes},
                   {"mean_r_clip", r.mean_r_clip},
                   {"samples", r.samples}});
  }
  return {{"seed", seed},
          {"prompt_count", prompt_count},
          {"prompt_source", prompt_source},
          {"rows", arr}};
}

std::string EvalTable::to_csv() const {
  std::string out =
      "variant,mean_mv,mean_aesthetic,mean_relevance,mean_total_reward,mean_r_mkt,mean_r_aes,"
      "mean_r_clip,samples,seed\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", r.variant, fmt_double(r.mean_mv),
                       fmt_double(r.mean_aesthetic), fmt_double(r.mean_relevance),
                       fmt_double(r.mean_total_reward), fmt_double(r.mean_r_mkt),
                       fmt_double(r.mean_r_aes), fmt_double(r.mean_r_clip), r.samples, seed);
  }
  return out;
}

EvalTable evaluate_variants(const ExperimentConfig& config, const World& world,
                            const policy::ActorCritic* sft, const policy::ActorCritic* ppo) {
  const auto seed = stage_seed(config, "eval");
  Rng prompt_rng(derive_seed(seed, 1));
  std::vector<std::vector<int>> prompts;
  for (std::size_t i = 0; i < config.prompts.eval_count; ++i) {
    prompts.push_back(sample_user_prompt(world, config, prompt_rng));
  }
  const auto models = world.models(config.weights);

  EvalTable table;
  table.seed = config.require_seed();
  table.prompt_count = prompts.size();
  table.prompt_source = fmt::format(
      "seeded sampler: {}-{} properties of a uniformly drawn collection item",
      config.prompts.min_attrs, config.prompts.max_attrs);

  const std::pair<const char*, const policy::ActorCritic*> variants[] = {
      {"no-policy", nullptr}, {"sft-policy", sft}, {"ppo-policy", ppo}};
  for (const auto& [name, pol] : variants) {
    if (pol == nullptr && std::string_view(name) != "no-policy") continue;
    EvalRow row;
    row.variant = name;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const auto& user = prompts[i];
      std::vector<int> adapted = user;
      if (pol != nullptr) {
        Rng rng(derive_seed(seed, 2, i));
        auto c = policy::sample_completion(*pol, user, config.ppo.max_len, config.eval.temperature,
                                           rng);
        adapted = env::adapted_prompt(world.vocab, user,
                                      policy::completion_attributes(*pol, c.tokens));
      }
      auto ep = env::run_episode(world.generator, models, user, adapted, config.eval.samples,
                                 derive_seed(seed, 3, i));
      row.mean_mv += ep.mv_score;
      row.mean_aesthetic += ep.aesthetic;
      row.mean_relevance += ep.relevance;
      row.mean_total_reward += ep.bundle.total;
      row.mean_r_mkt += ep.bundle.r_mkt;
      row.mean_r_aes += ep.bundle.r_aes;
      row.mean_r_clip += ep.bundle.r_clip;
    }
    const double n = static_cast<double>(prompts.size());
    for (double* v : {&row.mean_mv, &row.mean_aesthetic, &row.mean_relevance,
                      &row.mean_total_reward, &row.mean_r_mkt, &row.mean_r_aes, &row.mean_r_clip}) {
      *v /= n;
    }
    row.samples = prompts.size() * static_cast<std::size_t>(config.eval.samples);
    table.rows.push_back(row);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(const ExperimentConfig& config) {
  return guarded("synth", [&] {
    config.validate();
    auto opts = config.synth;
    opts.seed = stage_seed(config, "synth");
    if (opts.collection_id.empty()) opts.collection_id = fmt::format("synth-{}", *config.seed);
    auto c = ingest::synth_collection(opts);

    Staging out(config.paths.out_dir);
    {
      auto os = out.open("collection.jsonl");
      collection::write_records(os, c.items());
    }
    out.write_json("config.json", config.to_json());
    out.commit();
    spdlog::info("synth: wrote {} items to {}", c.size(),
                 (config.paths.out_dir / "collection.jsonl").string());
    return kExitOk;
  });
}

int cmd_ingest(const ExperimentConfig& config) {
  return guarded("ingest", [&] {
    config.validate();
    config.require_seed();
    const auto input = config.input_path();
    require_file(input, "input records");

    std::ifstream is(input, std::ios::binary);
    if (!is) throw std::runtime_error(fmt::format("cannot read {}", input.string()));
    auto parsed = ingest::parse_records(is);
    if (is.bad()) throw std::runtime_error(fmt::format("read error on {}", input.string()));
    auto run = ingest::run_pipeline(parsed.records, config.pipeline);

    Staging out(config.paths.out_dir);
    {
      auto os = out.open("cleaned.jsonl");
      collection::write_records(os, run.kept);
    }
    {
      auto os = out.open("rejects.jsonl");
      ingest::write_rejects(os, parsed.rejects);
    }
    {
      auto os = out.open("clean_stats.csv");
      ingest::write_stats_csv(os, run.stats);
    }
    {
      auto os = out.open("clean_stats.txt");
      ingest::write_stats_text(os, run.stats);
    }
    auto stats = ingest::to_json(run.stats);
    stats["parse_rejects"] = parsed.rejects.size();
    out.write_json("clean_stats.json", stats);
    out.write_json("config.json", config.to_json());
    out.commit();
    spdlog::info("ingest: {} parsed, {} rejected at parse, {} kept", parsed.records.size(),
                 parsed.rejects.size(), run.kept.size());
    return kExitOk;
  });
}

int cmd_rarity(const ExperimentConfig& config) {
  return guarded("rarity", [&] {
    config.validate();
    config.require_seed();
    require_file(config.input_path(), "input records");
    auto records = load_records(config);
    auto collections = collection::group_by_collection(records);

    Staging out(config.paths.out_dir);
    json summary = json::array();
    for (const auto& c : collections) {
      auto report = collection::rank_collection(c);
      const auto name =
          collections.size() == 1 ? std::string("rarity") : "rarity-" + file_stem(c.id());
      {
        auto os = out.open(name + ".csv");
        collection::write_report_csv(os, report);
      }
      out.write_json(name + ".json", report_json(report));
      summary.push_back({{"collection_id", c.id()},
                         {"file", name},
                         {"n_items", c.size()},
                         {"High", report.count(collection::Tier::kHigh)},
                         {"Medium", report.count(collection::Tier::kMedium)},
                         {"Low", report.count(collection::Tier::kLow)}});
    }
    if (collections.size() != 1) out.write_json("rarity_summary.json", summary);
    out.write_json("config.json", config.to_json());
    out.commit();
    spdlog::info("rarity: ranked {} collection(s)", collections.size());
    return kExitOk;
  });
}

int cmd_train_mv(const ExperimentConfig& config) {
  return guarded("train-mv", [&] {
    config.validate();
    config.require_seed();
    require_file(config.input_path(), "input records");
    auto records = load_records(config);
    auto collections = collection::group_by_collection(records);
    auto vocab = policy::Vocabulary::from_records(records);
    auto data = reward::build_tier_dataset(collections, vocab);
    if (data.size() < 2) throw std::runtime_error("too few records to train a classifier");

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng split(stage_seed(config, "mv-split"));
    split.shuffle(order);
    const auto n_hold = std::clamp<std::size_t>(
        static_cast<std::size_t>(config.holdout_fraction * static_cast<double>(data.size()) + 0.5),
        1, data.size() - 1);
    reward::Dataset train, hold;
    for (std::size_t k = 0; k < order.size(); ++k) {
      auto& dst = k < n_hold ? hold : train;
      dst.add(data.features[order[k]], data.labels[order[k]]);
    }

    auto mlp = config.mlp;
    mlp.input_dim = vocab.attribute_count();
    auto tc = config.mv_train;
    tc.seed = stage_seed(config, "mv");
    auto trained = reward::train_mv_classifier(train, mlp, tc);
    auto cm = reward::evaluate(trained.model, hold);

    Staging out(config.paths.out_dir);
    trained.model.save(out.path("mv_model.bin").string());
    {
      auto os = out.open("mv_loss.csv");
      reward::write_loss_csv(os, trained.loss_history);
    }
    out.write_json("mv_loss.json", {{"loss", trained.loss_history}});
    out.write_text("confusion_matrix.csv", confusion_csv(cm));
    auto cmj = cm.to_json();
    cmj["n_train"] = train.size();
    cmj["n_holdout"] = hold.size();
    out.write_json("confusion_matrix.json", cmj);
    out.write_json("config.json", config.to_json());
    out.commit();
    if (!config.paths.mv_model.empty() && config.mv_model_path() != config.paths.out_dir / "mv_model.bin") {
      fs::copy_file(config.paths.out_dir / "mv_model.bin", config.mv_model_path(),
                    fs::copy_options::overwrite_existing);
    }
    spdlog::info("train-mv: held-out accuracy {:.4f} on {} items", cm.accuracy(), hold.size());
    return kExitOk;
  });
}

int cmd_sft(const ExperimentConfig& config) {
  return guarded("sft", [&] {
    config.validate();
    config.require_seed();
    require_file(config.input_path(), "input records");
    auto records = load_records(config);
    auto vocab = policy::Vocabulary::from_records(records);
    auto data = policy::build_sft_pairs(records, vocab, config.sft_discard_prob,
                                        stage_seed(config, "sft-data"));
    auto pc = config.policy;
    pc.vocab_size = vocab.size();
    policy::ActorCritic pol(pc, stage_seed(config, "sft-init"));
    auto sc = config.sft;
    sc.seed = stage_seed(config, "sft");
    auto result = policy::sft_train(pol, data, sc);

    Staging out(config.paths.out_dir);
    pol.save(out.path("sft_policy.bin").string());
    {
      auto os = out.open("vocab.jsonl");
      policy::write_vocabulary(os, vocab);
    }
    {
      auto os = out.open("sft_dataset.txt");
      policy::write_sft_dataset(os, data, vocab);
    }
    {
      std::string csv = "epoch,nll\n";
      for (std::size_t i = 0; i < result.loss_history.size(); ++i) {
        csv += fmt::format("{},{}\n", i, fmt_double(result.loss_history[i]));
      }
      out.write_text("sft_loss.csv", csv);
    }
    out.write_json("sft_loss.json", {{"nll", result.loss_history}, {"skipped", data.skipped}});
    out.write_json("config.json", config.to_json());
    out.commit();
    if (!config.paths.sft_policy.empty() &&
        config.sft_policy_path() != config.paths.out_dir / "sft_policy.bin") {
      fs::copy_file(config.paths.out_dir / "sft_policy.bin", config.sft_policy_path(),
                    fs::copy_options::overwrite_existing);
    }
    spdlog::info("sft: {} pairs, final nll {:.4f}", data.examples.size(),
                 result.loss_history.empty() ? 0.0 : result.loss_history.back());
    return kExitOk;
  });
}

int cmd_ppo(const ExperimentConfig& config) {
  return guarded("ppo", [&] {
    config.validate();
    config.require_seed();
    require_file(config.input_path(), "input records");
    require_file(config.sft_policy_path(), "sft policy");
    if (config.market_scorer == "classifier") require_file(config.mv_model_path(), "market classifier");

    auto world = build_world(config, true);
    const auto sft = load_policy(config.sft_policy_path(), world->vocab, "sft policy");
    auto pol = sft;
    env::GeneratorEnvironment environment(world->generator, world->models(config.weights));
    auto pc = config.ppo;
    pc.seed = stage_seed(config, "ppo");
    const World& w = *world;
    policy::PromptSampler prompts = [&w, &config](Rng& rng) {
      return sample_user_prompt(w, config, rng);
    };
    auto result = policy::ppo_train_loop(pol, sft, environment, prompts, pc,
                                         [](const policy::IterationMetrics& m) {
                                           const auto level = m.iteration % 50 == 0
                                                                  ? spdlog::level::info
                                                                  : spdlog::level::debug;
                                           spdlog::log(level,
                                                       "ppo: iter {} reward {:.4f} kl {:.4f}",
                                                       m.iteration, m.mean_reward, m.mean_kl);
                                         });

    Staging out(config.paths.out_dir);
    pol.save(out.path("ppo_policy.bin").string());
    {
      auto os = out.open("ppo_metrics.csv");
      policy::write_metrics_csv(os, result.metrics);
    }
    out.write_json("ppo_metrics.json", metrics_json(result.metrics));
    out.write_json("config.json", config.to_json());
    out.commit();
    if (!config.paths.ppo_policy.empty() &&
        config.ppo_policy_path() != config.paths.out_dir / "ppo_policy.bin") {
      fs::copy_file(config.paths.out_dir / "ppo_policy.bin", config.ppo_policy_path(),
                    fs::copy_options::overwrite_existing);
    }
    spdlog::info("ppo: {} iterations", result.metrics.size());
    return kExitOk;
  });
}

int cmd_eval(const ExperimentConfig& config) {
  return guarded("eval", [&] {
    config.validate();
    config.require_seed();
    require_file(config.input_path(), "input records");
    require_file(config.sft_policy_path(), "sft policy");
    require_file(config.ppo_policy_path(), "ppo policy");
    if (config.market_scorer == "classifier") require_file(config.mv_model_path(), "market classifier");

    auto world = build_world(config, true);
    const auto sft = load_policy(config.sft_policy_path(), world->vocab, "sft policy");
    const auto ppo = load_policy(config.ppo_policy_path(), world->vocab, "ppo policy");
    auto table = evaluate_variants(config, *world, &sft, &ppo);

    Staging out(config.paths.out_dir);
    out.write_text("eval_table.csv", table.to_csv());
    out.write_json("eval_table.json", table.to_json());
    out.write_json("config.json", config.to_json());
    out.commit();
    for (const auto& r : table.rows) {
      spdlog::info("eval: {:<10} total {:.4f} mv {:.4f} aes {:.4f} rel {:.4f}", r.variant,
                   r.mean_total_reward, r.mean_mv, r.mean_aesthetic, r.mean_relevance);
    }
    return kExitOk;
  });
}

int run_command(const std::string& verb, const ExperimentConfig& config) {
  if (verb == "synth") return cmd_synth(config);
  if (verb == "ingest") return cmd_ingest(config);
  if (verb == "rarity") return cmd_rarity(config);
  if (verb == "train-mv") return cmd_train_mv(config);
  if (verb == "sft") return cmd_sft(config);
  if (verb == "ppo") return cmd_ppo(config);
  if (verb == "eval") return cmd_eval(config);
  spdlog::error("unknown command: {}", verb);
  return kExitConfig;
}

}  // namespace mvp::harness
