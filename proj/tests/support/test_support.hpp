#pragma once

// Fixtures and independent oracles shared by the unit and acceptance tests.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "mvp/collection.hpp"
#include "mvp/ppo.hpp"
#include "mvp/rng.hpp"

namespace mvp::testing {

using collection::Collection;
using collection::MediaType;
using collection::NftRecord;
using collection::PropertyKey;

inline NftRecord make_record(std::string collection_id, std::string token_id,
                             const std::vector<std::pair<std::string, std::string>>& props,
                             long width = 512, long height = 512,
                             MediaType media = MediaType::kImage) {
  NftRecord r;
  r.collection_id = std::move(collection_id);
  r.token_id = std::move(token_id);
  for (const auto& [t, v] : props) r.properties.insert(PropertyKey::make(t, v));
  r.width = width;
  r.height = height;
  r.media_type = media;
  return r;
}

/// Small random collection: up to max_items items over up to max_traits trait
/// types with few values each, so ties and shared properties are common.
inline Collection random_collection(std::uint64_t seed, std::size_t max_items = 50,
                                    std::size_t max_traits = 8) {
  Rng rng(seed);
  const auto n = 1 + rng.uniform_index(max_items);
  const auto traits = 1 + rng.uniform_index(max_traits);
  Collection c(fmt::format("rc-{}", seed));
  // Token ids in shuffled order so ties are not already sorted by insertion.
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  rng.shuffle(ids);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<std::string, std::string>> props;
    for (std::size_t t = 0; t < traits; ++t) {
      if (rng.bernoulli(0.3)) continue;
      const auto values = 1 + t % 4;
      props.emplace_back(fmt::format("t{}", t), fmt::format("v{}", rng.uniform_index(values)));
    }
    c.add(make_record(c.id(), fmt::format("{:03d}", ids[i]), props));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Brute-force rarity oracle in exact rational arithmetic. Every score is
// num / L with L the least common multiple of the property counts, so ties
// are exact.

struct OracleEntry {
  std::string token_id;
  double rarity = 0.0;
  std::size_t rank = 0;
  collection::Tier tier = collection::Tier::kLow;
};

inline std::vector<OracleEntry> brute_force_rarity(const Collection& c, double high_cut = 0.05,
                                                   double med_cut = 0.60) {
  using i128 = __int128;
  const auto& items = c.items();
  const std::size_t n = items.size();
  auto holders = [&items](const PropertyKey& p) {
    std::size_t count = 0;
    for (const auto& other : items) {
      for (const auto& q : other.properties) {
        if (q.trait_type == p.trait_type && q.value == p.value) ++count;
      }
    }
    return count;
  };
  i128 lcm = 1;
  for (const auto& item : items) {
    for (const auto& p : item.properties) {
      const auto k = static_cast<i128>(holders(p));
      i128 a = lcm, b = k;
      while (b != 0) {
        i128 t = a % b;
        a = b;
        b = t;
      }
      if (__builtin_mul_overflow(lcm / a, k, &lcm)) throw std::overflow_error("oracle lcm");
    }
  }
  struct Row {
    std::string token;
    i128 num;
  };
  std::vector<Row> rows;
  for (const auto& item : items) {
    i128 num = 0;
    for (const auto& p : item.properties) {
      // 1/eta = n / count
      num += static_cast<i128>(n) * (lcm / static_cast<i128>(holders(p)));
    }
    rows.push_back({item.token_id, num});
  }
  // Selection sort: largest score first, ties by token id.
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::size_t best = i;
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      const bool better = rows[j].num > rows[best].num ||
                          (rows[j].num == rows[best].num && rows[j].token < rows[best].token);
      if (better) best = j;
    }
    std::swap(rows[i], rows[best]);
  }
  // Tier counts by integer ceiling of cut * n on cuts given in hundredths.
  auto ceil_cut = [n](double cut) {
    const auto hundredths = static_cast<std::size_t>(cut * 100.0 + 0.5);
    return (hundredths * n + 99) / 100;
  };
  const auto n_high = std::max<std::size_t>(1, ceil_cut(high_cut));
  const auto n_med = ceil_cut(med_cut);
  std::vector<OracleEntry> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    OracleEntry e;
    e.token_id = rows[i].token;
    e.rarity = static_cast<double>(static_cast<long double>(rows[i].num) /
                                   static_cast<long double>(lcm));
    e.rank = i + 1;
    e.tier = e.rank <= n_high  ? collection::Tier::kHigh
             : e.rank <= n_med ? collection::Tier::kMedium
                               : collection::Tier::kLow;
    out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cleaning fixture: a corpus with planted violators for each stage.

struct PlantedCorpus {
  std::vector<NftRecord> records;
  /// "collection/token" keys each stage must remove, by stage index 0..4.
  std::vector<std::set<std::string>> removed_by_stage;
  std::vector<std::size_t> collections_removed_by_stage;
};

inline std::string record_key(const NftRecord& r) { return r.collection_id + "/" + r.token_id; }

inline PlantedCorpus planted_corpus() {
  PlantedCorpus pc;
  pc.removed_by_stage.resize(5);
  pc.collections_removed_by_stage = {0, 0, 1, 0, 1};
  auto add = [&pc](NftRecord r, int stage) {
    if (stage >= 0) pc.removed_by_stage[stage].insert(record_key(r));
    pc.records.push_back(std::move(r));
  };

  // "main": 40 clean, distinct 4-property items.
  auto main_props = [](int i) {
    return std::vector<std::pair<std::string, std::string>>{
        {"Body", fmt::format("b{}", i % 5)},
        {"Eyes", fmt::format("e{}", (i / 5) % 8)},
        {"Hat", fmt::format("h{}", i)},
        {"Background", fmt::format("g{}", i % 3)}};
  };
  for (int i = 0; i < 40; ++i) add(make_record("main", fmt::format("m{:03d}", i), main_props(i)), -1);

  // Stage 1: non-images that would otherwise pass.
  const MediaType non_image[] = {MediaType::kVideo, MediaType::kVideo, MediaType::kAnimation,
                                 MediaType::kOther, MediaType::kVideo};
  for (int i = 0; i < 5; ++i) {
    add(make_record("main", fmt::format("n{:03d}", i), main_props(100 + i), 512, 512, non_image[i]),
        0);
  }
  // Stage 2: low resolution or non-square.
  const std::pair<long, long> sizes[] = {{511, 511}, {1024, 768}, {256, 256}, {600, 512}};
  for (int i = 0; i < 4; ++i) {
    add(make_record("main", fmt::format("r{:03d}", i), main_props(200 + i), sizes[i].first,
                    sizes[i].second),
        1);
  }
  // Stage 3: a whole collection with two properties per item.
  for (int i = 0; i < 10; ++i) {
    add(make_record("sparse", fmt::format("s{:03d}", i),
                    {{"Body", fmt::format("b{}", i)}, {"Hat", fmt::format("h{}", i)}}),
        2);
  }
  // Stage 4: URL-like or hex-like property values.
  const char* bad_values[] = {"https://meta.example", "0xDEADBEEF", "WWW.shop", "see http link",
                              "id-0x12"};
  for (int i = 0; i < 5; ++i) {
    auto props = main_props(300 + i);
    props[2].second = bad_values[i];
    add(make_record("main", fmt::format("u{:03d}", i), props), 3);
  }
  // Stage 5: 6 of 10 items share one property set (ratio 0.6) ...
  for (int i = 0; i < 10; ++i) {
    const int v = i < 6 ? 0 : i;
    add(make_record("clones", fmt::format("c{:03d}", i),
                    {{"Body", fmt::format("b{}", v)},
                     {"Eyes", fmt::format("e{}", v)},
                     {"Hat", fmt::format("h{}", v)}}),
        4);
  }
  // ... while 4 of 10 sharing (ratio 0.4) stays.
  for (int i = 0; i < 10; ++i) {
    const int v = i < 4 ? 0 : i;
    add(make_record("twins", fmt::format("t{:03d}", i),
                    {{"Body", fmt::format("b{}", v)},
                     {"Eyes", fmt::format("e{}", v)},
                     {"Hat", fmt::format("h{}", v)}}),
        -1);
  }
  return pc;
}

// ---------------------------------------------------------------------------
// Single-step bandit: the episode reward depends only on the first completion
// token. One attribute token pays 1, everything else 0.

class BanditEnvironment final : public policy::Environment {
 public:
  explicit BanditEnvironment(std::vector<double> rewards) : rewards_(std::move(rewards)) {}

  reward::RewardBundle evaluate(std::span<const int> /*user_prompt*/,
                                std::span<const int> completion, std::uint64_t /*episode_seed*/,
                                int /*samples*/) const override {
    reward::RewardBundle b;
    if (!completion.empty() && completion[0] < static_cast<int>(rewards_.size())) {
      b.r_mkt = rewards_[completion[0]];
    }
    b.total = b.r_mkt;
    return b;
  }

 private:
  std::vector<double> rewards_;
};

struct BanditOutcome {
  int optimal_token = -1;   // brute-force argmax of the environment reward
  int greedy_token = -1;    // argmax of the trained first-step distribution
  double optimal_prob = 0.0;
  std::vector<policy::IterationMetrics> metrics;
};

/// Trains a fresh policy for one step per episode against a bandit that pays
/// `rewards[token]`, starting from a copy of the initial policy as reference.
inline BanditOutcome run_bandit(const std::vector<double>& rewards, std::uint64_t seed,
                                std::size_t iterations = 150) {
  policy::PolicyConfig pc;
  pc.vocab_size = rewards.size() + 3;
  pc.hidden = 16;
  pc.max_positions = 4;
  policy::ActorCritic actor(pc, derive_seed(seed, 1));
  const policy::ActorCritic reference = actor;
  BanditEnvironment env(rewards);

  BanditOutcome out;
  const std::vector<int> prompt = {0};
  double best = -1e300;
  for (int t = 0; t < static_cast<int>(actor.vocab_size()); ++t) {
    if (!actor.is_action(t)) continue;
    const int completion[] = {t};
    const double r = env.evaluate(prompt, completion, 0, 1).total;
    if (r > best) {
      best = r;
      out.optimal_token = t;
    }
  }

  policy::PpoConfig cfg;
  cfg.seed = seed;
  cfg.max_len = 1;
  cfg.iterations = iterations;
  cfg.batch_size = 16;
  cfg.kl_weight = 0.02;
  cfg.learning_rate = 1e-2;
  out.metrics = policy::ppo_train_loop(actor, reference, env,
                                       [&prompt](Rng&) { return prompt; }, cfg)
                    .metrics;
  const auto s = actor.step(prompt, std::span<const int>{});
  Eigen::Index arg = 0;
  s.log_probs.maxCoeff(&arg);
  out.greedy_token = static_cast<int>(arg);
  out.optimal_prob = s.prob(out.optimal_token);
  return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    Rng rng((static_cast<std::uint64_t>(rd()) << 32) ^ rd());
    path_ = std::filesystem::temp_directory_path() /
            fmt::format("mvp-{}-{:012x}", tag, rng.next_u64() & 0xffffffffffffULL);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace mvp::testing
