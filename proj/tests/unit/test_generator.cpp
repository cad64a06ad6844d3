#include <doctest.h>

#include <cmath>
#include <memory>

#include "mvp/generator.hpp"
#include "mvp/ingest.hpp"
#include "test_support.hpp"

using namespace mvp::env;
using mvp::policy::Vocabulary;

namespace {

struct Market {
  mvp::collection::Collection collection;
  Vocabulary vocab;
  std::unique_ptr<mvp::reward::RarityTierOracle> oracle;
  std::unique_ptr<mvp::reward::DeskAestheticScorer> aesthetic;
  std::unique_ptr<mvp::reward::DeskRelevanceScorer> relevance;

  mvp::reward::RewardModels models() const {
    return {oracle.get(), aesthetic.get(), relevance.get(), {}};
  }
};

std::unique_ptr<Market> make_market() {
  auto m = std::make_unique<Market>();
  mvp::ingest::SynthOptions o;
  o.n_items = 400;
  o.n_trait_types = 4;
  o.values_per_type = 6;
  o.seed = 21;
  m->collection = mvp::ingest::synth_collection(o);
  m->vocab = Vocabulary::from_records(m->collection.items());
  m->oracle = std::make_unique<mvp::reward::RarityTierOracle>(m->collection, m->vocab);
  m->aesthetic = std::make_unique<mvp::reward::DeskAestheticScorer>(
      std::map<int, double>{{0, 1.0}, {3, 1.0}, {7, 1.0}});
  m->relevance = std::make_unique<mvp::reward::DeskRelevanceScorer>(m->vocab);
  return m;
}

GeneratorSpec spec_for(const Vocabulary& v, double keep, double rate, std::uint64_t seed = 1) {
  GeneratorSpec s;
  s.vocab = v;
  s.keep_prob = keep;
  s.extra_attr_rate = rate;
  s.seed = seed;
  return s;
}

double variance(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(xs.size() - 1);
}

}  // namespace

TEST_CASE("identity and empty configurations") {
  auto m = make_market();
  const auto& v = m->vocab;
  const std::vector<int> prompt = {5, 2, v.sep(), 5, v.bos(), 9};
  auto id = realize(spec_for(v, 1.0, 0.0), prompt, 3);
  CHECK(id.attributes == std::vector<int>{2, 5, 9});
  CHECK(id.prompt == prompt);
  auto empty = realize(spec_for(v, 0.0, 0.0), prompt, 3);
  CHECK(empty.attributes.empty());
  CHECK(realize(spec_for(v, 1.0, 0.0), std::vector<int>{}, 0).attributes.empty());
}

TEST_CASE("realize is deterministic in seed, prompt and draw index") {
  auto m = make_market();
  auto spec = spec_for(m->vocab, 0.6, 1.5, 8);
  const std::vector<int> prompt = {1, 4, 10};
  auto a = realize(spec, prompt, 17);
  CHECK(a == realize(spec, prompt, 17));
  bool differs = false;
  for (std::uint64_t d = 0; d < 20 && !differs; ++d) differs = realize(spec, prompt, d) != a;
  CHECK(differs);
  for (int t : a.attributes) CHECK(m->vocab.is_attribute(t));
  CHECK(std::is_sorted(a.attributes.begin(), a.attributes.end()));
}

TEST_CASE("keep frequency matches keep_prob") {
  auto m = make_market();
  for (double keep : {0.3, 0.9}) {
    auto spec = spec_for(m->vocab, keep, 0.0, 4);
    const std::vector<int> prompt = {2, 6};
    const int n = 10000;
    int kept2 = 0;
    int kept6 = 0;
    for (int d = 0; d < n; ++d) {
      auto a = realize(spec, prompt, static_cast<std::uint64_t>(d));
      kept2 += a.has(2);
      kept6 += a.has(6);
    }
    CHECK(std::abs(kept2 / static_cast<double>(n) - keep) < 0.01);
    CHECK(std::abs(kept6 / static_cast<double>(n) - keep) < 0.01);
  }
}

TEST_CASE("extra attributes follow the configured weights") {
  auto m = make_market();
  auto spec = spec_for(m->vocab, 0.0, 1.0, 6);
  spec.extra_weights.assign(m->vocab.attribute_count(), 0.0);
  spec.extra_weights[4] = 1.0;
  int with_extra = 0;
  const int n = 10000;
  for (int d = 0; d < n; ++d) {
    auto a = realize(spec, std::vector<int>{}, static_cast<std::uint64_t>(d));
    for (int t : a.attributes) CHECK(t == 4);
    with_extra += a.attributes.empty() ? 0 : 1;
  }
  // At least one Poisson(1) extra: 1 - e^-1.
  CHECK(with_extra / static_cast<double>(n) == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(0.03));

  auto w = collection_frequency_weights(m->collection, m->vocab);
  REQUIRE(w.size() == m->vocab.attribute_count());
  for (std::size_t t = 0; t < w.size(); ++t) {
    std::size_t holders = 0;
    for (const auto& item : m->collection.items()) {
      holders += item.properties.contains(m->vocab.attribute(static_cast<int>(t))) ? 1 : 0;
    }
    CHECK(w[t] == doctest::Approx(static_cast<double>(holders)));
  }
}

TEST_CASE("invalid specs and tokens") {
  auto m = make_market();
  CHECK_THROWS_AS(spec_for(m->vocab, 1.2, 0.0).validate(), std::invalid_argument);
  CHECK_THROWS_AS(spec_for(m->vocab, 0.5, -1.0).validate(), std::invalid_argument);
  auto bad_weights = spec_for(m->vocab, 0.5, 1.0);
  bad_weights.extra_weights = {1.0, 2.0};
  CHECK_THROWS_AS(bad_weights.validate(), std::invalid_argument);
  CHECK_THROWS_AS(realize(spec_for(m->vocab, 1.0, 0.0), std::vector<int>{99999}, 0),
                  std::out_of_range);
  CHECK_THROWS_AS(realize(spec_for(m->vocab, 1.0, 0.0), std::vector<int>{-1}, 0),
                  std::out_of_range);
}

TEST_CASE("unchanged prompt earns no before/after reward") {
  auto m = make_market();
  const std::vector<int> user = {1, 8};
  const auto adapted = adapted_prompt(m->vocab, user, std::vector<int>{});
  CHECK(adapted == std::vector<int>{1, 8, m->vocab.sep()});
  for (auto [keep, rate] : {std::pair{1.0, 0.0}, std::pair{0.6, 2.0}}) {
    auto spec = spec_for(m->vocab, keep, rate, 3);
    for (std::uint64_t s = 0; s < 50; ++s) {
      auto b = episode(spec, m->models(), user, adapted, 3, s);
      CHECK(b.r_mkt == 0.0);
      CHECK(b.r_aes == 0.0);
    }
  }
  // Without pairing, sampling noise alone moves the difference terms.
  auto unpaired = spec_for(m->vocab, 0.5, 2.0, 3);
  unpaired.pair_draw_seeds = false;
  bool nonzero = false;
  for (std::uint64_t s = 0; s < 50 && !nonzero; ++s) {
    nonzero = episode(unpaired, m->models(), user, adapted, 3, s).r_aes != 0.0;
  }
  CHECK(nonzero);
}

TEST_CASE("relevance is measured against the user prompt") {
  auto m = make_market();
  auto spec = spec_for(m->vocab, 1.0, 0.0);
  const std::vector<int> user = {2};
  const std::vector<int> other = {5};
  auto r = run_episode(spec, m->models(), user, adapted_prompt(m->vocab, other, {}), 2, 0);
  CHECK(r.relevance == 0.0);
  auto same = run_episode(spec, m->models(), user, adapted_prompt(m->vocab, user, other), 2, 0);
  CHECK(same.relevance == 1.0);
  CHECK(same.before.size() == 2);
  CHECK(same.after.size() == 2);
  CHECK(same.after[0].attributes == std::vector<int>{2, 5});
}

TEST_CASE("averaging over three draws reduces variance") {
  auto m = make_market();
  auto spec = spec_for(m->vocab, 0.5, 1.0, 12);
  const std::vector<int> user = {1, 9};
  const auto adapted = adapted_prompt(m->vocab, user, std::vector<int>{0, 3, 7});
  std::vector<double> k1, k3;
  for (std::uint64_t s = 0; s < 100; ++s) {
    k1.push_back(episode(spec, m->models(), user, adapted, 1, 1000 + s).total);
    k3.push_back(episode(spec, m->models(), user, adapted, 3, 1000 + s).total);
  }
  CHECK(variance(k3) < variance(k1));
}

TEST_CASE("adding the rarest attribute raises the market reward") {
  auto m = make_market();
  const auto& items = m->collection.items();
  const auto& v = m->vocab;
  auto holders = [&items, &v](int t) {
    std::size_t n = 0;
    for (const auto& item : items) n += item.properties.contains(v.attribute(t)) ? 1 : 0;
    return n;
  };
  int rarest = 0;
  int commonest = 0;
  for (int t = 0; t < static_cast<int>(v.attribute_count()); ++t) {
    if (holders(t) < holders(rarest)) rarest = t;
    if (holders(t) > holders(commonest)) commonest = t;
  }
  // Expected tiers from the brute-force ranking's thresholds.
  auto oracle = mvp::testing::brute_force_rarity(m->collection);
  double last_high = 0.0;
  double last_medium = 0.0;
  for (const auto& e : oracle) {
    if (e.tier == mvp::collection::Tier::kHigh) last_high = e.rarity;
    if (e.tier == mvp::collection::Tier::kMedium) last_medium = e.rarity;
  }
  auto tier_of = [&](double r) { return r >= last_high ? 2 : r >= last_medium ? 1 : 0; };
  const double n = static_cast<double>(items.size());
  const double before = n / static_cast<double>(holders(commonest));
  const double after = before + n / static_cast<double>(holders(rarest));
  REQUIRE(tier_of(after) > tier_of(before));

  auto spec = spec_for(v, 1.0, 0.0);
  const std::vector<int> user = {commonest};
  const std::vector<int> completion = {rarest};
  auto b = episode(spec, m->models(), user, adapted_prompt(v, user, completion), 3, 0);
  CHECK(b.r_mkt > 0.0);
}

TEST_CASE("generator environment matches a direct episode") {
  auto m = make_market();
  auto spec = spec_for(m->vocab, 0.7, 1.0, 2);
  GeneratorEnvironment env(spec, m->models());
  const std::vector<int> user = {3};
  const std::vector<int> completion = {4, 11, m->vocab.eos()};
  CHECK(env.evaluate(user, completion, 9, 3) ==
        episode(spec, m->models(), user, adapted_prompt(m->vocab, user, completion), 3, 9));
}
