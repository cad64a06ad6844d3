#include "mvp/generator.hpp"

#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "mvp/rng.hpp"

namespace mvp::env {

namespace {

constexpr std::uint64_t kKeepTag = 0x4b454550ULL;
constexpr std::uint64_t kExtraTag = 0x4558545241ULL;
constexpr std::uint64_t kDrawTag = 0x44524157ULL;

}  // namespace

void GeneratorSpec::validate() const {
  if (!(keep_prob >= 0.0 && keep_prob <= 1.0)) throw std::invalid_argument("keep_prob must be in [0, 1]");
  if (!(extra_attr_rate >= 0.0)) throw std::invalid_argument("extra_attr_rate must be >= 0");
  if (!extra_weights.empty() && extra_weights.size() != vocab.attribute_count()) {
    throw std::invalid_argument("extra_weights must have one entry per attribute");
  }
}

std::vector<double> collection_frequency_weights(const collection::Collection& collection,
                                                 const policy::Vocabulary& vocab) {
  std::vector<double> w(vocab.attribute_count(), 0.0);
  for (const auto& item : collection.items()) {
    for (const auto& p : item.properties) {
      if (auto t = vocab.find(p)) w[static_cast<std::size_t>(*t)] += 1.0;
    }
  }
  return w;
}

GeneratedArtifact realize(const GeneratorSpec& spec, std::span<const int> prompt,
                          std::uint64_t draw_index) {
  const std::uint64_t draw_seed = derive_seed(spec.seed, kDrawTag, draw_index);
  std::set<int> attrs;
  for (int t : prompt) {
    if (!spec.vocab.contains(t)) throw std::out_of_range(fmt::format("unknown token {}", t));
    if (!spec.vocab.is_attribute(t) || attrs.contains(t)) continue;
    Rng keep(derive_seed(draw_seed, kKeepTag, static_cast<std::uint64_t>(t)));
    if (keep.uniform() < spec.keep_prob) attrs.insert(t);
  }
  if (spec.extra_attr_rate > 0.0 && spec.vocab.attribute_count() > 0) {
    Rng extra(derive_seed(draw_seed, kExtraTag));
    const std::size_t n = extra.poisson(spec.extra_attr_rate);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t t = spec.extra_weights.empty()
                                ? extra.uniform_index(spec.vocab.attribute_count())
                                : extra.discrete(spec.extra_weights);
      attrs.insert(static_cast<int>(t));
    }
  }
  GeneratedArtifact a;
  a.attributes.assign(attrs.begin(), attrs.end());
  a.prompt.assign(prompt.begin(), prompt.end());
  a.draw_seed = draw_seed;
  return a;
}

EpisodeResult run_episode(const GeneratorSpec& spec, const reward::RewardModels& models,
                          std::span<const int> user_prompt, std::span<const int> adapted,
                          int k, std::uint64_t episode_seed) {
  if (k < 1) throw std::invalid_argument("episode needs k >= 1");
  if (!models.market || !models.aesthetic || !models.relevance) {
    throw std::invalid_argument("episode needs all three scorers");
  }
  EpisodeResult out;
  std::vector<reward::RewardBundle> bundles;
  const int n_classes = models.market->n_classes();
  for (int i = 0; i < k; ++i) {
    const auto ui = static_cast<std::uint64_t>(i);
    const std::uint64_t before_draw = derive_seed(episode_seed, ui);
    const std::uint64_t after_draw =
        spec.pair_draw_seeds ? before_draw : derive_seed(episode_seed, ui + static_cast<std::uint64_t>(k));
    auto before = realize(spec, user_prompt, before_draw);
    auto after = realize(spec, adapted, after_draw);

    const auto p_before = models.market->class_probabilities(before);
    const auto p_after = models.market->class_probabilities(after);
    const double aes_before = models.aesthetic->score(before);
    const double aes_after = models.aesthetic->score(after);
    const double sim = models.relevance->similarity(after, user_prompt);

    bundles.push_back(reward::total_reward(reward::market_reward(p_before, p_after, n_classes),
                                           reward::aesthetic_reward(aes_after, aes_before),
                                           reward::relevance_reward(sim, models.weights),
                                           models.weights));
    out.mv_score += static_cast<double>(reward::argmax(p_after)) / static_cast<double>(n_classes - 1);
    out.aesthetic += aes_after;
    out.relevance += sim;
    out.before.push_back(std::move(before));
    out.after.push_back(std::move(after));
  }
  out.bundle = reward::average(bundles, models.weights);
  out.mv_score /= k;
  out.aesthetic /= k;
  out.relevance /= k;
  return out;
}

reward::RewardBundle episode(const GeneratorSpec& spec, const reward::RewardModels& models,
                             std::span<const int> user_prompt, std::span<const int> adapted, int k,
                             std::uint64_t episode_seed) {
  return run_episode(spec, models, user_prompt, adapted, k, episode_seed).bundle;
}

std::vector<int> adapted_prompt(const policy::Vocabulary& vocab, std::span<const int> user_prompt,
                                std::span<const int> completion) {
  std::vector<int> out(user_prompt.begin(), user_prompt.end());
  out.push_back(vocab.sep());
  out.insert(out.end(), completion.begin(), completion.end());
  return out;
}

reward::RewardBundle GeneratorEnvironment::evaluate(std::span<const int> user_prompt,
                                                    std::span<const int> completion,
                                                    std::uint64_t episode_seed, int samples) const {
  const auto adapted = adapted_prompt(spec_.vocab, user_prompt, completion);
  return episode(spec_, models_, user_prompt, adapted, samples, episode_seed);
}

}  // namespace mvp::env
