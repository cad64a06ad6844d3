#pragma once

// Simulated generator: realizes a prompt as a set of attributes. Each prompted
// attribute survives independently with keep_prob, and a Poisson number of
// extra attributes is drawn from a configured frequency distribution.
//
// Randomness is keyed by (seed, draw index, attribute), so one attribute's
// fate in a given draw does not depend on the rest of the prompt. Paired
// before/after draws therefore differ only where the prompts differ.

#include <cstdint>
#include <span>
#include <vector>

#include "mvp/artifact.hpp"
#include "mvp/ppo.hpp"
#include "mvp/rewards.hpp"
#include "mvp/vocabulary.hpp"

namespace mvp::env {

struct GeneratorSpec {
  policy::Vocabulary vocab;
  double keep_prob = 0.9;
  double extra_attr_rate = 1.0;
  /// Per attribute token; empty means uniform over attributes.
  std::vector<double> extra_weights;
  std::uint64_t seed = 0;
  /// Before/after generations share draw seeds.
  bool pair_draw_seeds = true;

  void validate() const;
};

/// Extra-attribute weights proportional to how many collection items carry each attribute.
std::vector<double> collection_frequency_weights(const collection::Collection& collection,
                                                 const policy::Vocabulary& vocab);

/// Control tokens in the prompt are ignored; a token outside the vocabulary
/// throws std::out_of_range.
GeneratedArtifact realize(const GeneratorSpec& spec, std::span<const int> prompt,
                          std::uint64_t draw_index);

struct EpisodeResult {
  reward::RewardBundle bundle;  // averaged over the k draws
  double mv_score = 0.0;        // mean argmax(after)/(N_c-1)
  double aesthetic = 0.0;       // mean aesthetic score of the after artifacts
  double relevance = 0.0;       // mean similarity of after artifacts to the user prompt
  std::vector<GeneratedArtifact> before;
  std::vector<GeneratedArtifact> after;
};

/// Generates k artifacts from the user prompt and k from the adapted prompt
/// and averages the k before/after reward bundles. Relevance is always
/// measured against the user prompt.
EpisodeResult run_episode(const GeneratorSpec& spec, const reward::RewardModels& models,
                          std::span<const int> user_prompt, std::span<const int> adapted_prompt,
                          int k, std::uint64_t episode_seed);

reward::RewardBundle episode(const GeneratorSpec& spec, const reward::RewardModels& models,
                             std::span<const int> user_prompt, std::span<const int> adapted_prompt,
                             int k = 3, std::uint64_t episode_seed = 0);

/// user prompt + SEP + completion.
std::vector<int> adapted_prompt(const policy::Vocabulary& vocab, std::span<const int> user_prompt,
                                std::span<const int> completion);

/// Environment for the PPO loop backed by the generator and reward models.
class GeneratorEnvironment final : public policy::Environment {
 public:
  GeneratorEnvironment(GeneratorSpec spec, reward::RewardModels models)
      : spec_(std::move(spec)), models_(models) {}

  reward::RewardBundle evaluate(std::span<const int> user_prompt, std::span<const int> completion,
                                std::uint64_t episode_seed, int samples) const override;

  const GeneratorSpec& spec() const { return spec_; }
  const reward::RewardModels& models() const { return models_; }

 private:
  GeneratorSpec spec_;
  reward::RewardModels models_;
};

}  // namespace mvp::env
