#include <benchmark/benchmark.h>

#include "mvp/collection.hpp"
#include "mvp/generator.hpp"
#include "mvp/ingest.hpp"
#include "mvp/mv_classifier.hpp"
#include "mvp/policy.hpp"
#include "mvp/ppo.hpp"
#include "mvp/rewards.hpp"

namespace {

mvp::collection::Collection synth(std::size_t n) {
  mvp::ingest::SynthOptions o;
  o.n_items = n;
  o.seed = 1;
  return mvp::ingest::synth_collection(o);
}

void BM_RankCollection(benchmark::State& state) {
  const auto c = synth(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(mvp::collection::rank_collection(c));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RankCollection)->Arg(1000)->Arg(10000);

void BM_CleaningPipeline(benchmark::State& state) {
  const auto c = synth(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(mvp::ingest::run_pipeline(c.items()));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_CleaningPipeline)->Arg(10000);

void BM_ClassifierLossAndGrad(benchmark::State& state) {
  const auto batch = state.range(0);
  mvp::reward::MlpConfig cfg;
  cfg.input_dim = 64;
  mvp::reward::MvClassifier m(cfg, 1);
  mvp::Rng rng(2);
  Eigen::MatrixXd X(64, batch);
  std::vector<int> labels;
  for (Eigen::Index j = 0; j < batch; ++j) {
    for (Eigen::Index i = 0; i < 64; ++i) X(i, j) = rng.bernoulli(0.1) ? 1.0 : 0.0;
    labels.push_back(static_cast<int>(rng.uniform_index(3)));
  }
  auto grads = mvp::nn::zeros_like(m.params());
  for (auto _ : state) {
    benchmark::DoNotOptimize(m.loss(X, labels, mvp::reward::Mode::kTraining, &grads));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_ClassifierLossAndGrad)->Arg(64)->Arg(256);

void BM_SampleCompletion(benchmark::State& state) {
  mvp::policy::PolicyConfig pc;
  pc.vocab_size = 67;
  mvp::policy::ActorCritic p(pc, 3);
  const std::vector<int> prompt = {4, 17};
  mvp::Rng rng(4);
  for (auto _ : state) benchmark::DoNotOptimize(mvp::policy::sample_completion(p, prompt, 12, 1.0, rng));
}
BENCHMARK(BM_SampleCompletion);

void BM_Episode(benchmark::State& state) {
  const auto c = synth(2000);
  const auto vocab = mvp::policy::Vocabulary::from_records(c.items());
  mvp::reward::RarityTierOracle oracle(c, vocab);
  mvp::reward::DeskAestheticScorer aesthetic({{0, 1.0}, {9, 1.0}, {18, 1.0}});
  mvp::reward::DeskRelevanceScorer relevance(vocab);
  mvp::env::GeneratorSpec spec;
  spec.vocab = vocab;
  spec.extra_weights = mvp::env::collection_frequency_weights(c, vocab);
  const mvp::reward::RewardModels models{&oracle, &aesthetic, &relevance, {}};
  const std::vector<int> user = {3, 12};
  const auto adapted = mvp::env::adapted_prompt(vocab, user, std::vector<int>{0, 9, 40});
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(mvp::env::episode(spec, models, user, adapted, 3, seed++));
}
BENCHMARK(BM_Episode);

class ConstantEnvironment final : public mvp::policy::Environment {
 public:
  mvp::reward::RewardBundle evaluate(std::span<const int>, std::span<const int> completion,
                                     std::uint64_t, int) const override {
    mvp::reward::RewardBundle b;
    b.total = b.r_mkt = static_cast<double>(completion.size()) * 0.1;
    return b;
  }
};

void BM_PpoIteration(benchmark::State& state) {
  mvp::policy::PolicyConfig pc;
  pc.vocab_size = 67;
  mvp::policy::ActorCritic policy(pc, 5);
  const mvp::policy::ActorCritic reference = policy;
  ConstantEnvironment env;
  mvp::policy::PpoConfig cfg;
  cfg.iterations = 1;
  const std::vector<int> prompt = {1, 2};
  for (auto _ : state) {
    benchmark::DoNotOptimize(mvp::policy::ppo_train_loop(
        policy, reference, env, [&prompt](mvp::Rng&) { return prompt; }, cfg));
  }
}
BENCHMARK(BM_PpoIteration)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
