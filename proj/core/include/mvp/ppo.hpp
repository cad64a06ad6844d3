#pragma once

// PPO optimization of the prompt policy against an environment that scores
// completed prompts.
//
// Sign conventions: the clipped surrogate is an objective (maximized); the
// optimizer minimizes  policy_weight * (-surrogate) + critic_weight * MSE.
// KL regularization against the frozen SFT policy enters as a per-token
// reward  -kl_weight * (log pi(a_t|s_t) - log pi_sft(a_t|s_t)); the
// environment's reward is added at the final step.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include "mvp/policy.hpp"
#include "mvp/rewards.hpp"

namespace mvp::policy {

/// Produces the terminal reward of one episode.
class Environment {
 public:
  virtual ~Environment() = default;
  /// Scores `completion` (the policy's tokens after the separator) for the
  /// given user prompt, averaging over `samples` generator draws.
  virtual reward::RewardBundle evaluate(std::span<const int> user_prompt,
                                        std::span<const int> completion, std::uint64_t episode_seed,
                                        int samples) const = 0;
};

struct Trajectory {
  std::vector<int> prompt;
  std::vector<int> actions;
  std::vector<double> logp_old;   // rollout-time policy snapshot
  std::vector<double> logp_sft;   // frozen SFT policy
  std::vector<double> values;     // critic at rollout time
  std::vector<double> kl;         // per-step sampled KL estimate
  std::vector<double> returns;
  double reward = 0.0;            // terminal reward R
  reward::RewardBundle bundle;

  std::size_t size() const { return actions.size(); }
};

/// log pi_current(a|s) - log pi_sft(a|s).
double kl_step(double logp_current, double logp_sft);

/// Exact KL(p || q) for explicit distributions; infinite if q misses support of p.
double exact_kl(std::span<const double> p, std::span<const double> q);

/// Shaped rewards r_t = -kl_weight * kl_t, plus R at the last step; returns
/// G_t = sum_{u >= t} gamma^(u-t) r_u. Also stores them in trajectory.returns.
std::vector<double> compute_returns(Trajectory& trajectory, double gamma, double kl_weight);

double advantage(double ret, double value_estimate);

/// min(ratio * A, g(eps, A)) with g = (1+eps)A for A >= 0 and (1-eps)A otherwise.
double ppo_surrogate(double ratio, double advantage, double clip_eps);

/// Mean squared error; throws std::invalid_argument on a length mismatch.
double critic_loss(std::span<const double> values, std::span<const double> returns);

enum class RatioReference {
  kRolloutSnapshot,  // pi_theta / pi_theta_old, old = policy that generated the batch
  kSft,              // pi_theta / pi_SFT, literal form
};

struct PpoConfig {
  double clip_eps = 0.2;
  double gamma = 1.0;
  double kl_weight = 0.2;
  double policy_loss_weight = 1.0;
  double critic_loss_weight = 0.2;
  int samples_per_prompt = 3;
  double learning_rate = 1e-3;
  double max_grad_norm = 1.0;
  std::size_t batch_size = 16;     // prompts per iteration
  std::size_t epochs = 4;          // optimization passes per batch
  std::size_t iterations = 500;
  std::size_t max_len = 12;
  double temperature = 1.0;
  double kl_ceiling = 4.0;         // abort when mean |KL| per token exceeds this
  RatioReference ratio_reference = RatioReference::kRolloutSnapshot;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on out-of-range settings.
  void validate() const;
};

struct IterationMetrics {
  std::size_t iteration = 0;
  double mean_reward = 0.0;
  double mean_r_mkt = 0.0;
  double mean_r_aes = 0.0;
  double mean_r_clip = 0.0;
  double mean_kl = 0.0;
  double policy_loss = 0.0;
  double critic_loss = 0.0;

  bool operator==(const IterationMetrics&) const = default;
};

/// Thrown by the divergence guard.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using PromptSampler = std::function<std::vector<int>(Rng&)>;

/// Rolls out one trajectory (sampling, SFT log-probs, environment reward, returns).
Trajectory collect_trajectory(const ActorCritic& policy, const ActorCritic& sft_policy,
                              const Environment& env, std::vector<int> prompt,
                              const PpoConfig& config, Rng& rng, std::uint64_t episode_seed);

struct PpoResult {
  std::vector<IterationMetrics> metrics;
};

/// Trains `policy` in place. `on_iteration`, when set, sees each metrics row
/// as it is produced. Throws DivergenceError when the guard trips.
PpoResult ppo_train_loop(ActorCritic& policy, const ActorCritic& sft_policy, const Environment& env,
                         const PromptSampler& prompts, const PpoConfig& config,
                         const std::function<void(const IterationMetrics&)>& on_iteration = {});

void write_metrics_csv(std::ostream& os, const std::vector<IterationMetrics>& metrics);

}  // namespace mvp::policy
