#include "mvp/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>

namespace mvp::policy {

double kl_step(double logp_current, double logp_sft) { return logp_current - logp_sft; }

double exact_kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("exact_kl: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
    kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return kl;
}

std::vector<double> compute_returns(Trajectory& trajectory, double gamma, double kl_weight) {
  const std::size_t n = trajectory.size();
  if (trajectory.kl.size() != n) throw std::invalid_argument("per-step KL not set");
  std::vector<double> g(n, 0.0);
  double running = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    double r = -kl_weight * trajectory.kl[t];
    if (t + 1 == n) r += trajectory.reward;
    running = r + gamma * running;
    g[t] = running;
  }
  trajectory.returns = g;
  return g;
}

double advantage(double ret, double value_estimate) { return ret - value_estimate; }

double ppo_surrogate(double ratio, double advantage, double clip_eps) {
  const double clipped = advantage >= 0.0 ? (1.0 + clip_eps) * advantage : (1.0 - clip_eps) * advantage;
  return std::min(ratio * advantage, clipped);
}

double critic_loss(std::span<const double> values, std::span<const double> returns) {
  if (values.size() != returns.size()) throw std::invalid_argument("critic_loss: length mismatch");
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double d = values[i] - returns[i];
    s += d * d;
  }
  return s / static_cast<double>(values.size());
}

void PpoConfig::validate() const {
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw std::invalid_argument("clip_eps must be in (0, 1)");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must be in (0, 1]");
  if (samples_per_prompt < 1) throw std::invalid_argument("samples_per_prompt must be >= 1");
  if (kl_weight < 0.0) throw std::invalid_argument("kl_weight must be non-negative");
  if (policy_loss_weight < 0.0 || critic_loss_weight < 0.0) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (batch_size == 0 || epochs == 0) throw std::invalid_argument("batch_size and epochs must be positive");
  if (temperature < 0.0) throw std::invalid_argument("temperature must be non-negative");
  if (!(kl_ceiling > 0.0)) throw std::invalid_argument("kl_ceiling must be positive");
}

Trajectory collect_trajectory(const ActorCritic& policy, const ActorCritic& sft_policy,
                              const Environment& env, std::vector<int> prompt,
                              const PpoConfig& config, Rng& rng, std::uint64_t episode_seed) {
  Trajectory tr;
  tr.prompt = std::move(prompt);
  auto completion = sample_completion(policy, tr.prompt, config.max_len, config.temperature, rng);
  tr.actions = std::move(completion.tokens);
  tr.logp_old = std::move(completion.log_probs);
  tr.values = std::move(completion.values);
  tr.logp_sft.reserve(tr.size());
  tr.kl.reserve(tr.size());
  for (std::size_t t = 0; t < tr.size(); ++t) {
    const std::span<const int> emitted(tr.actions.data(), t);
    const double lp = sft_policy.step(tr.prompt, emitted).log_probs(tr.actions[t]);
    tr.logp_sft.push_back(lp);
    tr.kl.push_back(kl_step(tr.logp_old[t], lp));
  }
  tr.bundle = env.evaluate(tr.prompt, tr.actions, episode_seed, config.samples_per_prompt);
  tr.reward = tr.bundle.total;
  compute_returns(tr, config.gamma, config.kl_weight);
  return tr;
}

PpoResult ppo_train_loop(ActorCritic& policy, const ActorCritic& sft_policy, const Environment& env,
                         const PromptSampler& prompts, const PpoConfig& config,
                         const std::function<void(const IterationMetrics&)>& on_iteration) {
  config.validate();
  if (policy.vocab_size() != sft_policy.vocab_size()) {
    throw std::invalid_argument("policy and SFT policy vocabularies differ");
  }
  PpoResult result;
  nn::Adam adam(policy.params(),
                {.learning_rate = config.learning_rate, .max_grad_norm = config.max_grad_norm});
  Rng prompt_rng(derive_seed(config.seed, 0x50524f4dULL));
  Rng sample_rng(derive_seed(config.seed, 0x53414d50ULL));

  std::vector<Trajectory> batch;
  std::vector<std::vector<double>> advantages;
  nn::ParamList grads;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    batch.clear();
    IterationMetrics m;
    m.iteration = it;
    double kl_abs = 0.0;
    double kl_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      auto tr = collect_trajectory(policy, sft_policy, env, prompts(prompt_rng), config, sample_rng,
                                   derive_seed(config.seed, it, b));
      m.mean_reward += tr.reward;
      m.mean_r_mkt += tr.bundle.r_mkt;
      m.mean_r_aes += tr.bundle.r_aes;
      m.mean_r_clip += tr.bundle.r_clip;
      for (double k : tr.kl) {
        kl_abs += std::abs(k);
        kl_sum += k;
      }
      steps += tr.size();
      batch.push_back(std::move(tr));
    }
    const double nb = static_cast<double>(config.batch_size);
    m.mean_reward /= nb;
    m.mean_r_mkt /= nb;
    m.mean_r_aes /= nb;
    m.mean_r_clip /= nb;
    m.mean_kl = steps ? kl_sum / static_cast<double>(steps) : 0.0;
    const double mean_abs_kl = steps ? kl_abs / static_cast<double>(steps) : 0.0;
    if (mean_abs_kl > config.kl_ceiling) {
      throw DivergenceError(fmt::format(
          "iteration {}: mean |KL| per token {:.4f} exceeds ceiling {:.4f}", it, mean_abs_kl,
          config.kl_ceiling));
    }

    advantages.assign(batch.size(), {});
    for (std::size_t b = 0; b < batch.size(); ++b) {
      for (std::size_t t = 0; t < batch[b].size(); ++t) {
        advantages[b].push_back(advantage(batch[b].returns[t], batch[b].values[t]));
      }
    }

    if (steps > 0) {
      const double inv_n = 1.0 / static_cast<double>(steps);
      for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        grads = nn::zeros_like(policy.params());
        double surrogate_sum = 0.0;
        double value_sq_sum = 0.0;
        for (std::size_t b = 0; b < batch.size(); ++b) {
          const auto& tr = batch[b];
          for (std::size_t t = 0; t < tr.size(); ++t) {
            const std::span<const int> emitted(tr.actions.data(), t);
            const auto s = policy.step(tr.prompt, emitted);
            const int a = tr.actions[t];
            const double reference = config.ratio_reference == RatioReference::kSft ? tr.logp_sft[t]
                                                                                      : tr.logp_old[t];
            const double ratio = std::exp(s.log_probs(a) - reference);
            const double adv = advantages[b][t];
            const double surrogate = ppo_surrogate(ratio, adv, config.clip_eps);
            surrogate_sum += surrogate;
            // The unclipped branch carries the gradient A * ratio * dlog pi.
            const bool active = ratio * adv <= surrogate;
            const double dlogp = active ? -config.policy_loss_weight * adv * ratio * inv_n : 0.0;
            Eigen::VectorXd dlogits = -dlogp * s.log_probs.array().exp();
            dlogits(a) += dlogp;
            const double verr = s.value - tr.returns[t];
            value_sq_sum += verr * verr;
            const double dvalue = config.critic_loss_weight * 2.0 * verr * inv_n;
            policy.accumulate(s, dlogits, dvalue, grads);
          }
        }
        if (epoch == 0) {
          m.policy_loss = -surrogate_sum * inv_n;
          m.critic_loss = value_sq_sum * inv_n;
        }
        adam.step(policy.params(), grads);
      }
    }
    if (on_iteration) on_iteration(m);
    result.metrics.push_back(m);
  }
  return result;
}

void write_metrics_csv(std::ostream& os, const std::vector<IterationMetrics>& metrics) {
  os << "iteration,mean_reward,mean_r_mkt,mean_r_aes,mean_r_clip,mean_kl,policy_loss,critic_loss\n";
  for (const auto& m : metrics) {
    os << fmt::format("{},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g}\n", m.iteration,
                      m.mean_reward, m.mean_r_mkt, m.mean_r_aes, m.mean_r_clip, m.mean_kl,
                      m.policy_loss, m.critic_loss);
  }
}

}  // namespace mvp::policy
