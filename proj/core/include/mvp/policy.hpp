#pragma once

// Token-level actor-critic prompt policy.
//
// The state at step t is the user prompt plus the tokens emitted so far. A
// bag-of-context encoder turns it into a sparse indicator vector
//   [prompt attributes | emitted tokens | position bucket]
// which feeds one tanh hidden layer shared by two heads: the actor (one logit
// per vocabulary token) and the critic (a scalar value). BOS and SEP are never
// valid actions; their log-probabilities are -inf.

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mvp/collection.hpp"
#include "mvp/model_io.hpp"
#include "mvp/nn.hpp"
#include "mvp/rng.hpp"
#include "mvp/vocabulary.hpp"

namespace mvp::policy {

struct PolicyConfig {
  std::size_t vocab_size = 0;  // attributes + 3 control tokens
  std::size_t hidden = 64;
  std::size_t max_positions = 16;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

class ActorCritic {
 public:
  ActorCritic(PolicyConfig config, std::uint64_t seed);

  const PolicyConfig& config() const { return config_; }
  std::size_t vocab_size() const { return config_.vocab_size; }
  int bos() const { return static_cast<int>(config_.vocab_size) - 3; }
  int sep() const { return static_cast<int>(config_.vocab_size) - 2; }
  int eos() const { return static_cast<int>(config_.vocab_size) - 1; }
  bool is_action(int token) const {
    return token >= 0 && token < static_cast<int>(config_.vocab_size) && token != bos() &&
           token != sep();
  }
  std::size_t action_count() const { return config_.vocab_size - 2; }

  struct Step {
    std::vector<int> active;    // indices of the non-zero state features
    Eigen::VectorXd hidden;
    Eigen::VectorXd log_probs;  // -inf at masked tokens
    double value = 0.0;

    double prob(int token) const { return std::exp(log_probs(token)); }
  };

  /// Throws std::out_of_range on a token outside the vocabulary.
  Step step(std::span<const int> prompt, std::span<const int> emitted) const;

  /// Adds the parameter gradient of (dlogits . logits + dvalue * value) at
  /// `s` into `grads` (which must match params()).
  void accumulate(const Step& s, const Eigen::VectorXd& dlogits, double dvalue,
                  nn::ParamList& grads) const;

  /// Order: W_in (hidden x features), b_in, W_actor (V x hidden), b_actor,
  /// W_critic (1 x hidden), b_critic.
  nn::ParamList& params() { return params_; }
  const nn::ParamList& params() const { return params_; }
  std::size_t feature_dim() const { return 2 * config_.vocab_size + config_.max_positions; }

  io::ModelContainer to_container() const;
  static ActorCritic from_container(const io::ModelContainer& c);
  void save(const std::string& path) const;
  static ActorCritic load(const std::string& path);

 private:
  PolicyConfig config_;
  nn::ParamList params_;
};

// ---------------------------------------------------------------------------
// Supervised fine-tuning

struct SftExample {
  std::vector<int> input;   // kept subset of the shuffled properties
  std::vector<int> output;  // all properties, shuffled

  /// input, SEP, output, EOS.
  std::vector<int> sequence(const Vocabulary& vocab) const;
  bool operator==(const SftExample&) const = default;
};

struct SftDataset {
  std::vector<SftExample> examples;
  std::size_t skipped = 0;  // records without properties
};

/// For each record: shuffle its properties, drop each with probability
/// `discard_prob` (keeping at least one) to form the input, and use the full
/// shuffled list as the output.
SftDataset build_sft_pairs(const std::vector<collection::NftRecord>& records,
                           const Vocabulary& vocab, double discard_prob, std::uint64_t seed);

/// One sequence of token indices per line, space separated.
void write_sft_dataset(std::ostream& os, const SftDataset& data, const Vocabulary& vocab);
SftDataset read_sft_dataset(std::istream& is, const Vocabulary& vocab);

struct SftConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 3e-3;
  double max_grad_norm = 5.0;
  std::uint64_t seed = 0;
};

struct SftResult {
  std::vector<double> loss_history;  // mean NLL per output token, one per epoch
};

/// Mean next-token negative log-likelihood over output tokens (EOS included).
double sft_nll(const ActorCritic& policy, std::span<const SftExample> examples);

/// Gradient of sft_nll with respect to the actor parameters (critic entries zero).
double sft_loss_and_gradients(const ActorCritic& policy, std::span<const SftExample> examples,
                              nn::ParamList& grads);

/// Throws std::invalid_argument on an empty dataset.
SftResult sft_train(ActorCritic& policy, const SftDataset& data, const SftConfig& config);

/// Largest relative error of the SFT gradient against central differences.
double sft_gradcheck(const ActorCritic& policy, std::span<const SftExample> examples,
                     double step = 1e-5);

// ---------------------------------------------------------------------------
// Sampling

struct Completion {
  std::vector<int> tokens;       // includes the terminating EOS when one was drawn
  std::vector<double> log_probs; // log of the actor's probability of each token
  std::vector<double> values;    // critic estimate at each step's state
};

/// Autoregressive sampling until EOS or `max_len` tokens. Temperature 0 is
/// greedy argmax (ties to the lower index); log-probabilities always refer to
/// the untempered actor distribution.
Completion sample_completion(const ActorCritic& policy, std::span<const int> prompt,
                             std::size_t max_len, double temperature, Rng& rng);

/// Attribute tokens of a completion (EOS and controls dropped).
std::vector<int> completion_attributes(const ActorCritic& policy, std::span<const int> tokens);

}  // namespace mvp::policy
