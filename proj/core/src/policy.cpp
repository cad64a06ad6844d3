#include "mvp/policy.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace mvp::policy {

namespace {

constexpr std::size_t kWIn = 0;
constexpr std::size_t kBIn = 1;
constexpr std::size_t kWActor = 2;
constexpr std::size_t kBActor = 3;
constexpr std::size_t kWCritic = 4;
constexpr std::size_t kBCritic = 5;

}  // namespace

ActorCritic::ActorCritic(PolicyConfig config, std::uint64_t seed) : config_(config) {
  if (config_.vocab_size < 4) throw std::invalid_argument("policy vocabulary too small");
  if (config_.hidden == 0 || config_.max_positions == 0) {
    throw std::invalid_argument("policy hidden size and positions must be positive");
  }
  Rng rng(derive_seed(seed, 0x504f4cULL));
  const auto h = static_cast<Eigen::Index>(config_.hidden);
  const auto v = static_cast<Eigen::Index>(config_.vocab_size);
  const auto d = static_cast<Eigen::Index>(feature_dim());
  params_.push_back(nn::xavier_uniform(h, d, rng));
  params_.push_back(Eigen::MatrixXd::Zero(h, 1));
  // Small output heads keep the initial policy close to uniform.
  params_.push_back(nn::xavier_uniform(v, h, rng) * 0.01);
  params_.push_back(Eigen::MatrixXd::Zero(v, 1));
  params_.push_back(nn::xavier_uniform(1, h, rng) * 0.01);
  params_.push_back(Eigen::MatrixXd::Zero(1, 1));
}

ActorCritic::Step ActorCritic::step(std::span<const int> prompt, std::span<const int> emitted) const {
  const int v = static_cast<int>(config_.vocab_size);
  Step s;
  s.active.reserve(prompt.size() + emitted.size() + 1);
  for (int t : prompt) {
    if (t < 0 || t >= v) throw std::out_of_range(fmt::format("token {} outside vocabulary", t));
    if (t < bos()) s.active.push_back(t);
  }
  for (int t : emitted) {
    if (t < 0 || t >= v) throw std::out_of_range(fmt::format("token {} outside vocabulary", t));
    s.active.push_back(v + t);
  }
  const std::size_t pos = std::min(emitted.size(), config_.max_positions - 1);
  s.active.push_back(2 * v + static_cast<int>(pos));
  std::sort(s.active.begin(), s.active.end());
  s.active.erase(std::unique(s.active.begin(), s.active.end()), s.active.end());

  Eigen::VectorXd pre = params_[kBIn].col(0);
  for (int i : s.active) pre += params_[kWIn].col(i);
  s.hidden = pre.array().tanh();

  Eigen::VectorXd logits = params_[kWActor] * s.hidden + params_[kBActor].col(0);
  logits(bos()) = kNegInf;
  logits(sep()) = kNegInf;
  double mx = kNegInf;
  for (Eigen::Index i = 0; i < logits.size(); ++i) mx = std::max(mx, logits(i));
  double z = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (logits(i) != kNegInf) z += std::exp(logits(i) - mx);
  }
  const double log_z = mx + std::log(z);
  s.log_probs = logits.array() - log_z;
  s.value = (params_[kWCritic] * s.hidden)(0) + params_[kBCritic](0, 0);
  return s;
}

void ActorCritic::accumulate(const Step& s, const Eigen::VectorXd& dlogits, double dvalue,
                             nn::ParamList& grads) const {
  Eigen::VectorXd dl = dlogits;
  dl(bos()) = 0.0;
  dl(sep()) = 0.0;
  grads[kWActor].noalias() += dl * s.hidden.transpose();
  grads[kBActor].col(0) += dl;
  grads[kWCritic].noalias() += dvalue * s.hidden.transpose();
  grads[kBCritic](0, 0) += dvalue;
  Eigen::VectorXd dh = params_[kWActor].transpose() * dl + dvalue * params_[kWCritic].row(0).transpose();
  const Eigen::VectorXd dpre = dh.array() * (1.0 - s.hidden.array().square());
  grads[kBIn].col(0) += dpre;
  for (int i : s.active) grads[kWIn].col(i) += dpre;
}

io::ModelContainer ActorCritic::to_container() const {
  io::ModelContainer c;
  c.kind = "actor_critic";
  c.set("version", "1");
  c.set("encoder", "bag_of_context");
  c.set("activation", "tanh");
  c.set("vocab_size", std::to_string(config_.vocab_size));
  c.set("hidden", std::to_string(config_.hidden));
  c.set("max_positions", std::to_string(config_.max_positions));
  const char* names[] = {"backbone.weight", "backbone.bias", "actor.weight",
                         "actor.bias",      "critic.weight", "critic.bias"};
  for (std::size_t k = 0; k < params_.size(); ++k) c.add_tensor(names[k], params_[k]);
  return c;
}

ActorCritic ActorCritic::from_container(const io::ModelContainer& c) {
  if (c.kind != "actor_critic") throw std::runtime_error("model file is not an actor_critic policy");
  PolicyConfig config;
  config.vocab_size = static_cast<std::size_t>(c.get_int("vocab_size"));
  config.hidden = static_cast<std::size_t>(c.get_int("hidden"));
  config.max_positions = static_cast<std::size_t>(c.get_int("max_positions"));
  ActorCritic p(config, 0);
  const char* names[] = {"backbone.weight", "backbone.bias", "actor.weight",
                         "actor.bias",      "critic.weight", "critic.bias"};
  for (std::size_t k = 0; k < p.params_.size(); ++k) {
    const auto& src = c.tensor(names[k]);
    if (src.rows() != p.params_[k].rows() || src.cols() != p.params_[k].cols()) {
      throw std::runtime_error(fmt::format("tensor shape mismatch for {}", names[k]));
    }
    p.params_[k] = src;
  }
  return p;
}

void ActorCritic::save(const std::string& path) const { io::save_container(path, to_container()); }

ActorCritic ActorCritic::load(const std::string& path) {
  return from_container(io::load_container(path));
}

// ---------------------------------------------------------------------------

std::vector<int> SftExample::sequence(const Vocabulary& vocab) const {
  std::vector<int> seq = input;
  seq.push_back(vocab.sep());
  seq.insert(seq.end(), output.begin(), output.end());
  seq.push_back(vocab.eos());
  return seq;
}

SftDataset build_sft_pairs(const std::vector<collection::NftRecord>& records,
                           const Vocabulary& vocab, double discard_prob, std::uint64_t seed) {
  if (!(discard_prob >= 0.0 && discard_prob <= 1.0)) {
    throw std::invalid_argument("discard_prob must be in [0, 1]");
  }
  SftDataset out;
  Rng rng(derive_seed(seed, 0x534654ULL));
  for (const auto& r : records) {
    if (r.properties.empty()) {
      ++out.skipped;
      continue;
    }
    std::vector<int> tokens;
    tokens.reserve(r.properties.size());
    for (const auto& p : r.properties) tokens.push_back(vocab.index_of(p));
    rng.shuffle(tokens);
    SftExample ex;
    for (int t : tokens) {
      if (!rng.bernoulli(discard_prob)) ex.input.push_back(t);
    }
    if (ex.input.empty()) ex.input.push_back(tokens[rng.uniform_index(tokens.size())]);
    ex.output = std::move(tokens);
    out.examples.push_back(std::move(ex));
  }
  return out;
}

void write_sft_dataset(std::ostream& os, const SftDataset& data, const Vocabulary& vocab) {
  for (const auto& ex : data.examples) {
    const auto seq = ex.sequence(vocab);
    for (std::size_t i = 0; i < seq.size(); ++i) os << (i ? " " : "") << seq[i];
    os << '\n';
  }
}

SftDataset read_sft_dataset(std::istream& is, const Vocabulary& vocab) {
  SftDataset out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::vector<int> seq;
    int t;
    while (ls >> t) {
      if (!vocab.contains(t)) throw std::runtime_error(fmt::format("line {}: token {} out of range", line_no, t));
      seq.push_back(t);
    }
    const auto sep = std::find(seq.begin(), seq.end(), vocab.sep());
    if (sep == seq.end() || seq.back() != vocab.eos()) {
      throw std::runtime_error(fmt::format("line {}: expected input SEP output EOS", line_no));
    }
    SftExample ex;
    ex.input.assign(seq.begin(), sep);
    ex.output.assign(sep + 1, seq.end() - 1);
    out.examples.push_back(std::move(ex));
  }
  return out;
}

double sft_loss_and_gradients(const ActorCritic& policy, std::span<const SftExample> examples,
                              nn::ParamList& grads) {
  grads = nn::zeros_like(policy.params());
  double total = 0.0;
  std::size_t count = 0;
  std::vector<Eigen::VectorXd> deltas;
  for (const auto& ex : examples) count += ex.output.size() + 1;
  if (count == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<int> emitted;
  for (const auto& ex : examples) {
    emitted.clear();
    for (std::size_t j = 0; j <= ex.output.size(); ++j) {
      const int target = j < ex.output.size() ? ex.output[j] : policy.eos();
      const auto s = policy.step(ex.input, emitted);
      total -= s.log_probs(target);
      Eigen::VectorXd dlogits = s.log_probs.array().exp() * inv;
      dlogits(target) -= inv;
      policy.accumulate(s, dlogits, 0.0, grads);
      emitted.push_back(target);
    }
  }
  return total * inv;
}

double sft_nll(const ActorCritic& policy, std::span<const SftExample> examples) {
  double total = 0.0;
  std::size_t count = 0;
  std::vector<int> emitted;
  for (const auto& ex : examples) {
    emitted.clear();
    for (std::size_t j = 0; j <= ex.output.size(); ++j) {
      const int target = j < ex.output.size() ? ex.output[j] : policy.eos();
      total -= policy.step(ex.input, emitted).log_probs(target);
      ++count;
      emitted.push_back(target);
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

SftResult sft_train(ActorCritic& policy, const SftDataset& data, const SftConfig& config) {
  if (data.examples.empty()) throw std::invalid_argument("empty SFT dataset");
  if (config.batch_size == 0) throw std::invalid_argument("SFT batch size must be positive");
  SftResult result;
  nn::Adam adam(policy.params(),
                {.learning_rate = config.learning_rate, .max_grad_norm = config.max_grad_norm});
  Rng rng(derive_seed(config.seed, 0x5346545452ULL));
  std::vector<std::size_t> order(data.examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<SftExample> batch;
  nn::ParamList grads;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
        batch.push_back(data.examples[order[i]]);
      }
      epoch_loss += sft_loss_and_gradients(policy, batch, grads);
      ++batches;
      adam.step(policy.params(), grads);
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(batches));
  }
  return result;
}

double sft_gradcheck(const ActorCritic& policy, std::span<const SftExample> examples, double step) {
  ActorCritic probe = policy;
  nn::ParamList analytic;
  sft_loss_and_gradients(probe, examples, analytic);
  return nn::finite_difference_check(probe.params(), analytic,
                                     [&] { return sft_nll(probe, examples); }, step);
}

// ---------------------------------------------------------------------------

Completion sample_completion(const ActorCritic& policy, std::span<const int> prompt,
                             std::size_t max_len, double temperature, Rng& rng) {
  if (temperature < 0.0) throw std::invalid_argument("temperature must be non-negative");
  for (int t : prompt) {
    if (t < 0 || t >= static_cast<int>(policy.vocab_size())) {
      throw std::out_of_range(fmt::format("unknown token {}", t));
    }
  }
  Completion c;
  std::vector<double> weights(policy.vocab_size());
  while (c.tokens.size() < max_len) {
    const auto s = policy.step(prompt, c.tokens);
    int token = 0;
    if (temperature == 0.0) {
      Eigen::Index best = 0;
      for (Eigen::Index i = 1; i < s.log_probs.size(); ++i) {
        if (s.log_probs(i) > s.log_probs(best)) best = i;
      }
      token = static_cast<int>(best);
    } else {
      const double top = s.log_probs.maxCoeff();
      for (std::size_t i = 0; i < weights.size(); ++i) {
        const double lp = s.log_probs(static_cast<Eigen::Index>(i));
        weights[i] = lp == kNegInf ? 0.0 : std::exp((lp - top) / temperature);
      }
      token = static_cast<int>(rng.discrete(weights));
    }
    c.tokens.push_back(token);
    c.log_probs.push_back(s.log_probs(token));
    c.values.push_back(s.value);
    if (token == policy.eos()) break;
  }
  return c;
}

std::vector<int> completion_attributes(const ActorCritic& policy, std::span<const int> tokens) {
  std::vector<int> out;
  for (int t : tokens) {
    if (t >= 0 && t < policy.bos()) out.push_back(t);
  }
  return out;
}

}  // namespace mvp::policy
