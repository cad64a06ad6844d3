#include "mvp/rewards.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

namespace mvp::reward {

void RewardWeights::validate() const {
  if (lambda_mkt < 0 || lambda_aes < 0 || lambda_rel < 0 || beta < 0 || zeta < 0) {
    throw std::invalid_argument("reward weights must be non-negative");
  }
}

std::size_t argmax(std::span<const double> probs) {
  if (probs.empty()) throw std::invalid_argument("argmax of an empty distribution");
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return best;
}

double market_reward(std::span<const double> probs_before, std::span<const double> probs_after,
                     int n_classes) {
  if (n_classes < 2) throw std::invalid_argument("market reward needs N_c >= 2");
  const auto n = static_cast<std::size_t>(n_classes);
  if (probs_before.size() != n || probs_after.size() != n) {
    throw std::invalid_argument(fmt::format("expected distributions over {} classes", n_classes));
  }
  const double denom = static_cast<double>(n_classes - 1);
  return static_cast<double>(argmax(probs_after)) / denom -
         static_cast<double>(argmax(probs_before)) / denom;
}

double aesthetic_reward(double score_after, double score_before) {
  return std::clamp(score_after - score_before, -1.0, 1.0);
}

double relevance_reward(double similarity, const RewardWeights& weights) {
  return std::clamp(weights.beta * std::min(similarity - weights.zeta, 0.0), -1.0, 0.0);
}

RewardBundle total_reward(double r_mkt, double r_aes, double r_clip, const RewardWeights& weights) {
  return {r_mkt, r_aes, r_clip,
          weights.lambda_mkt * r_mkt + weights.lambda_aes * r_aes + weights.lambda_rel * r_clip};
}

RewardBundle average(std::span<const RewardBundle> bundles, const RewardWeights& weights) {
  if (bundles.empty()) return {};
  double m = 0.0;
  double a = 0.0;
  double c = 0.0;
  for (const auto& b : bundles) {
    m += b.r_mkt;
    a += b.r_aes;
    c += b.r_clip;
  }
  const double n = static_cast<double>(bundles.size());
  return total_reward(m / n, a / n, c / n, weights);
}

nlohmann::json to_json(const RewardBundle& b) {
  return {{"r_mkt", b.r_mkt}, {"r_aes", b.r_aes}, {"r_clip", b.r_clip}, {"total", b.total}};
}

std::vector<double> ClassifierMarketScorer::class_probabilities(
    const env::GeneratedArtifact& artifact) const {
  return mlp_forward(model_, extract_features(artifact, vocab_));
}

RarityTierOracle::RarityTierOracle(const collection::Collection& collection,
                                   const policy::Vocabulary& vocab, collection::TierCuts cuts)
    : inverse_eta_(vocab.attribute_count(), 0.0) {
  const auto table = collection::build_frequency_table(collection);
  for (const auto& [key, n] : table.counts()) {
    if (auto token = vocab.find(key)) {
      inverse_eta_[static_cast<std::size_t>(*token)] =
          static_cast<double>(table.total_items()) / static_cast<double>(n);
    }
  }
  const auto report = collection::assign_tiers(collection::rank_collection(collection), cuts);
  const auto n = report.entries.size();
  const auto n_high = std::max<std::size_t>(1, collection::tier_boundary(cuts.high_cut, n));
  const auto n_med = std::max(n_high, collection::tier_boundary(cuts.med_cut, n));
  high_threshold_ = report.entries[n_high - 1].rarity;
  medium_threshold_ = report.entries[n_med - 1].rarity;
}

double RarityTierOracle::rarity(const env::GeneratedArtifact& artifact) const {
  std::vector<double> terms;
  for (int token : artifact.attributes) {
    if (token < 0 || static_cast<std::size_t>(token) >= inverse_eta_.size()) {
      throw std::out_of_range(fmt::format("unknown attribute token {}", token));
    }
    terms.push_back(inverse_eta_[static_cast<std::size_t>(token)]);
  }
  std::sort(terms.begin(), terms.end());
  double sum = 0.0;
  for (double t : terms) sum += t;
  return collection::snap_score(sum);
}

std::vector<double> RarityTierOracle::class_probabilities(
    const env::GeneratedArtifact& artifact) const {
  const double v = rarity(artifact);
  std::vector<double> probs(3, 0.0);
  if (v >= high_threshold_) {
    probs[2] = 1.0;
  } else if (v >= medium_threshold_) {
    probs[1] = 1.0;
  } else {
    probs[0] = 1.0;
  }
  return probs;
}

DeskAestheticScorer::DeskAestheticScorer(std::map<int, double> pleasing_weights)
    : pleasing_(std::move(pleasing_weights)) {
  for (const auto& [token, w] : pleasing_) {
    if (!(w >= 0.0)) throw std::invalid_argument("pleasing weights must be non-negative");
    total_weight_ += w;
  }
}

double DeskAestheticScorer::score(const env::GeneratedArtifact& artifact) const {
  if (total_weight_ <= 0.0) return 1.0;
  double covered = 0.0;
  for (const auto& [token, w] : pleasing_) {
    if (artifact.has(token)) covered += w;
  }
  return 1.0 + 9.0 * (covered / total_weight_);
}

double DeskRelevanceScorer::similarity(const env::GeneratedArtifact& artifact,
                                       std::span<const int> user_prompt) const {
  std::set<int> wanted;
  for (int t : user_prompt) {
    if (!vocab_.contains(t)) throw std::out_of_range(fmt::format("unknown token {}", t));
    if (vocab_.is_attribute(t)) wanted.insert(t);
  }
  if (wanted.empty()) return 1.0;
  std::size_t hit = 0;
  for (int t : wanted) {
    if (artifact.has(t)) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(wanted.size());
}

double desk_aesthetic_score(const DeskAestheticScorer& scorer, const env::GeneratedArtifact& a) {
  return scorer.score(a);
}

double desk_relevance_score(const DeskRelevanceScorer& scorer, const env::GeneratedArtifact& a,
                            std::span<const int> user_prompt) {
  return scorer.similarity(a, user_prompt);
}

}  // namespace mvp::reward
