#pragma once

// Reward functions and the scorer interfaces behind them.
//
//   market     (after tier - before tier) / (N_c - 1), from argmax class indices
//   aesthetic  clamp(score_after - score_before, -1, 1) on a 1..10 scale
//   relevance  beta * min(similarity - zeta, 0), clamped to [-1, 0]
//   total      lambda_mkt * market + lambda_aes * aesthetic + lambda_rel * relevance

#include <map>
#include <memory>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvp/artifact.hpp"
#include "mvp/collection.hpp"
#include "mvp/mv_classifier.hpp"
#include "mvp/vocabulary.hpp"

namespace mvp::reward {

struct RewardWeights {
  double lambda_mkt = 1.0;
  double lambda_aes = 0.5;
  double lambda_rel = 0.5;
  double beta = 10.0;  // relevance scale
  double zeta = 0.2;   // relevance threshold

  /// Throws std::invalid_argument if any weight is negative.
  void validate() const;
};

struct RewardBundle {
  double r_mkt = 0.0;
  double r_aes = 0.0;
  double r_clip = 0.0;
  double total = 0.0;

  bool operator==(const RewardBundle&) const = default;
};

/// Argmax with ties going to the lower index.
std::size_t argmax(std::span<const double> probs);

/// Throws std::invalid_argument when n_classes < 2 or a distribution has the wrong length.
double market_reward(std::span<const double> probs_before, std::span<const double> probs_after,
                     int n_classes);
double aesthetic_reward(double score_after, double score_before);
double relevance_reward(double similarity, const RewardWeights& weights = {});
RewardBundle total_reward(double r_mkt, double r_aes, double r_clip,
                          const RewardWeights& weights = {});

/// Component-wise mean of the bundles, total recomputed from the means.
RewardBundle average(std::span<const RewardBundle> bundles, const RewardWeights& weights);

nlohmann::json to_json(const RewardBundle& b);

// ---------------------------------------------------------------------------
// Scorer interfaces. Implementations must be deterministic and safe to call
// concurrently.

class MarketScorer {
 public:
  virtual ~MarketScorer() = default;
  virtual int n_classes() const = 0;
  virtual std::vector<double> class_probabilities(const env::GeneratedArtifact& artifact) const = 0;
};

class AestheticScorer {
 public:
  virtual ~AestheticScorer() = default;
  /// Score on a 1..10 scale.
  virtual double score(const env::GeneratedArtifact& artifact) const = 0;
};

class RelevanceScorer {
 public:
  virtual ~RelevanceScorer() = default;
  /// Similarity in [0, 1] between the artifact and the (unmodified) user prompt.
  virtual double similarity(const env::GeneratedArtifact& artifact,
                            std::span<const int> user_prompt) const = 0;
};

/// The three scorers plus their combination weights.
struct RewardModels {
  const MarketScorer* market = nullptr;
  const AestheticScorer* aesthetic = nullptr;
  const RelevanceScorer* relevance = nullptr;
  RewardWeights weights;
};

/// Market scorer backed by a trained classifier.
class ClassifierMarketScorer final : public MarketScorer {
 public:
  ClassifierMarketScorer(const MvClassifier& model, const policy::Vocabulary& vocab)
      : model_(model), vocab_(vocab) {}
  int n_classes() const override { return model_.n_classes(); }
  std::vector<double> class_probabilities(const env::GeneratedArtifact& artifact) const override;

 private:
  const MvClassifier& model_;
  const policy::Vocabulary& vocab_;
};

/// Exact tier lookup: scores the artifact's attribute set with the
/// collection's frequency table and compares against the rarity of the last
/// High and last Medium items. Returns a one-hot distribution over
/// Low/Medium/High.
class RarityTierOracle final : public MarketScorer {
 public:
  RarityTierOracle(const collection::Collection& collection, const policy::Vocabulary& vocab,
                   collection::TierCuts cuts = {});
  int n_classes() const override { return 3; }
  std::vector<double> class_probabilities(const env::GeneratedArtifact& artifact) const override;

  double rarity(const env::GeneratedArtifact& artifact) const;
  double high_threshold() const { return high_threshold_; }
  double medium_threshold() const { return medium_threshold_; }

 private:
  std::vector<double> inverse_eta_;  // per attribute token; 0 when absent from the collection
  double high_threshold_ = 0.0;
  double medium_threshold_ = 0.0;
};

/// 1 + 9 * (weighted fraction of the configured pleasing attributes present).
class DeskAestheticScorer final : public AestheticScorer {
 public:
  /// Weights must be non-negative; an empty or all-zero map scores every artifact 1.
  explicit DeskAestheticScorer(std::map<int, double> pleasing_weights);
  double score(const env::GeneratedArtifact& artifact) const override;
  const std::map<int, double>& pleasing() const { return pleasing_; }

 private:
  std::map<int, double> pleasing_;
  double total_weight_ = 0.0;
};

/// Fraction of the prompt's distinct attribute tokens realized in the
/// artifact; 1 for a prompt without attributes. Control tokens are ignored.
class DeskRelevanceScorer final : public RelevanceScorer {
 public:
  explicit DeskRelevanceScorer(const policy::Vocabulary& vocab) : vocab_(vocab) {}
  double similarity(const env::GeneratedArtifact& artifact,
                    std::span<const int> user_prompt) const override;

 private:
  const policy::Vocabulary& vocab_;
};

double desk_aesthetic_score(const DeskAestheticScorer& scorer, const env::GeneratedArtifact& a);
double desk_relevance_score(const DeskRelevanceScorer& scorer, const env::GeneratedArtifact& a,
                            std::span<const int> user_prompt);

}  // namespace mvp::reward
