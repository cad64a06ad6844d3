#pragma once

// Market-value classifier: a feedforward network over multi-hot attribute
// features that predicts the price tier (Low=0, Medium=1, High=2).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "mvp/artifact.hpp"
#include "mvp/collection.hpp"
#include "mvp/model_io.hpp"
#include "mvp/nn.hpp"
#include "mvp/vocabulary.hpp"

namespace mvp::reward {

using FeatureVector = Eigen::VectorXd;

/// Multi-hot encoding over the vocabulary's attribute tokens.
/// Throws std::out_of_range for a token that is not an attribute.
FeatureVector extract_features(const env::GeneratedArtifact& artifact,
                               const policy::Vocabulary& vocab);
FeatureVector record_features(const collection::NftRecord& record, const policy::Vocabulary& vocab);

struct Dataset {
  std::vector<FeatureVector> features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  void add(FeatureVector x, int label) {
    features.push_back(std::move(x));
    labels.push_back(label);
  }
};

/// One example per item, labelled with the item's tier class within its own collection.
Dataset build_tier_dataset(const std::vector<collection::Collection>& collections,
                           const policy::Vocabulary& vocab);

struct MlpConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden = {64, 64, 32, 16};
  int n_classes = 3;
  double leaky_slope = 0.01;
  bool batch_norm = false;
  double batch_norm_eps = 1e-5;
  double batch_norm_momentum = 0.1;
};

enum class Mode { kInference, kTraining };

class MvClassifier {
 public:
  /// Xavier-initialized weights, zero biases.
  MvClassifier(MlpConfig config, std::uint64_t seed);
  /// All weights and biases zero (uniform output).
  static MvClassifier zeros(MlpConfig config);

  const MlpConfig& config() const { return config_; }
  std::size_t layer_count() const { return config_.hidden.size() + 1; }
  int n_classes() const { return config_.n_classes; }

  /// Class probabilities per column of X (input_dim x batch), inference mode.
  Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& X) const;
  Eigen::VectorXd predict_proba(const FeatureVector& x) const;
  int predict(const FeatureVector& x) const;

  struct Cache {
    std::vector<Eigen::MatrixXd> inputs;   // input to each linear layer
    std::vector<Eigen::MatrixXd> pre;      // linear outputs
    std::vector<Eigen::MatrixXd> normed;   // batch-norm x-hat
    std::vector<Eigen::VectorXd> mean;     // batch statistics used
    std::vector<Eigen::VectorXd> inv_std;
    std::vector<Eigen::MatrixXd> post;     // after affine batch-norm, before activation
    Eigen::MatrixXd probs;
  };

  /// Mean cross-entropy over the batch. When `grads` is non-null it receives
  /// d(loss)/d(params) in params() order.
  double loss(const Eigen::MatrixXd& X, std::span<const int> labels, Mode mode,
              nn::ParamList* grads = nullptr, Cache* cache = nullptr) const;

  /// Folds the batch statistics of a training-mode cache into the running estimates.
  void update_running_stats(const Cache& cache);

  /// Order: per layer W (out x in), b (out x 1), then gamma, beta when batch norm is on.
  nn::ParamList& params() { return params_; }
  const nn::ParamList& params() const { return params_; }

  io::ModelContainer to_container() const;
  static MvClassifier from_container(const io::ModelContainer& c);
  void save(const std::string& path) const;
  static MvClassifier load(const std::string& path);

 private:
  explicit MvClassifier(MlpConfig config);

  std::size_t weight_index(std::size_t layer) const;
  bool has_norm(std::size_t layer) const {
    return config_.batch_norm && layer + 1 < layer_count();
  }
  Eigen::MatrixXd forward(const Eigen::MatrixXd& X, Mode mode, Cache* cache) const;

  MlpConfig config_;
  nn::ParamList params_;
  std::vector<Eigen::VectorXd> running_mean_;
  std::vector<Eigen::VectorXd> running_var_;
};

/// Class probabilities for one feature vector; throws std::invalid_argument
/// on a dimension mismatch.
std::vector<double> mlp_forward(const MvClassifier& model, const FeatureVector& x);

struct CrossEntropy {
  double value = 0.0;
  bool clamped = false;  // probability at the label was below the 1e-12 floor
};

inline constexpr double kProbabilityFloor = 1e-12;

CrossEntropy cross_entropy_loss(std::span<const double> probs, int label);

struct TrainConfig {
  std::size_t steps = 3000;
  std::size_t batch_size = 64;
  double learning_rate = 2e-3;
  bool balanced_sampling = true;
  std::uint64_t seed = 0;
};

struct TrainedClassifier {
  MvClassifier model;
  std::vector<double> loss_history;  // one mean batch loss per step
};

/// Throws std::invalid_argument when the dataset has fewer than two distinct
/// classes or a class without examples.
TrainedClassifier train_mv_classifier(const Dataset& data, const MlpConfig& config,
                                      const TrainConfig& train);

/// Largest relative error between analytic gradients and central differences
/// of the mean cross-entropy on `batch`.
double gradcheck(const MvClassifier& model, const Dataset& batch, Mode mode = Mode::kInference,
                 double step = 1e-5);
double gradcheck(const MvClassifier& model, const FeatureVector& x, int label, double step = 1e-5);

/// counts[prediction][truth].
struct ConfusionMatrix {
  std::vector<std::vector<std::size_t>> counts;

  explicit ConfusionMatrix(int n_classes = 3);
  void add(int prediction, int truth);
  std::size_t total() const;
  double accuracy() const;
  /// Mean of per-class recall.
  double balanced_accuracy() const;
  nlohmann::json to_json() const;
};

ConfusionMatrix evaluate(const MvClassifier& model, const Dataset& data);

/// Writes step,loss.
void write_loss_csv(std::ostream& os, const std::vector<double>& history);

}  // namespace mvp::reward
