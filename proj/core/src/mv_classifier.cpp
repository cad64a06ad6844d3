#include "mvp/mv_classifier.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "mvp/ingest.hpp"

namespace mvp::reward {

FeatureVector extract_features(const env::GeneratedArtifact& artifact,
                               const policy::Vocabulary& vocab) {
  FeatureVector x = FeatureVector::Zero(static_cast<Eigen::Index>(vocab.attribute_count()));
  for (int token : artifact.attributes) {
    if (!vocab.is_attribute(token)) {
      throw std::out_of_range(fmt::format("unknown attribute token {}", token));
    }
    x(token) = 1.0;
  }
  return x;
}

FeatureVector record_features(const collection::NftRecord& record, const policy::Vocabulary& vocab) {
  FeatureVector x = FeatureVector::Zero(static_cast<Eigen::Index>(vocab.attribute_count()));
  for (const auto& p : record.properties) x(vocab.index_of(p)) = 1.0;
  return x;
}

Dataset build_tier_dataset(const std::vector<collection::Collection>& collections,
                           const policy::Vocabulary& vocab) {
  Dataset data;
  for (const auto& c : collections) {
    const auto report = collection::rank_collection(c);
    for (const auto& item : c.items()) {
      data.add(record_features(item, vocab), collection::tier_class(report.at(item.token_id).tier));
    }
  }
  return data;
}

// ---------------------------------------------------------------------------

MvClassifier::MvClassifier(MlpConfig config) : config_(std::move(config)) {
  if (config_.input_dim == 0) throw std::invalid_argument("classifier input_dim must be positive");
  if (config_.n_classes < 2) throw std::invalid_argument("classifier needs at least 2 classes");
  for (auto h : config_.hidden) {
    if (h == 0) throw std::invalid_argument("hidden widths must be positive");
  }
}

MvClassifier::MvClassifier(MlpConfig config, std::uint64_t seed) : MvClassifier(std::move(config)) {
  Rng rng(derive_seed(seed, 0x4d4c50ULL));
  std::size_t in = config_.input_dim;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const std::size_t out =
        l + 1 < layer_count() ? config_.hidden[l] : static_cast<std::size_t>(config_.n_classes);
    const auto rows = static_cast<Eigen::Index>(out);
    params_.push_back(nn::xavier_uniform(rows, static_cast<Eigen::Index>(in), rng));
    params_.push_back(Eigen::MatrixXd::Zero(rows, 1));
    if (has_norm(l)) {
      params_.push_back(Eigen::MatrixXd::Ones(rows, 1));
      params_.push_back(Eigen::MatrixXd::Zero(rows, 1));
      running_mean_.push_back(Eigen::VectorXd::Zero(rows));
      running_var_.push_back(Eigen::VectorXd::Ones(rows));
    }
    in = out;
  }
}

MvClassifier MvClassifier::zeros(MlpConfig config) {
  MvClassifier m(std::move(config), 0);
  for (auto& p : m.params_) p.setZero();
  return m;
}

std::size_t MvClassifier::weight_index(std::size_t layer) const {
  std::size_t k = 0;
  for (std::size_t l = 0; l < layer; ++l) k += has_norm(l) ? 4 : 2;
  return k;
}

Eigen::MatrixXd MvClassifier::forward(const Eigen::MatrixXd& X, Mode mode, Cache* cache) const {
  if (static_cast<std::size_t>(X.rows()) != config_.input_dim) {
    throw std::invalid_argument(fmt::format("feature dimension {} does not match classifier input {}",
                                            X.rows(), config_.input_dim));
  }
  const Eigen::Index batch = X.cols();
  if (cache) *cache = Cache{};
  Eigen::MatrixXd a = X;
  std::size_t norm_slot = 0;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const std::size_t k = weight_index(l);
    const auto& W = params_[k];
    const auto& b = params_[k + 1];
    if (cache) cache->inputs.push_back(a);
    Eigen::MatrixXd z = (W * a).colwise() + b.col(0);
    if (cache) cache->pre.push_back(z);
    if (l + 1 == layer_count()) {
      a = std::move(z);
      break;
    }
    Eigen::MatrixXd y;
    if (has_norm(l)) {
      const auto& gamma = params_[k + 2];
      const auto& beta = params_[k + 3];
      Eigen::VectorXd mu;
      Eigen::VectorXd var;
      if (mode == Mode::kTraining) {
        mu = z.rowwise().mean();
        var = (z.colwise() - mu).array().square().rowwise().mean();
      } else {
        mu = running_mean_[norm_slot];
        var = running_var_[norm_slot];
      }
      const Eigen::VectorXd inv_std = (var.array() + config_.batch_norm_eps).rsqrt();
      Eigen::MatrixXd xhat = ((z.colwise() - mu).array().colwise() * inv_std.array()).matrix();
      y = ((xhat.array().colwise() * gamma.col(0).array()).colwise() + beta.col(0).array()).matrix();
      if (cache) {
        cache->normed.push_back(std::move(xhat));
        cache->mean.push_back(mu);
        cache->inv_std.push_back(inv_std);
      }
      ++norm_slot;
    } else {
      y = std::move(z);
    }
    if (cache) cache->post.push_back(y);
    const double slope = config_.leaky_slope;
    a = y.unaryExpr([slope](double v) { return nn::leaky_relu(v, slope); });
  }
  Eigen::MatrixXd probs = nn::softmax_columns(a);
  if (cache) cache->probs = probs;
  (void)batch;
  return probs;
}

Eigen::MatrixXd MvClassifier::predict_proba(const Eigen::MatrixXd& X) const {
  return forward(X, Mode::kInference, nullptr);
}

Eigen::VectorXd MvClassifier::predict_proba(const FeatureVector& x) const {
  return forward(x, Mode::kInference, nullptr).col(0);
}

int MvClassifier::predict(const FeatureVector& x) const {
  const auto p = predict_proba(x);
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < p.size(); ++i) {
    if (p(i) > p(best)) best = i;
  }
  return static_cast<int>(best);
}

double MvClassifier::loss(const Eigen::MatrixXd& X, std::span<const int> labels, Mode mode,
                          nn::ParamList* grads, Cache* cache) const {
  const Eigen::Index batch = X.cols();
  if (batch == 0 || static_cast<std::size_t>(batch) != labels.size()) {
    throw std::invalid_argument("loss: batch and label counts differ or are empty");
  }
  Cache local;
  Cache& c = cache ? *cache : local;
  forward(X, mode, &c);

  double total = 0.0;
  for (Eigen::Index i = 0; i < batch; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= config_.n_classes) throw std::invalid_argument("label out of range");
    total += -std::log(std::max(c.probs(y, i), kProbabilityFloor));
  }
  const double mean_loss = total / static_cast<double>(batch);
  if (!grads) return mean_loss;

  *grads = nn::zeros_like(params_);
  Eigen::MatrixXd delta = c.probs;  // d loss / d logits
  for (Eigen::Index i = 0; i < batch; ++i) delta(labels[static_cast<std::size_t>(i)], i) -= 1.0;
  delta /= static_cast<double>(batch);

  std::size_t norm_slot = 0;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    if (has_norm(l)) ++norm_slot;
  }
  for (std::size_t l = layer_count(); l-- > 0;) {
    const std::size_t k = weight_index(l);
    if (l + 1 < layer_count()) {
      // delta currently holds d loss / d activation output of layer l.
      const double slope = config_.leaky_slope;
      const Eigen::MatrixXd& y = c.post[l];
      delta = delta.cwiseProduct(y.unaryExpr([slope](double v) { return nn::leaky_relu_grad(v, slope); }));
      if (has_norm(l)) {
        --norm_slot;
        const auto& gamma = params_[k + 2];
        const Eigen::MatrixXd& xhat = c.normed[norm_slot];
        const Eigen::VectorXd& inv_std = c.inv_std[norm_slot];
        (*grads)[k + 2] = delta.cwiseProduct(xhat).rowwise().sum();
        (*grads)[k + 3] = delta.rowwise().sum();
        const Eigen::MatrixXd dxhat = (delta.array().colwise() * gamma.col(0).array()).matrix();
        if (mode == Mode::kTraining) {
          const double n = static_cast<double>(batch);
          const Eigen::VectorXd sum_d = dxhat.rowwise().sum();
          const Eigen::VectorXd sum_dx = dxhat.cwiseProduct(xhat).rowwise().sum();
          Eigen::MatrixXd dz = n * dxhat;
          dz.colwise() -= sum_d;
          dz -= (xhat.array().colwise() * sum_dx.array()).matrix();
          delta = (dz.array().colwise() * (inv_std.array() / n)).matrix();
        } else {
          delta = (dxhat.array().colwise() * inv_std.array()).matrix();
        }
      }
    }
    (*grads)[k] = delta * c.inputs[l].transpose();
    (*grads)[k + 1] = delta.rowwise().sum();
    if (l > 0) delta = params_[k].transpose() * delta;
  }
  return mean_loss;
}

void MvClassifier::update_running_stats(const Cache& cache) {
  const double m = config_.batch_norm_momentum;
  for (std::size_t s = 0; s < running_mean_.size() && s < cache.mean.size(); ++s) {
    const Eigen::VectorXd var =
        cache.inv_std[s].array().square().inverse() - config_.batch_norm_eps;
    running_mean_[s] = (1.0 - m) * running_mean_[s] + m * cache.mean[s];
    running_var_[s] = (1.0 - m) * running_var_[s] + m * var;
  }
}

io::ModelContainer MvClassifier::to_container() const {
  io::ModelContainer c;
  c.kind = "mv_classifier";
  c.set("version", "1");
  c.set("input_dim", std::to_string(config_.input_dim));
  std::string hidden;
  for (std::size_t i = 0; i < config_.hidden.size(); ++i) {
    hidden += (i ? "," : "") + std::to_string(config_.hidden[i]);
  }
  c.set("hidden", hidden);
  c.set("n_classes", std::to_string(config_.n_classes));
  c.set("activation", "leaky_relu");
  c.set("leaky_slope", fmt::format("{:.17g}", config_.leaky_slope));
  c.set("batch_norm", config_.batch_norm ? "1" : "0");
  c.set("batch_norm_eps", fmt::format("{:.17g}", config_.batch_norm_eps));
  c.set("batch_norm_momentum", fmt::format("{:.17g}", config_.batch_norm_momentum));
  std::size_t slot = 0;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const std::size_t k = weight_index(l);
    c.add_tensor(fmt::format("layer{}.weight", l), params_[k]);
    c.add_tensor(fmt::format("layer{}.bias", l), params_[k + 1]);
    if (has_norm(l)) {
      c.add_tensor(fmt::format("layer{}.gamma", l), params_[k + 2]);
      c.add_tensor(fmt::format("layer{}.beta", l), params_[k + 3]);
      c.add_tensor(fmt::format("layer{}.running_mean", l), running_mean_[slot]);
      c.add_tensor(fmt::format("layer{}.running_var", l), running_var_[slot]);
      ++slot;
    }
  }
  return c;
}

MvClassifier MvClassifier::from_container(const io::ModelContainer& c) {
  if (c.kind != "mv_classifier") throw std::runtime_error("model file is not an mv_classifier");
  if (c.get("activation") != "leaky_relu") throw std::runtime_error("unsupported activation");
  MlpConfig config;
  config.input_dim = static_cast<std::size_t>(c.get_int("input_dim"));
  config.hidden.clear();
  const auto& hidden = c.get("hidden");
  std::size_t pos = 0;
  while (pos < hidden.size()) {
    auto next = hidden.find(',', pos);
    if (next == std::string::npos) next = hidden.size();
    config.hidden.push_back(static_cast<std::size_t>(std::stoul(hidden.substr(pos, next - pos))));
    pos = next + 1;
  }
  config.n_classes = static_cast<int>(c.get_int("n_classes"));
  config.leaky_slope = c.get_double("leaky_slope");
  config.batch_norm = c.get("batch_norm") == "1";
  config.batch_norm_eps = c.get_double("batch_norm_eps");
  config.batch_norm_momentum = c.get_double("batch_norm_momentum");

  MvClassifier m(config, 0);
  std::size_t slot = 0;
  auto load = [&](Eigen::MatrixXd& dst, const std::string& name) {
    const auto& src = c.tensor(name);
    if (src.rows() != dst.rows() || src.cols() != dst.cols()) {
      throw std::runtime_error("tensor shape mismatch for " + name);
    }
    dst = src;
  };
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    const std::size_t k = m.weight_index(l);
    load(m.params_[k], fmt::format("layer{}.weight", l));
    load(m.params_[k + 1], fmt::format("layer{}.bias", l));
    if (m.has_norm(l)) {
      load(m.params_[k + 2], fmt::format("layer{}.gamma", l));
      load(m.params_[k + 3], fmt::format("layer{}.beta", l));
      m.running_mean_[slot] = c.tensor(fmt::format("layer{}.running_mean", l)).col(0);
      m.running_var_[slot] = c.tensor(fmt::format("layer{}.running_var", l)).col(0);
      ++slot;
    }
  }
  return m;
}

void MvClassifier::save(const std::string& path) const { io::save_container(path, to_container()); }

MvClassifier MvClassifier::load(const std::string& path) {
  return from_container(io::load_container(path));
}

// ---------------------------------------------------------------------------

std::vector<double> mlp_forward(const MvClassifier& model, const FeatureVector& x) {
  const Eigen::VectorXd p = model.predict_proba(x);
  return std::vector<double>(p.data(), p.data() + p.size());
}

CrossEntropy cross_entropy_loss(std::span<const double> probs, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) {
    throw std::invalid_argument(fmt::format("label {} outside 0..{}", label, probs.size()));
  }
  const double p = probs[static_cast<std::size_t>(label)];
  if (p < kProbabilityFloor) return {-std::log(kProbabilityFloor), true};
  return {-std::log(p), false};
}

namespace {

Eigen::MatrixXd stack(const Dataset& data, std::span<const std::size_t> rows, std::size_t dim) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    X.col(static_cast<Eigen::Index>(i)) = data.features[rows[i]];
  }
  return X;
}

}  // namespace

TrainedClassifier train_mv_classifier(const Dataset& data, const MlpConfig& config,
                                      const TrainConfig& train) {
  if (data.size() == 0) throw std::invalid_argument("empty training set");
  std::set<int> classes(data.labels.begin(), data.labels.end());
  if (classes.size() < 2) throw std::invalid_argument("degenerate dataset: only one class present");

  TrainedClassifier out{MvClassifier(config, train.seed), {}};
  auto& model = out.model;
  nn::Adam adam(model.params(), {.learning_rate = train.learning_rate});

  const std::uint64_t sample_seed = derive_seed(train.seed, 0x42414c41ULL);
  // Balanced mode needs every class present; checked by the sampler.
  std::optional<ingest::CategoryBalancedSampler> balanced;
  if (train.balanced_sampling) {
    balanced.emplace(data.labels, config.n_classes, sample_seed);
  }
  Rng uniform(sample_seed);

  std::vector<std::size_t> rows(train.batch_size);
  std::vector<int> labels(train.batch_size);
  nn::ParamList grads;
  MvClassifier::Cache cache;
  const Mode mode = config.batch_norm ? Mode::kTraining : Mode::kInference;
  out.loss_history.reserve(train.steps);
  for (std::size_t step = 0; step < train.steps; ++step) {
    for (std::size_t i = 0; i < train.batch_size; ++i) {
      rows[i] = balanced ? balanced->next() : uniform.uniform_index(data.size());
      labels[i] = data.labels[rows[i]];
    }
    const auto X = stack(data, rows, config.input_dim);
    out.loss_history.push_back(model.loss(X, labels, mode, &grads, &cache));
    adam.step(model.params(), grads);
    if (config.batch_norm) model.update_running_stats(cache);
  }
  return out;
}

double gradcheck(const MvClassifier& model, const Dataset& batch, Mode mode, double step) {
  std::vector<std::size_t> rows(batch.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const auto X = stack(batch, rows, model.config().input_dim);
  MvClassifier probe = model;
  nn::ParamList analytic;
  probe.loss(X, batch.labels, mode, &analytic);
  return nn::finite_difference_check(probe.params(), analytic,
                                     [&] { return probe.loss(X, batch.labels, mode); }, step);
}

double gradcheck(const MvClassifier& model, const FeatureVector& x, int label, double step) {
  Dataset one;
  one.add(x, label);
  return gradcheck(model, one, Mode::kInference, step);
}

ConfusionMatrix::ConfusionMatrix(int n_classes)
    : counts(static_cast<std::size_t>(n_classes),
             std::vector<std::size_t>(static_cast<std::size_t>(n_classes), 0)) {}

void ConfusionMatrix::add(int prediction, int truth) {
  ++counts.at(static_cast<std::size_t>(prediction)).at(static_cast<std::size_t>(truth));
}

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (const auto& row : counts) {
    for (auto v : row) n += v;
  }
  return n;
}

double ConfusionMatrix::accuracy() const {
  const auto n = total();
  if (n == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) hits += counts[i][i];
  return static_cast<double>(hits) / static_cast<double>(n);
}

double ConfusionMatrix::balanced_accuracy() const {
  double sum = 0.0;
  int present = 0;
  for (std::size_t t = 0; t < counts.size(); ++t) {
    std::size_t col = 0;
    for (std::size_t p = 0; p < counts.size(); ++p) col += counts[p][t];
    if (col == 0) continue;
    sum += static_cast<double>(counts[t][t]) / static_cast<double>(col);
    ++present;
  }
  return present ? sum / present : 0.0;
}

nlohmann::json ConfusionMatrix::to_json() const {
  nlohmann::json labels = nlohmann::json::array();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    labels.push_back(counts.size() == 3
                         ? std::string(collection::to_string(collection::tier_from_class(static_cast<int>(c))))
                         : std::to_string(c));
  }
  return {{"layout", "rows=prediction,cols=truth"},
          {"labels", labels},
          {"counts", counts},
          {"total", total()},
          {"accuracy", accuracy()},
          {"balanced_accuracy", balanced_accuracy()}};
}

ConfusionMatrix evaluate(const MvClassifier& model, const Dataset& data) {
  ConfusionMatrix cm(model.n_classes());
  for (std::size_t i = 0; i < data.size(); ++i) cm.add(model.predict(data.features[i]), data.labels[i]);
  return cm;
}

void write_loss_csv(std::ostream& os, const std::vector<double>& history) {
  os << "step,loss\n";
  for (std::size_t i = 0; i < history.size(); ++i) os << fmt::format("{},{:.10g}\n", i, history[i]);
}

}  // namespace mvp::reward
