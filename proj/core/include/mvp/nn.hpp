#pragma once

// Small dense-network helpers shared by the market classifier and the policy:
// parameter lists, Adam, initialization and finite-difference checking.

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "mvp/rng.hpp"

namespace mvp::nn {

/// Parameters (or gradients) of a model as an ordered list of dense blocks.
using ParamList = std::vector<Eigen::MatrixXd>;

ParamList zeros_like(const ParamList& like);
double squared_norm(const ParamList& p);

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Eigen::MatrixXd xavier_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global gradient-norm clip; <= 0 disables.
  double max_grad_norm = 0.0;
};

class Adam {
 public:
  Adam(const ParamList& like, AdamOptions options);

  void step(ParamList& params, const ParamList& grads);
  const AdamOptions& options() const { return options_; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }

 private:
  AdamOptions options_;
  ParamList m_;
  ParamList v_;
  long t_ = 0;
};

/// |a - n| / max(|a| + |n|, floor). The floor keeps vanishing gradients from
/// turning round-off into large relative errors.
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Perturbs every scalar of `params` by +-step, evaluates `loss`, and returns
/// the largest relative error against `analytic`. `params` is restored.
double finite_difference_check(ParamList& params, const ParamList& analytic,
                               const std::function<double()>& loss, double step = 1e-5);

inline double leaky_relu(double x, double slope) { return x > 0.0 ? x : slope * x; }
inline double leaky_relu_grad(double x, double slope) { return x > 0.0 ? 1.0 : slope; }

/// Column-wise numerically stable softmax.
Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits);

}  // namespace mvp::nn
