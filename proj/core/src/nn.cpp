#include "mvp/nn.hpp"

#include <algorithm>
#include <stdexcept>

namespace mvp::nn {

ParamList zeros_like(const ParamList& like) {
  ParamList out;
  out.reserve(like.size());
  for (const auto& m : like) out.push_back(Eigen::MatrixXd::Zero(m.rows(), m.cols()));
  return out;
}

double squared_norm(const ParamList& p) {
  double s = 0.0;
  for (const auto& m : p) s += m.squaredNorm();
  return s;
}

Eigen::MatrixXd xavier_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Eigen::MatrixXd m(rows, cols);
  // Fill order is fixed (row-major) so initialization does not depend on
  // Eigen's storage order.
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-a, a);
  }
  return m;
}

Adam::Adam(const ParamList& like, AdamOptions options)
    : options_(options), m_(zeros_like(like)), v_(zeros_like(like)) {}

void Adam::step(ParamList& params, const ParamList& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw std::invalid_argument("Adam: parameter list shape changed");
  }
  double scale = 1.0;
  if (options_.max_grad_norm > 0.0) {
    const double norm = std::sqrt(squared_norm(grads));
    if (norm > options_.max_grad_norm) scale = options_.max_grad_norm / norm;
  }
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Eigen::MatrixXd g = grads[k] * scale;
    m_[k] = b1 * m_[k] + (1.0 - b1) * g;
    v_[k] = b2 * v_[k] + (1.0 - b2) * g.cwiseProduct(g);
    params[k].array() -= options_.learning_rate * (m_[k].array() / c1) /
                         ((v_[k].array() / c2).sqrt() + options_.epsilon);
  }
}

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), floor);
}

double finite_difference_check(ParamList& params, const ParamList& analytic,
                               const std::function<double()>& loss, double step) {
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + step;
      const double up = loss();
      p.data()[i] = saved - step;
      const double down = loss();
      p.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      worst = std::max(worst, relative_error(analytic[k].data()[i], numeric));
    }
  }
  return worst;
}

Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double mx = logits.col(c).maxCoeff();
    out.col(c) = (logits.col(c).array() - mx).exp();
    out.col(c) /= out.col(c).sum();
  }
  return out;
}

}  // namespace mvp::nn
