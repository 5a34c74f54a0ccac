#include "medroute/numerics/optim.hpp"

#include <cmath>

namespace medroute::numerics {

AdamWState::AdamWState(AdamWConfig config, std::span<Tensor* const> params) : config_(config) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto* p : params) {
    m_.emplace_back(p->shape());
    v_.emplace_back(p->shape());
  }
}

void AdamWState::step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != m_.size() || grads.size() != params.size())
    throw ShapeError("adamw: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || m_[i].shape() != grads[i].shape())
      throw ShapeError("adamw: shape mismatch for parameter " + std::to_string(i));
    if (!all_finite(grads[i]))
      throw Error("adamw: non-finite gradient for parameter " + std::to_string(i));
  }

  ++step_count_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
  const double lr = config_.lr, wd = config_.weight_decay, eps = config_.eps;

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->values();
    auto& m = m_[i].values();
    auto& v = v_[i].values();
    const auto& g = grads[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      m[j] = static_cast<float>(b1 * m[j] + (1.0 - b1) * gj);
      v[j] = static_cast<float>(b2 * v[j] + (1.0 - b2) * gj * gj);
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      const double update = lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[j]);
      p[j] = static_cast<float>(p[j] - update);
    }
  }
}

}  // namespace medroute::numerics
