#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "medroute/numerics/tensor.hpp"

namespace medroute::numerics {

struct AdamWConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Moment buffers for decoupled-weight-decay Adam.
class AdamWState {
 public:
  AdamWState() = default;
  AdamWState(AdamWConfig config, std::span<Tensor* const> params);

  const AdamWConfig& config() const { return config_; }
  std::int64_t step_count() const { return step_count_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

  /// One bias-corrected AdamW update of `params` in place. Throws on non-finite gradients
  /// before touching any parameter.
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads);

 private:
  AdamWConfig config_;
  std::int64_t step_count_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace medroute::numerics
