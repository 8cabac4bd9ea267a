#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>

#include "warmstart/autodiff.hpp"

namespace warmstart {

// Defaults follow the common Adam settings; only the optimizer itself is
// prescribed for fine-tuning.
struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Bias-corrected update of every non-frozen parameter from Parameter::grad.
  // All gradients are validated before any parameter changes.
  void step(std::span<const ParamPtr<T>> params, double learning_rate);

  std::int64_t step_count() const noexcept { return step_; }
  const AdamConfig& config() const noexcept { return config_; }

  const Tensor<T>* first_moment(const Parameter<T>& p) const;
  const Tensor<T>* second_moment(const Parameter<T>& p) const;

 private:
  struct Moments {
    Tensor<T> m;
    Tensor<T> v;
  };

  AdamConfig config_;
  std::int64_t step_ = 0;
  std::unordered_map<const Parameter<T>*, Moments> moments_;
};

}  // namespace warmstart
