#pragma once

#include <cstddef>
#include <vector>

#include "harp/tensor.hpp"

namespace harp {

/// rate(e) = base * 0.5 * (1 + cos(pi * e / total)).
struct CosineSchedule {
  double base_rate = 0.1;
  int total_epochs = 1;

  double rate(int epoch) const;
};

struct SgdConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

/// Momentum SGD with decoupled weight decay; one velocity buffer per param.
class Sgd {
 public:
  Sgd() = default;
  Sgd(SgdConfig config, std::vector<Tensor> params);

  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  double learning_rate() const { return config_.learning_rate; }
  const SgdConfig& config() const { return config_; }

  /// Throws std::logic_error if any param lacks a gradient. Clears grads.
  void step();
  void zero_grad();

  std::vector<Tensor>& params() { return params_; }
  std::vector<std::vector<double>>& velocity() { return velocity_; }
  const std::vector<std::vector<double>>& velocity() const { return velocity_; }

 private:
  SgdConfig config_{};
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace harp
