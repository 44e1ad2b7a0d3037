#include "harp/sgd.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace harp {

double CosineSchedule::rate(int epoch) const {
  if (total_epochs <= 0) return base_rate;
  return base_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / total_epochs));
}

Sgd::Sgd(SgdConfig config, std::vector<Tensor> params) : config_(config), params_(std::move(params)) {
  if (config_.momentum < 0.0 || config_.momentum >= 1.0) {
    throw std::invalid_argument("sgd: momentum must lie in [0, 1)");
  }
  if (config_.weight_decay < 0.0) throw std::invalid_argument("sgd: weight decay must be non-negative");
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.size(), 0.0);
}

void Sgd::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) {
      throw std::logic_error("sgd: parameter " + std::to_string(i) + " has no gradient");
    }
  }
  const double lr = config_.learning_rate, mu = config_.momentum, wd = config_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    auto values = p.mutable_values();
    auto grad = p.grad();
    auto& vel = velocity_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      vel[j] = mu * vel[j] + grad[j];
      values[j] -= lr * vel[j] + lr * wd * values[j];
    }
    p.clear_grad();
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace harp
