#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "harp/rng.hpp"
#include "harp/tensor.hpp"

namespace harp::testing {

using LossFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0, bool rg = true) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), rg);
}

struct GradCheck {
  double worst_rel = 0.0;
  bool ok = true;
};

/// Central finite differences (h = 1e-5) against the tape gradient for every
/// input element. An element passes if rel. err < tol or abs. err < 1e-7.
inline GradCheck check_gradients(const LossFn& f, std::vector<Tensor> inputs, double tol = 1e-4, double h = 1e-5) {
  {
    Tape tape;
    Tensor loss = f(tape, inputs);
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(t.size(), 0.0);
  }
  auto eval = [&] {
    Tape tape;
    std::vector<Tensor> frozen;
    for (auto& t : inputs) frozen.push_back(t.detached());
    return f(tape, frozen).item();
  };
  GradCheck out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto v = inputs[k].mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double up = eval();
      v[i] = orig - h;
      const double down = eval();
      v[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-300});
      if (abs_err < 1e-7) continue;
      out.worst_rel = std::max(out.worst_rel, rel);
      if (rel >= tol) out.ok = false;
    }
  }
  return out;
}

}  // namespace harp::testing
