#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "harp/adversary.hpp"
#include "harp/dataset.hpp"
#include "harp/net.hpp"
#include "harp/rng.hpp"
#include "harp/sgd.hpp"

namespace harp {

/// A training loss became NaN or infinite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Budget { param_count, flops };
/// How the per-weight products are folded into one rate gradient per layer.
enum class RateAggregation { sum, mean };

Budget parse_budget(std::string_view name);
std::string_view budget_name(Budget b);
RateAggregation parse_rate_aggregation(std::string_view name);
std::string_view rate_aggregation_name(RateAggregation a);

struct CompressionConfig {
  double k_t = 0.01;
  double k_min = 0.001;
  double k_init = 0.1;
  double gamma_step = 0.01;
  Granularity granularity = Granularity::weight;
  Budget budget = Budget::param_count;
  bool learn_rates = true;
  bool learn_scores = true;
  RateAggregation aggregation = RateAggregation::sum;
  /// Once the budget has been met, shift all quotas down whenever an update
  /// would push the network back over it.
  bool budget_clip = true;

  /// k_min = 0.1·k_t, k_init = min(10·k_t, 0.5).
  static CompressionConfig for_target(double k_t);
  void validate() const;
};

/// g(r) = (1 - k_min)·σ(r) + k_min.
double rate_activation(double r, double k_min);
/// g'(r) = (1 - k_min)·σ(r)·(1 - σ(r)).
double rate_activation_derivative(double r, double k_min);
/// Inverse of g: log((k_init - k_min) / (1 - k_init)).
double init_rate(double k_init, double k_min);

/// round(rate·n), kept within [1, n] so no layer is emptied.
std::size_t retained_count(double rate, std::size_t n);

/// Cutoff t with mask = 1{s > t} keeping retained_count(1 - alpha, n)
/// entries when scores are distinct; -inf when nothing is cut.
double percentile_threshold(double alpha, std::span<const double> scores);
/// Binary mask keeping the top retained_count(1 - alpha, n) scores.
/// Ties are broken by flat index, lower index first.
std::vector<double> percentile_mask(double alpha, std::span<const double> scores);
/// Binary mask keeping exactly `keep` entries (same ordering rule).
std::vector<double> top_k_mask(std::size_t keep, std::span<const double> scores);

/// Mask ranking keys |s|: signed scores keep weight-magnitude order.
std::vector<double> ranking_keys(std::span<const double> scores);

/// Per-layer rates g(r^(l)).
std::vector<double> layer_rates(const Network& net, double k_min);
/// Installs m^(l) = percentile mask of |s^(l)| at α = 1 - g(r^(l)).
void build_masks(Network& net, double k_min);
/// Installs percentile masks of the current |scores| at fixed rates.
void build_masks_at_rates(Network& net, std::span<const double> rates);

/// max(n̂ / (k_t·N) - 1, 0).
double hw_loss_count(double preserved, double total, double k_t);
/// max(F̂ / (k_t·F) - 1, 0).
double hw_loss_flops(double flops_hat, double flops_total, double k_t);

/// Straight-through score gradient: upstream ⊙ θ, summed per input channel
/// for channel granularity.
std::vector<double> ste_score_grad(std::span<const double> upstream, std::span<const double> theta,
                                   const LayerSpec& spec, Granularity granularity);
/// Straight-through rate gradient: aggregate(upstream ⊙ θ) · g'(r).
double ste_rate_grad(std::span<const double> upstream, std::span<const double> theta, double r, double k_min,
                     RateAggregation aggregation = RateAggregation::sum);

/// Linear γ ramp, frozen at the first epoch whose hardware loss is zero.
class GammaSchedule {
 public:
  explicit GammaSchedule(double step = 0.01) : step_(step) {}

  /// γ to use while training epoch `epoch` (1-based).
  double value_for_epoch(int epoch) const;
  /// End-of-epoch update with that epoch's hardware loss; returns γ.
  double update(int epoch, double hw_loss_value);

  double step() const { return step_; }
  double current() const { return current_; }
  bool frozen() const { return frozen_; }
  std::optional<int> arrival_epoch() const { return arrival_; }

 private:
  double step_;
  double current_ = 0.0;
  bool frozen_ = false;
  std::optional<int> arrival_;
};

/// s = η·θ / max|θ| with η = sqrt(6 / fan_in).
Tensor init_scores_weight(const Tensor& theta, std::size_t fan_in);
/// s_c = η·Csum(|θ|)_c / max_c Csum(|θ|), one score per input channel.
Tensor init_scores_channel(const Tensor& theta, const LayerSpec& spec, std::size_t fan_in);

/// Granularity switch, score and quota initialization, shortcut tying, masks.
void init_pruning(Network& net, const CompressionConfig& cfg);

/// Quotas of shortcut layers copied from their block-input layers.
void tie_shortcut_quotas(Network& net);

/// Exact budget measurement: preserved / N, or F̂ / F.
double global_rate(const Network& net, Budget budget);
double hw_loss(const Network& net, const CompressionConfig& cfg);

/// ∂L_hw/∂r^(l) through the smooth surrogate Σ g(r^(l))·n^(l) (or its FLOPs
/// analogue); zero wherever the exact hardware loss is clamped.
std::vector<double> hw_rate_gradients(const Network& net, const CompressionConfig& cfg);

struct PruneHyper {
  SgdConfig score_sgd{0.1, 0.9, 0.0};
  SgdConfig rate_sgd{0.1, 0.9, 0.0};
  int epochs = 20;
  std::size_t batch_size = 64;
};

struct EpochStats {
  int epoch = 0;
  double gamma = 0.0;
  double robust_loss = 0.0;
  /// Mean over the epoch's batches.
  double hw_loss = 0.0;
  /// Exact value under the masks left at the end of the epoch.
  double end_hw_loss = 0.0;
  double global_rate = 1.0;
  std::vector<double> layer_rates;
  bool arrived = false;
};

/// Strategy search: optimizes scores and quotas (θ frozen) on
/// L_rob + γ·L_hw, rebuilding masks from (r, s) every batch.
class Pruner {
 public:
  Pruner(Network& net, CompressionConfig cfg, RobustLossConfig loss, AttackConfig attack, PruneHyper hyper);

  /// Quotas stay fixed and masks use these per-layer rates instead.
  void fix_rates(std::vector<double> rates);

  EpochStats run_epoch(const Dataset& data, Rng& rng, int epoch);

  const GammaSchedule& gamma() const { return gamma_; }
  GammaSchedule& gamma() { return gamma_; }
  Sgd& score_optimizer() { return score_opt_; }
  Sgd& rate_optimizer() { return rate_opt_; }
  /// Refreshes masks from the current (r, s).
  void rebuild_masks();

 private:
  void clip_to_budget();
  bool uses_learned_rates() const { return cfg_.learn_rates && !fixed_rates_; }
  void assert_rate_range() const;

  Network& net_;
  CompressionConfig cfg_;
  RobustLossConfig loss_;
  AttackConfig attack_;
  PruneHyper hyper_;
  GammaSchedule gamma_;
  Sgd score_opt_;
  Sgd rate_opt_;
  std::vector<std::size_t> rate_layers_;
  std::optional<std::vector<double>> fixed_rates_;
};

}  // namespace harp
