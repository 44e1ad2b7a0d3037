#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "harp/dataset.hpp"
#include "harp/net.hpp"
#include "harp/rng.hpp"
#include "harp/tensor.hpp"

namespace harp {

/// l∞ attack parameters. Defaults: ε = 8/255, κ = 2/255, ten iterations.
struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  double step_size = 2.0 / 255.0;
  int iters = 10;
  bool random_init = true;
  double lower = 0.0;
  double upper = 1.0;

  void validate() const;
};

enum class RobustKind { pgd_at, trades };

RobustKind parse_robust_kind(std::string_view name);
std::string_view robust_kind_name(RobustKind kind);

struct RobustLossConfig {
  RobustKind kind = RobustKind::pgd_at;
  /// TRADES regularization weight.
  double beta = 6.0;
};

/// Objective the inner maximization ascends.
enum class AttackObjective { cross_entropy, kl_to_clean };

/// Single signed-gradient step of size ε from x, then box clamp.
Tensor fgsm(const Network& net, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg);

/// `iters` projected signed-gradient steps; returns the final iterate.
/// `rng` is required only when cfg.random_init is set.
Tensor pgd(const Network& net, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg, Rng* rng,
           AttackObjective objective = AttackObjective::cross_entropy);

/// Records the robust training objective on `tape`. The adversarial input
/// is treated as a constant (no gradient through the inner maximization).
Tensor robust_loss(Tape& tape, const Network& net, const Tensor& x, std::span<const int> labels,
                   const RobustLossConfig& loss, const AttackConfig& attack, Rng& rng,
                   const ForwardOptions& options, ForwardTrace* trace = nullptr);

struct NamedAttack {
  std::string name;  // "natural", "fgsm" or "pgd"
  AttackConfig config;
};

struct MetricRow {
  std::string attack;
  double accuracy_pct = 0.0;
  double epsilon = 0.0;
  int iters = 0;
};

/// Accuracy under each attack over the whole dataset; attacks draw their
/// random starts from a stream seeded with `seed`.
std::vector<MetricRow> evaluate(const Network& net, const Dataset& data, const std::vector<NamedAttack>& attacks,
                                std::uint64_t seed, std::size_t batch_size = 128);

/// CSV with header attack,accuracy_pct,epsilon,iters.
std::string metrics_csv(const std::vector<MetricRow>& rows);

/// Fraction of argmax(logits) == label.
double batch_accuracy(const Tensor& logits, std::span<const int> labels);

}  // namespace harp
