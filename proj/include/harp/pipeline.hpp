#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "harp/adversary.hpp"
#include "harp/checkpoint.hpp"
#include "harp/compress.hpp"
#include "harp/config.hpp"
#include "harp/dataset.hpp"
#include "harp/strategy.hpp"

namespace harp {

/// Train/test data described by the config.
DatasetSplit load_data(const RunConfig& cfg);
/// Evaluation attacks named in eval.attacks.
std::vector<NamedAttack> eval_attacks(const RunConfig& cfg);

/// Independent stream per (seed, stage tag).
Rng stage_rng(std::uint64_t seed, std::uint64_t tag);

/// Robust training of θ under the installed masks.
/// Returns the optimizer velocities. Throws DivergenceError on a NaN loss.
std::vector<std::vector<double>> train_weights(Network& net, const Dataset& data, const StageConfig& stage,
                                               std::size_t batch_size, const RobustLossConfig& loss,
                                               const AttackConfig& attack, Rng& rng, const std::string& tag,
                                               std::ostream* log);

Checkpoint init_checkpoint(const RunConfig& cfg, const DatasetSplit& data);
Checkpoint stage_pretrain(const RunConfig& cfg, const DatasetSplit& data, std::ostream* log = nullptr);

struct PruneResult {
  Checkpoint ckpt;
  std::vector<EpochStats> curve;
  std::optional<int> arrival_epoch;
};

/// Initializes (r, s) on the pretrained network and runs the strategy search.
PruneResult stage_prune(const RunConfig& cfg, const Checkpoint& pretrained, const DatasetSplit& data,
                        std::ostream* log = nullptr);
/// θ trained under the prune checkpoint's frozen masks.
Checkpoint stage_finetune(const RunConfig& cfg, const Checkpoint& pruned, const DatasetSplit& data,
                          std::ostream* log = nullptr);

std::vector<MetricRow> evaluate_checkpoint(const RunConfig& cfg, const Checkpoint& ckpt, const DatasetSplit& data);

struct RunResult {
  Checkpoint pretrained;
  PruneResult pruned;
  Checkpoint final;
  std::vector<MetricRow> metrics;
};

RunResult run_pipeline(const RunConfig& cfg, const DatasetSplit& data, std::ostream* log = nullptr);

struct SweepRow {
  Method method = Method::harp;
  double k_t = 1.0;
  double global_rate = 1.0;
  bool arrived = false;
  std::vector<MetricRow> metrics;
};

/// One shared pretrain, then prune + finetune + eval per (method, target).
std::vector<SweepRow> run_sweep(const RunConfig& cfg, const DatasetSplit& data, std::ostream* log = nullptr);

/// epoch,gamma,l_rob,l_hw,l_hw_end,global_rate,arrived
std::string curve_csv(const std::vector<EpochStats>& curve);
/// method,k_t,global_rate,arrived,<attack>_acc...
std::string sweep_csv(const std::vector<SweepRow>& rows);
/// layer,bin,lo,hi,count over retained weights; counts sum to the preserved count.
std::string histogram_csv(const Network& net, std::size_t bins);

}  // namespace harp
