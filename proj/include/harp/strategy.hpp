#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "harp/net.hpp"

namespace harp {

enum class StrategySource { uniform, erk, lamp, harp_learned };

StrategySource parse_strategy_source(std::string_view name);
std::string_view strategy_source_name(StrategySource s);

struct StrategyRow {
  std::string layer;
  double rate = 1.0;
  std::size_t preserved = 0;
  double preserved_flops = 0.0;
};

/// Per-layer allocation of the weight budget.
struct StrategyTable {
  StrategySource source = StrategySource::uniform;
  std::vector<StrategyRow> rows;
  double global_rate = 1.0;

  std::size_t total_preserved() const;
  const StrategyRow& row(std::string_view layer) const;
  /// Rates in network layer order; throws if a layer has no row.
  std::vector<double> rates_for(const Network& net) const;
};

/// Same rate k_t on every layer.
StrategyTable uniform_strategy(const Network& net, double k_t);

/// Erdős-Rényi-Kernel densities, scaled to k_t·N, with layers that would
/// exceed density 1 capped and the remainder redistributed.
StrategyTable erk_strategy(const Network& net, double k_t);
/// Raw ERK shape factor: sum of weight dims over their product.
double erk_factor(const LayerSpec& spec);

/// Layer-adaptive magnitude scores: w_i² over the sum of w_j² for all
/// |w_j| ≥ |w_i| in the same layer.
std::vector<double> lamp_scores(std::span<const double> weights);
/// Keeps the global top round(k_t·N) LAMP scores.
StrategyTable lamp_strategy(const Network& net, double k_t);

/// Installs top-scoring masks at the table's per-layer rates using the
/// network's current scores. θ is not touched.
void apply_strategy(Network& net, const StrategyTable& table);
/// Sets scores to |θ| in weight granularity.
void set_magnitude_scores(Network& net);

/// Reads the table off the installed masks.
StrategyTable measure_strategy(const Network& net, StrategySource source = StrategySource::harp_learned);

/// layer,rate,preserved_params,preserved_flops
std::string strategy_csv(const StrategyTable& table);
/// One row per layer, one rate column per table.
std::string strategy_comparison_csv(const std::vector<StrategyTable>& tables);

}  // namespace harp
