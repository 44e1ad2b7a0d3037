#include "harp/strategy.hpp"

#include <algorithm>
#include <cmath>
#include <locale>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "harp/compress.hpp"

namespace harp {

StrategySource parse_strategy_source(std::string_view name) {
  if (name == "uniform") return StrategySource::uniform;
  if (name == "erk") return StrategySource::erk;
  if (name == "lamp") return StrategySource::lamp;
  if (name == "harp-learned" || name == "harp") return StrategySource::harp_learned;
  throw std::invalid_argument("unknown strategy '" + std::string(name) + "' (expected uniform, erk, lamp or harp)");
}

std::string_view strategy_source_name(StrategySource s) {
  switch (s) {
    case StrategySource::uniform: return "uniform";
    case StrategySource::erk: return "erk";
    case StrategySource::lamp: return "lamp";
    case StrategySource::harp_learned: return "harp-learned";
  }
  return "?";
}

std::size_t StrategyTable::total_preserved() const {
  std::size_t n = 0;
  for (const auto& r : rows) n += r.preserved;
  return n;
}

const StrategyRow& StrategyTable::row(std::string_view layer) const {
  for (const auto& r : rows) {
    if (r.layer == layer) return r;
  }
  throw std::invalid_argument("strategy table has no row for layer '" + std::string(layer) + "'");
}

std::vector<double> StrategyTable::rates_for(const Network& net) const {
  std::vector<double> rates;
  rates.reserve(net.layers.size());
  for (const auto& l : net.layers) rates.push_back(row(l.spec.name).rate);
  return rates;
}

namespace {

void check_target(double k_t) {
  if (!(k_t > 0.0 && k_t <= 1.0)) throw std::invalid_argument("strategy: k_t must lie in (0, 1]");
}

StrategyTable table_from_counts(const Network& net, StrategySource source, const std::vector<std::size_t>& kept) {
  StrategyTable t;
  t.source = source;
  const auto full = full_flops(net);
  std::size_t total = 0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto n = net.layers[l].spec.weight_count();
    StrategyRow row;
    row.layer = net.layers[l].spec.name;
    row.preserved = kept[l];
    row.rate = static_cast<double>(kept[l]) / static_cast<double>(n);
    row.preserved_flops = row.rate * full.per_layer[l];
    total += kept[l];
    t.rows.push_back(row);
  }
  t.global_rate = static_cast<double>(total) / static_cast<double>(net.total_weights());
  return t;
}

}  // namespace

StrategyTable uniform_strategy(const Network& net, double k_t) {
  check_target(k_t);
  std::vector<std::size_t> kept;
  for (const auto& l : net.layers) kept.push_back(retained_count(k_t, l.spec.weight_count()));
  auto t = table_from_counts(net, StrategySource::uniform, kept);
  for (auto& r : t.rows) r.rate = k_t;
  return t;
}

double erk_factor(const LayerSpec& spec) {
  const double ci = static_cast<double>(spec.in_channels);
  const double co = static_cast<double>(spec.out_channels);
  if (spec.kind == LayerKind::fc) return (ci + co) / (ci * co);
  const double k = static_cast<double>(spec.kernel);
  return (ci + co + k + k) / (ci * co * k * k);
}

StrategyTable erk_strategy(const Network& net, double k_t) {
  check_target(k_t);
  const std::size_t L = net.layers.size();
  std::vector<double> n(L), raw(L);
  for (std::size_t l = 0; l < L; ++l) {
    n[l] = static_cast<double>(net.layers[l].spec.weight_count());
    raw[l] = erk_factor(net.layers[l].spec);
  }
  const double budget = k_t * static_cast<double>(net.total_weights());
  std::vector<bool> dense(L, false);
  double eps = 0.0;
  for (;;) {
    double fixed = 0.0, scaled = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      if (dense[l]) {
        fixed += n[l];
      } else {
        scaled += raw[l] * n[l];
      }
    }
    if (scaled == 0.0) {
      if (fixed > budget * (1.0 + 1e-12)) throw std::invalid_argument("erk: infeasible budget");
      break;
    }
    eps = (budget - fixed) / scaled;
    if (eps <= 0.0) throw std::invalid_argument("erk: infeasible budget");
    std::size_t worst = L;
    for (std::size_t l = 0; l < L; ++l) {
      if (!dense[l] && raw[l] * eps > 1.0 && (worst == L || raw[l] > raw[worst])) worst = l;
    }
    if (worst == L) break;
    dense[worst] = true;
  }
  std::vector<std::size_t> kept(L);
  std::vector<double> density(L);
  for (std::size_t l = 0; l < L; ++l) {
    density[l] = dense[l] ? 1.0 : raw[l] * eps;
    kept[l] = retained_count(density[l], net.layers[l].spec.weight_count());
  }
  return table_from_counts(net, StrategySource::erk, kept);
}

std::vector<double> lamp_scores(std::span<const double> weights) {
  const std::size_t n = weights.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Descending magnitude, flat index ascending among ties.
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ma = std::abs(weights[a]), mb = std::abs(weights[b]);
    if (ma != mb) return ma > mb;
    return a < b;
  });
  std::vector<double> scores(n, 0.0);
  double running = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    const double mag = std::abs(weights[order[i]]);
    while (j < n && std::abs(weights[order[j]]) == mag) {
      running += weights[order[j]] * weights[order[j]];
      ++j;
    }
    for (std::size_t p = i; p < j; ++p) {
      const double w2 = weights[order[p]] * weights[order[p]];
      scores[order[p]] = running > 0.0 ? w2 / running : 0.0;
    }
    i = j;
  }
  return scores;
}

StrategyTable lamp_strategy(const Network& net, double k_t) {
  check_target(k_t);
  struct Entry {
    double score;
    std::size_t layer;
    std::size_t index;
  };
  std::vector<Entry> all;
  all.reserve(net.total_weights());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto s = lamp_scores(net.layers[l].weight.values());
    for (std::size_t i = 0; i < s.size(); ++i) all.push_back({s[i], l, i});
  }
  const std::size_t keep = retained_count(k_t, all.size());
  auto before = [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.index < b.index;
  };
  if (keep < all.size()) {
    std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), before);
  }
  std::vector<std::size_t> kept(net.layers.size(), 0);
  for (std::size_t i = 0; i < keep; ++i) ++kept[all[i].layer];
  for (auto& k : kept) k = std::max<std::size_t>(k, 1);
  return table_from_counts(net, StrategySource::lamp, kept);
}

void apply_strategy(Network& net, const StrategyTable& table) {
  const auto rates = table.rates_for(net);
  for (double r : rates) {
    if (!(r > 0.0 && r <= 1.0)) throw std::invalid_argument("apply_strategy: rates must lie in (0, 1]");
  }
  build_masks_at_rates(net, rates);
}

void set_magnitude_scores(Network& net) {
  if (net.granularity != Granularity::weight) throw std::invalid_argument("magnitude scores need weight granularity");
  for (auto& l : net.layers) {
    auto tv = l.weight.values();
    Tensor s(l.weight.shape(), 0.0);
    auto sv = s.mutable_values();
    for (std::size_t i = 0; i < sv.size(); ++i) sv[i] = std::abs(tv[i]);
    l.scores = s;
  }
}

StrategyTable measure_strategy(const Network& net, StrategySource source) {
  const auto preserved = count_preserved(net);
  const auto f = flops(net);
  StrategyTable t;
  t.source = source;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    StrategyRow row;
    row.layer = net.layers[l].spec.name;
    row.preserved = preserved.per_layer[l];
    row.rate = static_cast<double>(row.preserved) / static_cast<double>(net.layers[l].spec.weight_count());
    row.preserved_flops = f.per_layer[l];
    t.rows.push_back(row);
  }
  t.global_rate = static_cast<double>(preserved.total) / static_cast<double>(net.total_weights());
  return t;
}

namespace {

std::ostringstream csv_stream() {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(6);
  os << std::fixed;
  return os;
}

}  // namespace

std::string strategy_csv(const StrategyTable& table) {
  auto os = csv_stream();
  os << "layer,rate,preserved_params,preserved_flops\n";
  for (const auto& r : table.rows) {
    os << r.layer << ',' << r.rate << ',' << r.preserved << ',' << r.preserved_flops << '\n';
  }
  return os.str();
}

std::string strategy_comparison_csv(const std::vector<StrategyTable>& tables) {
  if (tables.empty()) throw std::invalid_argument("strategy comparison needs at least one table");
  auto os = csv_stream();
  os << "layer";
  for (const auto& t : tables) os << ',' << strategy_source_name(t.source) << "_rate";
  for (const auto& t : tables) os << ',' << strategy_source_name(t.source) << "_preserved";
  os << '\n';
  for (const auto& r : tables.front().rows) {
    os << r.layer;
    for (const auto& t : tables) os << ',' << t.row(r.layer).rate;
    for (const auto& t : tables) os << ',' << t.row(r.layer).preserved;
    os << '\n';
  }
  os << "global";
  for (const auto& t : tables) os << ',' << t.global_rate;
  for (const auto& t : tables) os << ',' << t.total_preserved();
  os << '\n';
  return os.str();
}

}  // namespace harp
