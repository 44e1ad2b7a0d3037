#include "harp/compress.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace harp {

Budget parse_budget(std::string_view name) {
  if (name == "param-count") return Budget::param_count;
  if (name == "flops") return Budget::flops;
  throw std::invalid_argument("unknown budget '" + std::string(name) + "' (expected param-count or flops)");
}

std::string_view budget_name(Budget b) { return b == Budget::param_count ? "param-count" : "flops"; }

RateAggregation parse_rate_aggregation(std::string_view name) {
  if (name == "sum") return RateAggregation::sum;
  if (name == "mean") return RateAggregation::mean;
  throw std::invalid_argument("unknown rate aggregation '" + std::string(name) + "' (expected sum or mean)");
}

std::string_view rate_aggregation_name(RateAggregation a) { return a == RateAggregation::sum ? "sum" : "mean"; }

CompressionConfig CompressionConfig::for_target(double k_t) {
  CompressionConfig cfg;
  cfg.k_t = k_t;
  cfg.k_min = 0.1 * k_t;
  cfg.k_init = std::min(10.0 * k_t, 0.5);
  return cfg;
}

void CompressionConfig::validate() const {
  if (!(k_t > 0.0 && k_t <= 1.0)) throw std::invalid_argument("compression: k_t must lie in (0, 1]");
  if (!(k_min > 0.0 && k_min < 1.0)) throw std::invalid_argument("compression: k_min must lie in (0, 1)");
  if (learn_rates && !(k_min < k_init && k_init < 1.0)) {
    throw std::invalid_argument("compression: need k_min < k_init < 1");
  }
  if (!(gamma_step >= 0.0)) throw std::invalid_argument("compression: gamma step must be non-negative");
}

double rate_activation(double r, double k_min) {
  const double sig = 1.0 / (1.0 + std::exp(-r));
  return (1.0 - k_min) * sig + k_min;
}

double rate_activation_derivative(double r, double k_min) {
  const double sig = 1.0 / (1.0 + std::exp(-r));
  return (1.0 - k_min) * sig * (1.0 - sig);
}

double init_rate(double k_init, double k_min) {
  if (!(k_init > k_min) || !(k_init < 1.0)) {
    throw std::invalid_argument("init_rate: need k_min < k_init < 1 (k_init=" + std::to_string(k_init) +
                                ", k_min=" + std::to_string(k_min) + ")");
  }
  return std::log((k_init - k_min) / (1.0 - k_init));
}

std::size_t retained_count(double rate, std::size_t n) {
  if (n == 0) return 0;
  const double want = std::round(std::clamp(rate, 0.0, 1.0) * static_cast<double>(n));
  return std::clamp<std::size_t>(static_cast<std::size_t>(want), 1, n);
}

namespace {

// Indices ordered by (score descending, index ascending); the first `keep`
// are placed at the front.
std::vector<std::size_t> ranked_prefix(std::span<const double> scores, std::size_t keep) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  if (keep < idx.size()) {
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(), before);
  }
  return idx;
}

}  // namespace

double percentile_threshold(double alpha, std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("percentile_threshold: empty scores");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("percentile_threshold: alpha must lie in [0,1)");
  const std::size_t keep = retained_count(1.0 - alpha, scores.size());
  if (keep == scores.size()) return -std::numeric_limits<double>::infinity();
  const auto idx = ranked_prefix(scores, keep);
  return scores[idx[keep]];
}

std::vector<double> top_k_mask(std::size_t keep, std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("top_k_mask: empty scores");
  keep = std::min(keep, scores.size());
  std::vector<double> mask(scores.size(), 0.0);
  if (keep == scores.size()) {
    std::fill(mask.begin(), mask.end(), 1.0);
    return mask;
  }
  const auto idx = ranked_prefix(scores, keep);
  for (std::size_t i = 0; i < keep; ++i) mask[idx[i]] = 1.0;
  return mask;
}

std::vector<double> percentile_mask(double alpha, std::span<const double> scores) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("percentile_mask: alpha must lie in [0,1)");
  return top_k_mask(retained_count(1.0 - alpha, scores.size()), scores);
}

std::vector<double> layer_rates(const Network& net, double k_min) {
  std::vector<double> rates;
  rates.reserve(net.layers.size());
  for (const auto& l : net.layers) rates.push_back(rate_activation(l.quota.item(), k_min));
  return rates;
}

std::vector<double> ranking_keys(std::span<const double> scores) {
  std::vector<double> keys(scores.size());
  for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = std::abs(scores[i]);
  return keys;
}

void build_masks_at_rates(Network& net, std::span<const double> rates) {
  if (rates.size() != net.layers.size()) throw std::invalid_argument("build_masks: one rate per layer required");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& l = net.layers[i];
    const std::size_t keep = retained_count(rates[i], l.scores.size());
    auto mask = top_k_mask(keep, ranking_keys(l.scores.values()));
    std::copy(mask.begin(), mask.end(), l.mask.mutable_values().begin());
  }
}

void build_masks(Network& net, double k_min) {
  const auto rates = layer_rates(net, k_min);
  build_masks_at_rates(net, rates);
}

double hw_loss_count(double preserved, double total, double k_t) {
  if (!(total > 0.0)) throw std::invalid_argument("hw_loss_count: total must be positive");
  return std::max(preserved / (k_t * total) - 1.0, 0.0);
}

double hw_loss_flops(double flops_hat, double flops_total, double k_t) {
  if (!(flops_total > 0.0)) throw std::invalid_argument("hw_loss_flops: total FLOPs must be positive");
  return std::max(flops_hat / (k_t * flops_total) - 1.0, 0.0);
}

std::vector<double> ste_score_grad(std::span<const double> upstream, std::span<const double> theta,
                                   const LayerSpec& spec, Granularity granularity) {
  if (upstream.size() != theta.size()) throw ShapeError("ste_score_grad: upstream and weight sizes differ");
  if (granularity == Granularity::weight) {
    std::vector<double> g(theta.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = upstream[i] * theta[i];
    return g;
  }
  if (theta.size() != spec.weight_count()) throw ShapeError("ste_score_grad: weight size does not match layer spec");
  std::vector<double> g(spec.in_channels, 0.0);
  const std::size_t kk = spec.kernel * spec.kernel;
  for (std::size_t o = 0; o < spec.out_channels; ++o) {
    for (std::size_t c = 0; c < spec.in_channels; ++c) {
      const std::size_t base = (o * spec.in_channels + c) * kk;
      double acc = 0.0;
      for (std::size_t j = 0; j < kk; ++j) acc += upstream[base + j] * theta[base + j];
      g[c] += acc;
    }
  }
  return g;
}

double ste_rate_grad(std::span<const double> upstream, std::span<const double> theta, double r, double k_min,
                     RateAggregation aggregation) {
  if (upstream.size() != theta.size()) throw ShapeError("ste_rate_grad: upstream and weight sizes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) s += upstream[i] * theta[i];
  if (aggregation == RateAggregation::mean && !theta.empty()) s /= static_cast<double>(theta.size());
  return s * rate_activation_derivative(r, k_min);
}

double GammaSchedule::value_for_epoch(int epoch) const { return frozen_ ? current_ : step_ * epoch; }

double GammaSchedule::update(int epoch, double hw_loss_value) {
  if (epoch < 1) throw std::invalid_argument("gamma: epochs are 1-based");
  if (!frozen_) {
    current_ = step_ * epoch;
    if (hw_loss_value == 0.0) {
      frozen_ = true;
      arrival_ = epoch;
    }
  }
  return current_;
}

Tensor init_scores_weight(const Tensor& theta, std::size_t fan_in) {
  if (fan_in == 0) throw std::invalid_argument("init_scores_weight: fan_in must be positive");
  double mx = 0.0;
  for (double v : theta.values()) mx = std::max(mx, std::abs(v));
  if (mx == 0.0) throw std::invalid_argument("init_scores_weight: all-zero layer");
  const double eta = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor s(theta.shape(), 0.0);
  auto sv = s.mutable_values();
  auto tv = theta.values();
  for (std::size_t i = 0; i < sv.size(); ++i) sv[i] = eta * tv[i] / mx;
  return s;
}

Tensor init_scores_channel(const Tensor& theta, const LayerSpec& spec, std::size_t fan_in) {
  if (fan_in == 0) throw std::invalid_argument("init_scores_channel: fan_in must be positive");
  if (theta.size() != spec.weight_count()) throw ShapeError("init_scores_channel: weight size does not match spec");
  std::vector<double> csum(spec.in_channels, 0.0);
  const std::size_t kk = spec.kernel * spec.kernel;
  auto tv = theta.values();
  for (std::size_t o = 0; o < spec.out_channels; ++o) {
    for (std::size_t c = 0; c < spec.in_channels; ++c) {
      const std::size_t base = (o * spec.in_channels + c) * kk;
      for (std::size_t j = 0; j < kk; ++j) csum[c] += std::abs(tv[base + j]);
    }
  }
  const double mx = *std::max_element(csum.begin(), csum.end());
  if (mx == 0.0) throw std::invalid_argument("init_scores_channel: all-zero layer");
  const double eta = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : csum) v = eta * v / mx;
  return Tensor(Shape{spec.in_channels}, std::move(csum));
}

void tie_shortcut_quotas(Network& net) {
  for (const auto& link : net.residual_links) {
    net.layers.at(link.shortcut).quota.mutable_values()[0] = net.layers.at(link.block_input).quota.item();
  }
}

void init_pruning(Network& net, const CompressionConfig& cfg) {
  cfg.validate();
  net.set_granularity(cfg.granularity);
  const double r0 = cfg.learn_rates ? init_rate(cfg.k_init, cfg.k_min) : 0.0;
  for (auto& l : net.layers) {
    l.scores = cfg.granularity == Granularity::weight ? init_scores_weight(l.weight, l.spec.fan_in())
                                                      : init_scores_channel(l.weight, l.spec, l.spec.fan_in());
    l.quota.mutable_values()[0] = r0;
  }
  tie_shortcut_quotas(net);
  build_masks(net, cfg.k_min);
}

namespace {

std::vector<Tensor> masks_for_rates(const Network& net, std::span<const double> rates) {
  std::vector<Tensor> masks;
  masks.reserve(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    masks.emplace_back(l.scores.shape(),
                       top_k_mask(retained_count(rates[i], l.scores.size()), ranking_keys(l.scores.values())));
  }
  return masks;
}

std::size_t preserved_at_rates(const Network& net, std::span<const double> rates) {
  std::size_t total = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    std::size_t kept = retained_count(rates[i], net.mask_size(i));
    if (net.granularity == Granularity::channel) kept *= l.spec.weights_per_input_channel();
    total += kept;
  }
  return total;
}

}  // namespace

double global_rate(const Network& net, Budget budget) {
  if (budget == Budget::param_count) {
    return static_cast<double>(count_preserved(net).total) / static_cast<double>(net.total_weights());
  }
  return flops(net).total / full_flops(net).total;
}

double hw_loss(const Network& net, const CompressionConfig& cfg) {
  if (cfg.budget == Budget::param_count) {
    return hw_loss_count(static_cast<double>(count_preserved(net).total), static_cast<double>(net.total_weights()),
                         cfg.k_t);
  }
  return hw_loss_flops(flops(net).total, full_flops(net).total, cfg.k_t);
}

std::vector<double> hw_rate_gradients(const Network& net, const CompressionConfig& cfg) {
  std::vector<double> grads(net.layers.size(), 0.0);
  if (hw_loss(net, cfg) == 0.0) return grads;
  const auto rates = layer_rates(net, cfg.k_min);
  if (cfg.budget == Budget::param_count) {
    const double denom = cfg.k_t * static_cast<double>(net.total_weights());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      grads[l] = static_cast<double>(net.layers[l].spec.weight_count()) / denom *
                 rate_activation_derivative(net.layers[l].quota.item(), cfg.k_min);
    }
    return grads;
  }
  const auto full = full_flops(net);
  const double denom = cfg.k_t * full.total;
  std::vector<double> dk(net.layers.size(), 0.0);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& cons = net.consumers[l];
    if (net.granularity == Granularity::weight || cons.empty()) {
      dk[l] += full.per_layer[l];
      continue;
    }
    double out_rate = 0.0;
    for (auto c : cons) out_rate += rates[c];
    out_rate /= static_cast<double>(cons.size());
    dk[l] += out_rate * full.per_layer[l];
    for (auto c : cons) dk[c] += rates[l] * full.per_layer[l] / static_cast<double>(cons.size());
  }
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    grads[l] = dk[l] / denom * rate_activation_derivative(net.layers[l].quota.item(), cfg.k_min);
  }
  return grads;
}

Pruner::Pruner(Network& net, CompressionConfig cfg, RobustLossConfig loss, AttackConfig attack, PruneHyper hyper)
    : net_(net), cfg_(cfg), loss_(loss), attack_(attack), hyper_(hyper), gamma_(cfg.gamma_step) {
  cfg_.validate();
  std::vector<Tensor> scores, quotas;
  for (std::size_t l = 0; l < net_.layers.size(); ++l) {
    scores.push_back(net_.layers[l].scores);
    const bool tied = std::any_of(net_.residual_links.begin(), net_.residual_links.end(),
                                  [l](const ResidualLink& r) { return r.shortcut == l; });
    if (!tied) {
      rate_layers_.push_back(l);
      quotas.push_back(net_.layers[l].quota);
    }
  }
  score_opt_ = Sgd(hyper_.score_sgd, std::move(scores));
  rate_opt_ = Sgd(hyper_.rate_sgd, std::move(quotas));
}

void Pruner::fix_rates(std::vector<double> rates) {
  if (rates.size() != net_.layers.size()) throw std::invalid_argument("fix_rates: one rate per layer required");
  for (double r : rates) {
    if (!(r > 0.0 && r <= 1.0)) throw std::invalid_argument("fix_rates: rates must lie in (0, 1]");
  }
  fixed_rates_ = std::move(rates);
  rebuild_masks();
}

void Pruner::rebuild_masks() {
  if (fixed_rates_) {
    build_masks_at_rates(net_, *fixed_rates_);
  } else {
    build_masks(net_, cfg_.k_min);
  }
}

void Pruner::assert_rate_range() const {
  if (!uses_learned_rates()) return;
  for (const auto& l : net_.layers) {
    const double k = rate_activation(l.quota.item(), cfg_.k_min);
    if (!(k >= cfg_.k_min && k <= 1.0)) throw std::logic_error("pruner: layer rate left [k_min, 1]");
  }
}

void Pruner::clip_to_budget() {
  auto shifted_rates = [&](double shift) {
    std::vector<double> rates(net_.layers.size());
    for (std::size_t l = 0; l < rates.size(); ++l) {
      rates[l] = rate_activation(net_.layers[l].quota.item() + shift, cfg_.k_min);
    }
    return rates;
  };
  auto feasible = [&](double shift) {
    const auto rates = shifted_rates(shift);
    if (cfg_.budget == Budget::param_count) {
      return static_cast<double>(preserved_at_rates(net_, rates)) <= cfg_.k_t * static_cast<double>(net_.total_weights());
    }
    return flops(net_, masks_for_rates(net_, rates)).total <= cfg_.k_t * full_flops(net_).total;
  };
  if (feasible(0.0)) return;
  double lo = -1.0, hi = 0.0;
  while (!feasible(lo) && lo > -64.0) {
    hi = lo;
    lo *= 2.0;
  }
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (feasible(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  for (auto l : rate_layers_) net_.layers[l].quota.mutable_values()[0] += lo;
  tie_shortcut_quotas(net_);
}

EpochStats Pruner::run_epoch(const Dataset& data, Rng& rng, int epoch) {
  if (data.size() == 0) throw std::invalid_argument("prune: empty dataset");
  const CosineSchedule score_sched{hyper_.score_sgd.learning_rate, hyper_.epochs};
  const CosineSchedule rate_sched{hyper_.rate_sgd.learning_rate, hyper_.epochs};
  score_opt_.set_learning_rate(score_sched.rate(epoch - 1));
  rate_opt_.set_learning_rate(rate_sched.rate(epoch - 1));
  const double gamma = uses_learned_rates() ? gamma_.value_for_epoch(epoch) : 0.0;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);

  EpochStats stats;
  stats.epoch = epoch;
  stats.gamma = gamma;
  std::size_t batches = 0;
  const ForwardOptions opts{/*track_params=*/false, /*track_masked_weights=*/true};
  for (std::size_t start = 0; start < order.size(); start += hyper_.batch_size) {
    const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                       order.begin() + static_cast<std::ptrdiff_t>(std::min(start + hyper_.batch_size, order.size())));
    rebuild_masks();
    const Tensor x = data.batch(idx);
    const auto y = data.batch_labels(idx);
    Tape tape;
    ForwardTrace trace;
    const Tensor loss = robust_loss(tape, net_, x, y, loss_, attack_, rng, opts, &trace);
    if (!std::isfinite(loss.item())) throw DivergenceError("prune: robust loss diverged at epoch " + std::to_string(epoch));
    tape.backward(loss);
    const double hw = hw_loss(net_, cfg_);
    stats.robust_loss += loss.item();
    stats.hw_loss += hw;
    ++batches;

    if (cfg_.learn_scores) {
      for (std::size_t l = 0; l < net_.layers.size(); ++l) {
        auto& layer = net_.layers[l];
        const auto g = ste_score_grad(trace.upstream_grad(l), layer.weight.values(), layer.spec, net_.granularity);
        auto dst = layer.scores.mutable_grad();
        auto sv = layer.scores.values();
        // Masks rank |s|, so the chain rule adds sign(s).
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] = sv[i] > 0.0 ? g[i] : (sv[i] < 0.0 ? -g[i] : 0.0);
      }
      score_opt_.step();
    }
    if (uses_learned_rates()) {
      const auto hw_grads = hw_rate_gradients(net_, cfg_);
      for (auto l : rate_layers_) {
        auto& layer = net_.layers[l];
        const double g = ste_rate_grad(trace.upstream_grad(l), layer.weight.values(), layer.quota.item(), cfg_.k_min,
                                       cfg_.aggregation);
        layer.quota.mutable_grad()[0] = g + gamma * hw_grads[l];
      }
      rate_opt_.step();
      tie_shortcut_quotas(net_);
      if (cfg_.budget_clip && gamma_.frozen()) clip_to_budget();
    }
    assert_rate_range();
  }
  rebuild_masks();
  const double end_hw = hw_loss(net_, cfg_);
  if (uses_learned_rates()) gamma_.update(epoch, end_hw);
  stats.robust_loss /= static_cast<double>(batches);
  stats.hw_loss /= static_cast<double>(batches);
  stats.end_hw_loss = end_hw;
  stats.global_rate = global_rate(net_, cfg_.budget);
  stats.layer_rates.reserve(net_.layers.size());
  const auto preserved = count_preserved(net_);
  for (std::size_t l = 0; l < net_.layers.size(); ++l) {
    stats.layer_rates.push_back(static_cast<double>(preserved.per_layer[l]) /
                                static_cast<double>(net_.layers[l].spec.weight_count()));
  }
  stats.arrived = gamma_.frozen();
  return stats;
}

}  // namespace harp
