#include "harp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <locale>
#include <numeric>
#include <sstream>

namespace harp {

namespace {

std::uint64_t data_seed(const RunConfig& cfg) { return cfg.data.seed_set ? cfg.data.seed : cfg.seed; }

Dataset load_one(const RunConfig& cfg, const std::string& path, const std::string& labels) {
  Dataset d = cfg.data.format == "csv" ? load_csv(path, {}, cfg.data.classes)
                                       : load_idx(path, labels, cfg.data.classes, cfg.data.limit);
  if (cfg.data.limit > 0 && d.size() > cfg.data.limit) {
    std::vector<std::size_t> idx(cfg.data.limit);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    d = d.subset(idx);
  }
  return d;
}

std::ostringstream csv_stream() {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(6);
  os << std::fixed;
  return os;
}

void log_line(std::ostream* log, const std::string& s) {
  if (log) *log << s << '\n' << std::flush;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(digits);
  os << std::fixed << v;
  return os.str();
}

}  // namespace

DatasetSplit load_data(const RunConfig& cfg) {
  const std::uint64_t seed = data_seed(cfg);
  if (cfg.data.format == "synthetic") {
    auto spec = parse_synthetic_spec(cfg.data.synthetic);
    if (cfg.data.synthetic.find("seed=") == std::string::npos) spec.seed = seed;
    return split_dataset(make_synthetic(spec), cfg.data.test_fraction, seed);
  }
  Dataset train = load_one(cfg, cfg.data.path, cfg.data.labels_path);
  if (cfg.data.test_path.empty()) return split_dataset(train, cfg.data.test_fraction, seed);
  Dataset test = load_one(cfg, cfg.data.test_path, cfg.data.test_labels_path);
  if (test.sample_shape != train.sample_shape) throw FormatError("test data shape differs from train data");
  test.classes = train.classes = std::max(train.classes, test.classes);
  return {std::move(train), std::move(test)};
}

std::vector<NamedAttack> eval_attacks(const RunConfig& cfg) {
  std::vector<NamedAttack> out;
  for (const auto& name : cfg.eval.attacks) out.push_back({name, cfg.eval.attack});
  return out;
}

Rng stage_rng(std::uint64_t seed, std::uint64_t tag) {
  // splitmix64 finalizer over (seed, tag).
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return Rng(z ^ (z >> 31));
}

std::vector<std::vector<double>> train_weights(Network& net, const Dataset& data, const StageConfig& stage,
                                               std::size_t batch_size, const RobustLossConfig& loss,
                                               const AttackConfig& attack, Rng& rng, const std::string& tag,
                                               std::ostream* log) {
  Sgd opt(stage.sgd, net.parameters());
  if (stage.epochs == 0) return opt.velocity();
  if (data.size() == 0) throw std::invalid_argument(tag + ": empty dataset");
  const CosineSchedule sched{stage.sgd.learning_rate, stage.epochs};
  const ForwardOptions opts{/*track_params=*/true, /*track_masked_weights=*/false};
  std::vector<std::size_t> order(data.size());
  for (int epoch = 1; epoch <= stage.epochs; ++epoch) {
    opt.set_learning_rate(sched.rate(epoch - 1));
    AttackConfig eps = attack;
    if (epoch <= stage.attack_warmup) {
      const double f = static_cast<double>(epoch - 1) / static_cast<double>(stage.attack_warmup);
      eps.epsilon *= f;
      eps.step_size *= f;
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::vector<std::size_t> idx(
          order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(start + batch_size, order.size())));
      const Tensor x = data.batch(idx);
      const auto y = data.batch_labels(idx);
      Tape tape;
      const Tensor l = robust_loss(tape, net, x, y, loss, eps, rng, opts);
      if (!std::isfinite(l.item())) {
        throw DivergenceError(tag + ": loss diverged at epoch " + std::to_string(epoch));
      }
      tape.backward(l);
      opt.step();
      total += l.item();
      ++batches;
    }
    log_line(log, tag + " epoch " + std::to_string(epoch) + "/" + std::to_string(stage.epochs) +
                      " loss=" + fixed(total / static_cast<double>(batches)));
  }
  return opt.velocity();
}

Checkpoint init_checkpoint(const RunConfig& cfg, const DatasetSplit& data) {
  Checkpoint c;
  c.stage = "init";
  c.config_hash = cfg.hash();
  c.seed = cfg.seed;
  c.net = build_network(cfg.arch, data.train.sample_shape, data.train.classes, cfg.seed);
  return c;
}

Checkpoint stage_pretrain(const RunConfig& cfg, const DatasetSplit& data, std::ostream* log) {
  cfg.validate();
  Checkpoint c = init_checkpoint(cfg, data);
  c.net.reset_masks();
  Rng rng = stage_rng(cfg.seed, 1);
  auto vel = train_weights(c.net, data.train, cfg.pretrain, cfg.batch_size, cfg.loss, cfg.attack, rng, "pretrain", log);
  c.stage = "pretrain";
  c.rng_state = rng.state();
  c.optimizers = {{"weights", std::move(vel)}};
  return c;
}

PruneResult stage_prune(const RunConfig& cfg, const Checkpoint& pretrained, const DatasetSplit& data,
                        std::ostream* log) {
  cfg.validate();
  if (pretrained.net.arch != cfg.arch) throw ConfigError("prune: checkpoint architecture does not match run.arch");
  PruneResult res;
  res.ckpt = deserialize_checkpoint(serialize_checkpoint(pretrained));
  Network& net = res.ckpt.net;
  const CompressionConfig comp = cfg.effective_compression();
  init_pruning(net, comp);
  Pruner pruner(net, comp, cfg.loss, cfg.attack, cfg.prune_hyper());
  const double k_t = comp.k_t;
  switch (cfg.method) {
    case Method::harp:
    case Method::harp_r:
      break;
    case Method::harp_s:
      pruner.fix_rates(std::vector<double>(net.layers.size(), k_t));
      break;
    case Method::hydra_erk:
      pruner.fix_rates(erk_strategy(net, k_t).rates_for(net));
      break;
    case Method::hydra_lamp:
      pruner.fix_rates(lamp_strategy(net, k_t).rates_for(net));
      break;
  }
  Rng rng = stage_rng(cfg.seed, 2);
  for (int epoch = 1; epoch <= cfg.prune.epochs; ++epoch) {
    auto stats = pruner.run_epoch(data.train, rng, epoch);
    log_line(log, "prune epoch " + std::to_string(epoch) + "/" + std::to_string(cfg.prune.epochs) +
                      " gamma=" + fixed(stats.gamma) + " l_rob=" + fixed(stats.robust_loss) +
                      " l_hw=" + fixed(stats.hw_loss) + " k=" + fixed(stats.global_rate, 6) +
                      (stats.arrived ? " arrived" : ""));
    res.curve.push_back(std::move(stats));
  }
  res.arrival_epoch = pruner.gamma().arrival_epoch();
  const double final_k = global_rate(net, comp.budget);
  if (comp.learn_rates && !res.arrival_epoch) {
    log_line(log, "warning: target k_t=" + fixed(k_t, 6) + " not reached after " + std::to_string(cfg.prune.epochs) +
                      " prune epochs; final k=" + fixed(final_k, 6));
  }
  res.ckpt.stage = "prune";
  res.ckpt.config_hash = cfg.hash();
  res.ckpt.rng_state = rng.state();
  res.ckpt.optimizers = {{"scores", pruner.score_optimizer().velocity()},
                         {"quotas", pruner.rate_optimizer().velocity()}};
  return res;
}

Checkpoint stage_finetune(const RunConfig& cfg, const Checkpoint& pruned, const DatasetSplit& data, std::ostream* log) {
  cfg.validate();
  if (pruned.net.arch != cfg.arch) throw ConfigError("finetune: checkpoint architecture does not match run.arch");
  Checkpoint c = deserialize_checkpoint(serialize_checkpoint(pruned));
  Rng rng = stage_rng(cfg.seed, 3);
  auto vel =
      train_weights(c.net, data.train, cfg.finetune, cfg.batch_size, cfg.loss, cfg.attack, rng, "finetune", log);
  c.stage = "final";
  c.config_hash = cfg.hash();
  c.rng_state = rng.state();
  c.optimizers = {{"weights", std::move(vel)}};
  return c;
}

std::vector<MetricRow> evaluate_checkpoint(const RunConfig& cfg, const Checkpoint& ckpt, const DatasetSplit& data) {
  const Dataset* test = &data.test;
  Dataset limited;
  if (cfg.eval.limit > 0 && data.test.size() > cfg.eval.limit) {
    std::vector<std::size_t> idx(cfg.eval.limit);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    limited = data.test.subset(idx);
    test = &limited;
  }
  return evaluate(ckpt.net, *test, eval_attacks(cfg), cfg.eval.seed);
}

RunResult run_pipeline(const RunConfig& cfg, const DatasetSplit& data, std::ostream* log) {
  RunResult r;
  r.pretrained = stage_pretrain(cfg, data, log);
  r.pruned = stage_prune(cfg, r.pretrained, data, log);
  r.final = stage_finetune(cfg, r.pruned.ckpt, data, log);
  r.metrics = evaluate_checkpoint(cfg, r.final, data);
  return r;
}

std::vector<SweepRow> run_sweep(const RunConfig& cfg, const DatasetSplit& data, std::ostream* log) {
  cfg.validate();
  const Checkpoint pretrained = stage_pretrain(cfg, data, log);
  std::vector<SweepRow> rows;
  for (auto method : cfg.sweep.methods) {
    for (double k_t : cfg.sweep.targets) {
      RunConfig point = cfg;
      point.method = method;
      point.set("compression.k_t", fixed(k_t, 17));
      log_line(log, "sweep " + std::string(method_name(method)) + " k_t=" + fixed(k_t, 6));
      auto pruned = stage_prune(point, pretrained, data, log);
      auto final = stage_finetune(point, pruned.ckpt, data, log);
      SweepRow row;
      row.method = method;
      row.k_t = k_t;
      row.global_rate = global_rate(final.net, point.compression.budget);
      row.arrived = method == Method::harp || method == Method::harp_r ? pruned.arrival_epoch.has_value() : true;
      row.metrics = evaluate_checkpoint(point, final, data);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string curve_csv(const std::vector<EpochStats>& curve) {
  auto os = csv_stream();
  os << "epoch,gamma,l_rob,l_hw,l_hw_end,global_rate,arrived\n";
  for (const auto& s : curve) {
    os << s.epoch << ',' << s.gamma << ',' << s.robust_loss << ',' << s.hw_loss << ',' << s.end_hw_loss << ','
       << s.global_rate << ',' << (s.arrived ? 1 : 0) << '\n';
  }
  return os.str();
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  auto os = csv_stream();
  os << "method,k_t,global_rate,arrived";
  if (!rows.empty()) {
    for (const auto& m : rows.front().metrics) os << ',' << m.attack << "_acc";
  }
  os << '\n';
  for (const auto& r : rows) {
    os << method_name(r.method) << ',' << r.k_t << ',' << r.global_rate << ',' << (r.arrived ? 1 : 0);
    for (const auto& m : r.metrics) os << ',' << m.accuracy_pct;
    os << '\n';
  }
  return os.str();
}

std::string histogram_csv(const Network& net, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("histogram: need at least one bin");
  auto os = csv_stream();
  os << "layer,bin,lo,hi,count\n";
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto mask = net.expanded_mask(l);
    const auto w = net.layers[l].weight.values();
    const auto m = mask.values();
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (m[i] == 0.0) continue;
      lo = any ? std::min(lo, w[i]) : w[i];
      hi = any ? std::max(hi, w[i]) : w[i];
      any = true;
    }
    std::vector<std::size_t> counts(bins, 0);
    const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (m[i] == 0.0) continue;
      auto b = static_cast<std::size_t>((w[i] - lo) / width);
      counts[std::min(b, bins - 1)]++;
    }
    for (std::size_t b = 0; b < bins; ++b) {
      os << net.layers[l].spec.name << ',' << b << ',' << lo + width * static_cast<double>(b) << ','
         << lo + width * static_cast<double>(b + 1) << ',' << counts[b] << '\n';
    }
  }
  return os.str();
}

}  // namespace harp
