#include "harp/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <locale>
#include <sstream>
#include <stdexcept>

namespace harp {

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("attack: epsilon must be non-negative");
  if (step_size < 0.0 || step_size > epsilon) {
    throw std::invalid_argument("attack: step size must lie in [0, epsilon]");
  }
  if (iters < 1) throw std::invalid_argument("attack: iters must be at least 1");
  if (!(lower < upper)) throw std::invalid_argument("attack: input bounds are empty");
}

RobustKind parse_robust_kind(std::string_view name) {
  if (name == "pgd-at") return RobustKind::pgd_at;
  if (name == "trades") return RobustKind::trades;
  throw std::invalid_argument("unknown robust loss '" + std::string(name) + "' (expected pgd-at or trades)");
}

std::string_view robust_kind_name(RobustKind kind) { return kind == RobustKind::pgd_at ? "pgd-at" : "trades"; }

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

std::vector<double> input_gradient(const Network& net, const Tensor& x, std::span<const int> labels,
                                   AttackObjective objective, const Tensor& clean_logits) {
  Tape tape;
  Tensor xi = x.clone();
  xi.set_requires_grad(true);
  Tensor logits = net.forward(tape, xi);
  Tensor loss = objective == AttackObjective::cross_entropy
                    ? ops::softmax_cross_entropy(tape, logits, labels)
                    : ops::kl_divergence(tape, clean_logits.detached(), logits);
  tape.backward(loss);
  auto g = xi.grad();
  return {g.begin(), g.end()};
}

Tensor clean_logits_for(const Network& net, const Tensor& x, AttackObjective objective) {
  if (objective != AttackObjective::kl_to_clean) return {};
  Tape tape;
  return net.forward(tape, x);
}

}  // namespace

Tensor fgsm(const Network& net, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg) {
  if (!(cfg.epsilon >= 0.0)) throw std::invalid_argument("fgsm: epsilon must be non-negative");
  if (cfg.epsilon == 0.0) return x.clone();
  const auto g = input_gradient(net, x, labels, AttackObjective::cross_entropy, {});
  Tensor out = x.clone();
  auto ov = out.mutable_values();
  auto xv = x.values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    ov[i] = std::clamp(xv[i] + cfg.epsilon * sign(g[i]), cfg.lower, cfg.upper);
  }
  return out;
}

Tensor pgd(const Network& net, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg, Rng* rng,
           AttackObjective objective) {
  if (cfg.epsilon == 0.0) return x.clone();
  cfg.validate();
  if (cfg.random_init && rng == nullptr) throw std::invalid_argument("pgd: random init needs an rng");
  auto xv = x.values();
  Tensor adv = x.clone();
  auto project = [&](std::span<double> v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = std::min(std::max(v[i], xv[i] - cfg.epsilon), xv[i] + cfg.epsilon);
      v[i] = std::clamp(v[i], cfg.lower, cfg.upper);
    }
  };
  if (cfg.random_init) {
    auto av = adv.mutable_values();
    for (auto& v : av) v += rng->uniform(-cfg.epsilon, cfg.epsilon);
    project(av);
  }
  const Tensor clean = clean_logits_for(net, x, objective);
  for (int it = 0; it < cfg.iters; ++it) {
    const auto g = input_gradient(net, adv, labels, objective, clean);
    auto av = adv.mutable_values();
    for (std::size_t i = 0; i < av.size(); ++i) av[i] += cfg.step_size * sign(g[i]);
    project(av);
  }
  return adv;
}

Tensor robust_loss(Tape& tape, const Network& net, const Tensor& x, std::span<const int> labels,
                   const RobustLossConfig& loss, const AttackConfig& attack, Rng& rng,
                   const ForwardOptions& options, ForwardTrace* trace) {
  switch (loss.kind) {
    case RobustKind::pgd_at: {
      const Tensor adv = pgd(net, x, labels, attack, &rng);
      return ops::softmax_cross_entropy(tape, net.forward(tape, adv, options, trace), labels);
    }
    case RobustKind::trades: {
      Tensor clean = net.forward(tape, x, options, trace);
      Tensor ce = ops::softmax_cross_entropy(tape, clean, labels);
      if (loss.beta == 0.0) return ce;
      const Tensor adv = pgd(net, x, labels, attack, &rng, AttackObjective::kl_to_clean);
      Tensor adv_logits = net.forward(tape, adv, options, trace);
      Tensor kl = ops::kl_divergence(tape, clean, adv_logits);
      return ops::add(tape, ce, ops::scale(tape, kl, loss.beta));
    }
  }
  throw std::invalid_argument("robust_loss: unknown loss kind");
}

namespace {

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  auto v = logits.values();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = v.data() + i * classes;
    const auto best = static_cast<int>(std::max_element(row, row + classes) - row);
    correct += best == labels[i] ? 1 : 0;
  }
  return correct;
}

}  // namespace

double batch_accuracy(const Tensor& logits, std::span<const int> labels) {
  return static_cast<double>(count_correct(logits, labels)) / static_cast<double>(logits.dim(0));
}

std::vector<MetricRow> evaluate(const Network& net, const Dataset& data, const std::vector<NamedAttack>& attacks,
                                std::uint64_t seed, std::size_t batch_size) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  std::vector<MetricRow> rows;
  for (const auto& attack : attacks) {
    Rng rng(seed);
    std::size_t correct = 0;
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
      std::vector<std::size_t> idx;
      for (std::size_t i = start; i < std::min(start + batch_size, data.size()); ++i) idx.push_back(i);
      const Tensor x = data.batch(idx);
      const auto y = data.batch_labels(idx);
      Tensor input;
      if (attack.name == "natural") {
        input = x;
      } else if (attack.name == "fgsm") {
        input = fgsm(net, x, y, attack.config);
      } else if (attack.name == "pgd") {
        input = pgd(net, x, y, attack.config, &rng);
      } else {
        throw std::invalid_argument("evaluate: unknown attack '" + attack.name + "'");
      }
      if (attack.name != "natural") {
        auto xv = x.values();
        auto av = input.values();
        for (std::size_t i = 0; i < av.size(); ++i) {
          const double eps = attack.config.epsilon;
          if (av[i] < xv[i] - eps || av[i] > xv[i] + eps || av[i] < attack.config.lower ||
              av[i] > attack.config.upper) {
            throw std::logic_error("evaluate: attack '" + attack.name + "' left its constraint set");
          }
        }
      }
      Tape tape;
      const Tensor logits = net.forward(tape, input);
      correct += count_correct(logits, y);
    }
    MetricRow row;
    row.attack = attack.name;
    row.accuracy_pct = 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
    row.epsilon = attack.name == "natural" ? 0.0 : attack.config.epsilon;
    row.iters = attack.name == "natural" ? 0 : (attack.name == "fgsm" ? 1 : attack.config.iters);
    rows.push_back(row);
  }
  return rows;
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(6);
  os << std::fixed;
  os << "attack,accuracy_pct,epsilon,iters\n";
  for (const auto& r : rows) os << r.attack << ',' << r.accuracy_pct << ',' << r.epsilon << ',' << r.iters << '\n';
  return os.str();
}

}  // namespace harp
