#include "harp/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <locale>
#include <sstream>

namespace harp {

Method parse_method(std::string_view name) {
  if (name == "harp") return Method::harp;
  if (name == "harp-r") return Method::harp_r;
  if (name == "harp-s" || name == "hydra") return Method::harp_s;
  if (name == "hydra-erk") return Method::hydra_erk;
  if (name == "hydra-lamp") return Method::hydra_lamp;
  throw std::invalid_argument("unknown method '" + std::string(name) +
                              "' (expected harp, harp-r, harp-s, hydra-erk or hydra-lamp)");
}

std::string_view method_name(Method m) {
  switch (m) {
    case Method::harp: return "harp";
    case Method::harp_r: return "harp-r";
    case Method::harp_s: return "harp-s";
    case Method::hydra_erk: return "hydra-erk";
    case Method::hydra_lamp: return "hydra-lamp";
  }
  return "?";
}

namespace {

std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(v);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_number(const std::string& key, const std::string& v) {
  auto one = [&](std::string_view s) {
    double out = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    }
    return out;
  };
  const auto slash = v.find('/');
  if (slash == std::string::npos) return one(v);
  const double den = one(std::string_view(v).substr(slash + 1));
  if (den == 0.0) throw ConfigError("config: '" + key + "' divides by zero");
  return one(std::string_view(v).substr(0, slash)) / den;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  const auto u = parse_unsigned(key, v);
  if (u > 1000000) throw ConfigError("config: '" + key + "' is out of range");
  return static_cast<int>(u);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: '" + key + "' expects true or false, got '" + v + "'");
}

// Shortest text that parses back to the same double.
std::string fmt_double(double d) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, res.ptr);
}

template <typename F>
auto wrap(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config: '" + key + "': " + e.what());
  }
}

void set_sgd(SgdConfig& s, const std::string& field, const std::string& key, const std::string& v) {
  if (field == "lr") {
    s.learning_rate = parse_number(key, v);
  } else if (field == "momentum") {
    s.momentum = parse_number(key, v);
  } else if (field == "weight_decay") {
    s.weight_decay = parse_number(key, v);
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

void set_attack(AttackConfig& a, const std::string& field, const std::string& key, const std::string& v) {
  if (field == "epsilon") {
    a.epsilon = parse_number(key, v);
  } else if (field == "step_size") {
    a.step_size = parse_number(key, v);
  } else if (field == "iters") {
    a.iters = parse_int(key, v);
  } else if (field == "random_init") {
    a.random_init = parse_bool(key, v);
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

}  // namespace

void RunConfig::set(const std::string& raw_key, const std::string& raw_value) {
  const std::string key = trim(raw_key);
  const std::string v = trim(raw_value);
  const auto dot = key.find('.');
  if (dot == std::string::npos) throw ConfigError("config: key '" + key + "' needs a section (e.g. run.seed)");
  const std::string section = key.substr(0, dot);
  const std::string field = key.substr(dot + 1);
  explicit_keys_.insert(key);

  if (section == "run") {
    if (field == "arch") {
      arch = wrap(key, [&] { return parse_arch(v); });
    } else if (field == "seed") {
      seed = parse_unsigned(key, v);
      seed_set = true;
    } else if (field == "method") {
      method = wrap(key, [&] { return parse_method(v); });
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  } else if (section == "data") {
    if (field == "format") {
      if (v != "synthetic" && v != "csv" && v != "idx") {
        throw ConfigError("config: data.format must be synthetic, csv or idx");
      }
      data.format = v;
    } else if (field == "synthetic") {
      wrap(key, [&] { return parse_synthetic_spec(v); });
      data.synthetic = v;
    } else if (field == "path") {
      data.path = v;
    } else if (field == "labels_path") {
      data.labels_path = v;
    } else if (field == "test_path") {
      data.test_path = v;
    } else if (field == "test_labels_path") {
      data.test_labels_path = v;
    } else if (field == "test_fraction") {
      data.test_fraction = parse_number(key, v);
    } else if (field == "limit") {
      data.limit = parse_unsigned(key, v);
    } else if (field == "classes") {
      data.classes = parse_unsigned(key, v);
    } else if (field == "seed" && v == "run") {
      data.seed = 0;
      data.seed_set = false;
    } else if (field == "seed") {
      data.seed = parse_unsigned(key, v);
      data.seed_set = true;
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  } else if (section == "train") {
    if (field == "batch_size") {
      batch_size = parse_unsigned(key, v);
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  } else if (section == "pretrain" || section == "finetune") {
    auto& st = section == "pretrain" ? pretrain : finetune;
    if (field == "epochs") {
      st.epochs = parse_int(key, v);
    } else if (field == "attack_warmup") {
      st.attack_warmup = parse_int(key, v);
    } else {
      set_sgd(st.sgd, field, key, v);
    }
  } else if (section == "prune") {
    if (field == "epochs") {
      prune.epochs = parse_int(key, v);
    } else if (field == "rate_lr") {
      prune_rates.learning_rate = parse_number(key, v);
    } else if (field == "rate_momentum") {
      prune_rates.momentum = parse_number(key, v);
    } else {
      set_sgd(prune.sgd, field, key, v);
    }
  } else if (section == "compression") {
    auto& c = compression;
    if (field == "k_t") {
      c.k_t = parse_number(key, v);
      if (!explicit_keys_.count("compression.k_min")) c.k_min = 0.1 * c.k_t;
      if (!explicit_keys_.count("compression.k_init")) c.k_init = std::min(10.0 * c.k_t, 0.5);
    } else if (field == "k_min") {
      c.k_min = parse_number(key, v);
    } else if (field == "k_init") {
      c.k_init = parse_number(key, v);
    } else if (field == "gamma_step") {
      c.gamma_step = parse_number(key, v);
    } else if (field == "granularity") {
      c.granularity = wrap(key, [&] { return parse_granularity(v); });
    } else if (field == "budget") {
      c.budget = wrap(key, [&] { return parse_budget(v); });
    } else if (field == "aggregation") {
      c.aggregation = wrap(key, [&] { return parse_rate_aggregation(v); });
    } else if (field == "budget_clip") {
      c.budget_clip = parse_bool(key, v);
    } else if (field == "method") {
      method = wrap(key, [&] { return parse_method(v); });
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  } else if (section == "attack") {
    set_attack(attack, field, key, v);
  } else if (section == "loss") {
    if (field == "kind") {
      loss.kind = wrap(key, [&] { return parse_robust_kind(v); });
    } else if (field == "beta") {
      loss.beta = parse_number(key, v);
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  } else if (section == "eval") {
    if (field == "attacks") {
      auto list = split_list(v);
      for (const auto& a : list) {
        if (a != "natural" && a != "fgsm" && a != "pgd") {
          throw ConfigError("config: eval.attacks entries must be natural, fgsm or pgd");
        }
      }
      eval.attacks = list;
    } else if (field == "seed") {
      eval.seed = parse_unsigned(key, v);
    } else if (field == "limit") {
      eval.limit = parse_unsigned(key, v);
    } else {
      set_attack(eval.attack, field, key, v);
    }
  } else if (section == "sweep") {
    if (field == "targets") {
      std::vector<double> t;
      for (const auto& s : split_list(v)) t.push_back(parse_number(key, s));
      sweep.targets = t;
    } else if (field == "methods") {
      std::vector<Method> m;
      for (const auto& s : split_list(v)) m.push_back(wrap(key, [&] { return parse_method(s); }));
      sweep.methods = m;
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  } else if (section == "report") {
    if (field == "histogram_bins") {
      histogram_bins = parse_unsigned(key, v);
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  } else {
    throw ConfigError("config: unknown key '" + key + "' (no section '" + section + "')");
  }
}

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> m;
  auto b = [](bool x) { return std::string(x ? "true" : "false"); };
  m["run.arch"] = arch_name(arch);
  m["run.seed"] = std::to_string(seed);
  m["run.method"] = method_name(method);
  m["data.format"] = data.format;
  m["data.synthetic"] = data.synthetic;
  m["data.path"] = data.path;
  m["data.labels_path"] = data.labels_path;
  m["data.test_path"] = data.test_path;
  m["data.test_labels_path"] = data.test_labels_path;
  m["data.test_fraction"] = fmt_double(data.test_fraction);
  m["data.limit"] = std::to_string(data.limit);
  m["data.classes"] = std::to_string(data.classes);
  m["data.seed"] = data.seed_set ? std::to_string(data.seed) : "run";
  m["train.batch_size"] = std::to_string(batch_size);
  auto stage = [&](const std::string& name, const StageConfig& s) {
    m[name + ".epochs"] = std::to_string(s.epochs);
    m[name + ".lr"] = fmt_double(s.sgd.learning_rate);
    m[name + ".momentum"] = fmt_double(s.sgd.momentum);
    m[name + ".weight_decay"] = fmt_double(s.sgd.weight_decay);
    if (name != "prune") m[name + ".attack_warmup"] = std::to_string(s.attack_warmup);
  };
  stage("pretrain", pretrain);
  stage("prune", prune);
  stage("finetune", finetune);
  m["prune.rate_lr"] = fmt_double(prune_rates.learning_rate);
  m["prune.rate_momentum"] = fmt_double(prune_rates.momentum);
  m["compression.k_t"] = fmt_double(compression.k_t);
  m["compression.k_min"] = fmt_double(compression.k_min);
  m["compression.k_init"] = fmt_double(compression.k_init);
  m["compression.gamma_step"] = fmt_double(compression.gamma_step);
  m["compression.granularity"] = granularity_name(compression.granularity);
  m["compression.budget"] = budget_name(compression.budget);
  m["compression.aggregation"] = rate_aggregation_name(compression.aggregation);
  m["compression.budget_clip"] = b(compression.budget_clip);
  auto attack_keys = [&](const std::string& name, const AttackConfig& a) {
    m[name + ".epsilon"] = fmt_double(a.epsilon);
    m[name + ".step_size"] = fmt_double(a.step_size);
    m[name + ".iters"] = std::to_string(a.iters);
    m[name + ".random_init"] = b(a.random_init);
  };
  attack_keys("attack", attack);
  attack_keys("eval", eval.attack);
  m["loss.kind"] = robust_kind_name(loss.kind);
  m["loss.beta"] = fmt_double(loss.beta);
  std::string attacks;
  for (const auto& a : eval.attacks) attacks += (attacks.empty() ? "" : ",") + a;
  m["eval.attacks"] = attacks;
  m["eval.seed"] = std::to_string(eval.seed);
  m["eval.limit"] = std::to_string(eval.limit);
  std::string targets, methods;
  for (double t : sweep.targets) targets += (targets.empty() ? "" : ",") + fmt_double(t);
  for (auto mm : sweep.methods) methods += (methods.empty() ? "" : ",") + std::string(method_name(mm));
  m["sweep.targets"] = targets;
  m["sweep.methods"] = methods;
  m["report.histogram_bins"] = std::to_string(histogram_bins);
  return m;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_map()) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_text()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void RunConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("config: " + msg);
  };
  check(batch_size >= 1, "train.batch_size must be at least 1");
  check(pretrain.epochs >= 0, "pretrain.epochs must be non-negative");
  check(prune.epochs >= 1, "prune.epochs must be at least 1");
  check(finetune.epochs >= 0, "finetune.epochs must be non-negative");
  check(data.test_fraction > 0.0 && data.test_fraction < 1.0, "data.test_fraction must lie in (0, 1)");
  check(histogram_bins >= 1, "report.histogram_bins must be at least 1");
  if (data.format != "synthetic") check(!data.path.empty(), "data.path is required for csv and idx data");
  if (data.format == "idx") check(!data.labels_path.empty(), "data.labels_path is required for idx data");
  for (const auto* s : {&pretrain.sgd, &prune.sgd, &finetune.sgd, &prune_rates}) {
    check(s->learning_rate >= 0.0, "learning rates must be non-negative");
    check(s->momentum >= 0.0 && s->momentum < 1.0, "momentum must lie in [0, 1)");
    check(s->weight_decay >= 0.0, "weight decay must be non-negative");
  }
  check(loss.beta >= 0.0, "loss.beta must be non-negative");
  check(!sweep.targets.empty() && !sweep.methods.empty(), "sweep needs targets and methods");
  for (double t : sweep.targets) check(t > 0.0 && t <= 1.0, "sweep targets must lie in (0, 1]");
  try {
    effective_compression().validate();
    attack.validate();
    eval.attack.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (compression.granularity == Granularity::channel) {
    check(method != Method::hydra_erk && method != Method::hydra_lamp,
          "erk and lamp strategies need weight granularity");
  }
}

CompressionConfig RunConfig::effective_compression() const {
  CompressionConfig c = compression;
  c.learn_rates = method == Method::harp || method == Method::harp_r;
  c.learn_scores = method != Method::harp_r;
  return c;
}

PruneHyper RunConfig::prune_hyper() const {
  PruneHyper h;
  h.score_sgd = prune.sgd;
  h.rate_sgd = prune_rates;
  h.epochs = prune.epochs;
  h.batch_size = batch_size;
  return h;
}

RunConfig parse_config_text(const std::string& text, RunConfig base) {
  std::istringstream is(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    try {
      base.set(key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), std::move(base));
}

}  // namespace harp
