// Command-line front end; talks to the library only through the C API.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "harp/harp.h"

namespace {

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::string seed;
  std::string out = "harp_out";
  std::string ckpt;
  std::string source = "harp";
  bool quiet = false;
  std::map<std::string, std::string> flags;
};

int exit_code(harp_status s) {
  switch (s) {
    case HARP_OK: return 0;
    case HARP_ERR_CONFIG:
    case HARP_ERR_ARGUMENT:
    case HARP_ERR_FORMAT: return 2;
    case HARP_ERR_DIVERGENCE: return 3;
    default: return 1;
  }
}

struct Failure {
  harp_status status;
};

void check(harp_status s, const std::string& what) {
  if (s != HARP_OK) {
    std::cerr << "harp: " << what << ": " << harp_last_error() << "\n";
    throw Failure{s};
  }
}

using ConfigPtr = std::unique_ptr<harp_config, decltype(&harp_config_free)>;
using DataPtr = std::unique_ptr<harp_dataset, decltype(&harp_dataset_free)>;

ConfigPtr make_config(const Options& o) {
  harp_config* raw = nullptr;
  check(harp_config_new(&raw), "config");
  ConfigPtr cfg(raw, harp_config_free);
  if (!o.config.empty()) check(harp_config_load(cfg.get(), o.config.c_str()), "config");
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "harp: --set expects key=value, got '" << kv << "'\n";
      throw Failure{HARP_ERR_CONFIG};
    }
    check(harp_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()), "config");
  }
  for (const auto& [key, value] : o.flags) {
    if (!value.empty()) check(harp_config_set(cfg.get(), key.c_str(), value.c_str()), "config");
  }
  if (!o.seed.empty()) check(harp_config_set(cfg.get(), "run.seed", o.seed.c_str()), "config");
  check(harp_config_validate(cfg.get()), "config");
  return cfg;
}

DataPtr load_data(const harp_config* cfg) {
  harp_dataset* raw = nullptr;
  check(harp_dataset_load(cfg, &raw), "data");
  return DataPtr(raw, harp_dataset_free);
}

std::string out_file(const Options& o, const std::string& name) {
  std::filesystem::create_directories(o.out);
  return (std::filesystem::path(o.out) / name).string();
}

void require_ckpt(const Options& o) {
  if (o.ckpt.empty()) {
    std::cerr << "harp: --ckpt is required\n";
    throw Failure{HARP_ERR_CONFIG};
  }
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "key = value config file");
  sub->add_option("--set", o.sets, "override one key, e.g. --set compression.k_t=0.01");
  sub->add_option("--out", o.out, "output directory");
  sub->add_flag("--quiet", o.quiet, "suppress progress output");
  const std::vector<std::pair<std::string, std::string>> mirrored = {
      {"--arch", "run.arch"},
      {"--method", "run.method"},
      {"--k-t", "compression.k_t"},
      {"--granularity", "compression.granularity"},
      {"--budget", "compression.budget"},
      {"--gamma-step", "compression.gamma_step"},
      {"--loss", "loss.kind"},
      {"--pretrain-epochs", "pretrain.epochs"},
      {"--prune-epochs", "prune.epochs"},
      {"--finetune-epochs", "finetune.epochs"},
      {"--data", "data.synthetic"},
  };
  for (const auto& [flag, key] : mirrored) sub->add_option(flag, o.flags[key], "sets " + key);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hardware-aware robust pruning"};
  app.require_subcommand(1);
  Options o;

  auto* pretrain = app.add_subcommand("pretrain", "robust training of the dense network");
  auto* prune = app.add_subcommand("prune", "strategy search over quotas and scores");
  auto* finetune = app.add_subcommand("finetune", "robust training under frozen masks");
  auto* run = app.add_subcommand("run", "pretrain, prune, finetune and eval");
  auto* eval = app.add_subcommand("eval", "accuracy under the configured attacks");
  auto* strategy = app.add_subcommand("strategy", "export or compare per-layer strategies");
  auto* sweep = app.add_subcommand("sweep", "accuracy across methods and targets");

  for (auto* sub : {pretrain, prune, finetune, run, eval, strategy, sweep}) {
    add_common(sub, o);
    if (sub != run) sub->add_option("--seed", o.seed, "run seed");
  }
  run->add_option("--seed", o.seed, "run seed")->required();
  for (auto* sub : {prune, finetune, eval, strategy}) sub->add_option("--ckpt", o.ckpt, "input checkpoint");
  strategy->add_option("--source", o.source, "uniform, erk, lamp, harp, compare or histogram");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    harp_set_verbose(o.quiet ? 0 : 1);
    auto cfg = make_config(o);
    if (*pretrain) {
      auto data = load_data(cfg.get());
      check(harp_pretrain(cfg.get(), data.get(), out_file(o, "pretrain.ckpt").c_str()), "pretrain");
    } else if (*prune) {
      require_ckpt(o);
      auto data = load_data(cfg.get());
      check(harp_prune(cfg.get(), data.get(), o.ckpt.c_str(), out_file(o, "prune.ckpt").c_str(),
                       out_file(o, "prune_curve.csv").c_str()),
            "prune");
    } else if (*finetune) {
      require_ckpt(o);
      auto data = load_data(cfg.get());
      check(harp_finetune(cfg.get(), data.get(), o.ckpt.c_str(), out_file(o, "final.ckpt").c_str()), "finetune");
    } else if (*run) {
      auto data = load_data(cfg.get());
      check(harp_run(cfg.get(), data.get(), o.out.c_str()), "run");
    } else if (*eval) {
      require_ckpt(o);
      auto data = load_data(cfg.get());
      check(harp_eval(cfg.get(), data.get(), o.ckpt.c_str(), out_file(o, "metrics.csv").c_str()), "eval");
    } else if (*strategy) {
      require_ckpt(o);
      if (o.source == "compare") {
        check(harp_strategy_compare(cfg.get(), o.ckpt.c_str(), out_file(o, "strategy_compare.csv").c_str()),
              "strategy");
      } else if (o.source == "histogram") {
        check(harp_histogram_export(cfg.get(), o.ckpt.c_str(), out_file(o, "histogram.csv").c_str()), "strategy");
      } else {
        check(harp_strategy_export(cfg.get(), o.ckpt.c_str(), o.source.c_str(),
                                   out_file(o, "strategy_" + o.source + ".csv").c_str()),
              "strategy");
      }
    } else if (*sweep) {
      auto data = load_data(cfg.get());
      check(harp_sweep(cfg.get(), data.get(), o.out.c_str()), "sweep");
    }
  } catch (const Failure& f) {
    return exit_code(f.status);
  } catch (const std::exception& e) {
    std::cerr << "harp: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
