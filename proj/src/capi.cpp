#include "harp/harp.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "harp/pipeline.hpp"

struct harp_config {
  harp::RunConfig cfg;
};

struct harp_dataset {
  harp::DatasetSplit split;
};

struct harp_model {
  harp::Checkpoint ckpt;
};

namespace {

thread_local std::string g_last_error;
bool g_verbose = false;

std::ostream* log_stream() { return g_verbose ? &std::cerr : nullptr; }

template <typename F>
harp_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return HARP_OK;
  } catch (const harp::ConfigError& e) {
    g_last_error = e.what();
    return HARP_ERR_CONFIG;
  } catch (const harp::DivergenceError& e) {
    g_last_error = e.what();
    return HARP_ERR_DIVERGENCE;
  } catch (const harp::FormatError& e) {
    g_last_error = e.what();
    return HARP_ERR_FORMAT;
  } catch (const std::invalid_argument& e) {
    g_last_error = e.what();
    return HARP_ERR_ARGUMENT;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return HARP_ERR_IO;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return HARP_ERR_RUNTIME;
  } catch (...) {
    g_last_error = "unknown error";
    return HARP_ERR_RUNTIME;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw std::invalid_argument(std::string(what) + " is NULL");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::filesystem::filesystem_error("cannot write", path, std::make_error_code(std::errc::io_error));
  out << text;
}

std::filesystem::path ensure_dir(const char* dir) {
  require(dir, "output directory");
  std::filesystem::path p(dir);
  std::filesystem::create_directories(p);
  return p;
}

harp::Checkpoint load_ckpt(const char* path) {
  require(path, "checkpoint path");
  try {
    return harp::load_checkpoint(path);
  } catch (const harp::FormatError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw std::filesystem::filesystem_error(e.what(), path, std::make_error_code(std::errc::io_error));
  }
}

void save_ckpt(const harp::Checkpoint& c, const std::string& path) {
  try {
    harp::save_checkpoint(path, c);
  } catch (const std::runtime_error& e) {
    throw std::filesystem::filesystem_error(e.what(), path, std::make_error_code(std::errc::io_error));
  }
}

harp::StrategyTable table_for(const harp::RunConfig& cfg, harp::Checkpoint& ckpt, const std::string& source) {
  const auto s = harp::parse_strategy_source(source);
  const double k_t = cfg.compression.k_t;
  switch (s) {
    case harp::StrategySource::uniform: return harp::uniform_strategy(ckpt.net, k_t);
    case harp::StrategySource::erk: return harp::erk_strategy(ckpt.net, k_t);
    case harp::StrategySource::lamp: return harp::lamp_strategy(ckpt.net, k_t);
    case harp::StrategySource::harp_learned: return harp::measure_strategy(ckpt.net);
  }
  throw std::invalid_argument("unknown strategy source");
}

}  // namespace

extern "C" {

const char* harp_last_error(void) { return g_last_error.c_str(); }

const char* harp_version(void) { return "0.1.0"; }

void harp_set_verbose(int verbose) { g_verbose = verbose != 0; }

harp_status harp_config_new(harp_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new harp_config();
  });
}

void harp_config_free(harp_config* cfg) { delete cfg; }

harp_status harp_config_load(harp_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg, "config");
    require(path, "path");
    cfg->cfg = harp::load_config_file(path, cfg->cfg);
  });
}

harp_status harp_config_set(harp_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    require(cfg, "config");
    require(key, "key");
    require(value, "value");
    cfg->cfg.set(key, value);
  });
}

harp_status harp_config_dump(const harp_config* cfg, char** text, size_t* len) {
  return guarded([&] {
    require(cfg, "config");
    require(text, "text");
    const auto s = cfg->cfg.to_text();
    char* buf = static_cast<char*>(std::malloc(s.size() + 1));
    if (buf == nullptr) throw std::bad_alloc();
    std::memcpy(buf, s.c_str(), s.size() + 1);
    *text = buf;
    if (len) *len = s.size();
  });
}

harp_status harp_config_hash(const harp_config* cfg, uint64_t* out) {
  return guarded([&] {
    require(cfg, "config");
    require(out, "out");
    *out = cfg->cfg.hash();
  });
}

harp_status harp_config_validate(const harp_config* cfg) {
  return guarded([&] {
    require(cfg, "config");
    cfg->cfg.validate();
  });
}

int harp_config_has_seed(const harp_config* cfg) { return cfg != nullptr && cfg->cfg.seed_set ? 1 : 0; }

void harp_string_free(char* s) { std::free(s); }

harp_status harp_dataset_load(const harp_config* cfg, harp_dataset** out) {
  return guarded([&] {
    require(cfg, "config");
    require(out, "out");
    cfg->cfg.validate();
    auto d = std::make_unique<harp_dataset>();
    try {
      d->split = harp::load_data(cfg->cfg);
    } catch (const harp::FormatError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw harp::ConfigError(e.what());
    }
    *out = d.release();
  });
}

void harp_dataset_free(harp_dataset* data) { delete data; }

harp_status harp_dataset_sizes(const harp_dataset* data, size_t* train, size_t* test) {
  return guarded([&] {
    require(data, "dataset");
    if (train) *train = data->split.train.size();
    if (test) *test = data->split.test.size();
  });
}

harp_status harp_model_load(const char* path, harp_model** out) {
  return guarded([&] {
    require(out, "out");
    auto m = std::make_unique<harp_model>();
    m->ckpt = load_ckpt(path);
    *out = m.release();
  });
}

void harp_model_free(harp_model* model) { delete model; }

harp_status harp_model_save(const harp_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    save_ckpt(model->ckpt, path);
  });
}

harp_status harp_model_layer_count(const harp_model* model, size_t* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = model->ckpt.net.layers.size();
  });
}

harp_status harp_model_global_rate(const harp_model* model, double* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = harp::global_rate(model->ckpt.net, harp::Budget::param_count);
  });
}

harp_status harp_model_predict(const harp_model* model, const double* inputs, size_t n, int* labels) {
  return guarded([&] {
    require(model, "model");
    require(inputs, "inputs");
    require(labels, "labels");
    const auto& net = model->ckpt.net;
    harp::Shape shape{n};
    shape.insert(shape.end(), net.input_shape.begin(), net.input_shape.end());
    harp::Tensor x(shape, std::vector<double>(inputs, inputs + harp::shape_size(shape)));
    harp::Tape tape;
    const auto logits = net.forward(tape, x);
    const auto v = logits.values();
    for (size_t i = 0; i < n; ++i) {
      const double* row = v.data() + i * net.classes;
      labels[i] = static_cast<int>(std::max_element(row, row + net.classes) - row);
    }
  });
}

harp_status harp_pretrain(const harp_config* cfg, const harp_dataset* data, const char* out_ckpt) {
  return guarded([&] {
    require(cfg, "config");
    require(data, "dataset");
    require(out_ckpt, "output checkpoint");
    save_ckpt(harp::stage_pretrain(cfg->cfg, data->split, log_stream()), out_ckpt);
  });
}

harp_status harp_prune(const harp_config* cfg, const harp_dataset* data, const char* in_ckpt, const char* out_ckpt,
                       const char* curve_csv) {
  return guarded([&] {
    require(cfg, "config");
    require(data, "dataset");
    require(out_ckpt, "output checkpoint");
    const auto pre = load_ckpt(in_ckpt);
    const auto res = harp::stage_prune(cfg->cfg, pre, data->split, log_stream());
    save_ckpt(res.ckpt, out_ckpt);
    if (curve_csv) write_text(curve_csv, harp::curve_csv(res.curve));
  });
}

harp_status harp_finetune(const harp_config* cfg, const harp_dataset* data, const char* in_ckpt,
                          const char* out_ckpt) {
  return guarded([&] {
    require(cfg, "config");
    require(data, "dataset");
    require(out_ckpt, "output checkpoint");
    const auto pruned = load_ckpt(in_ckpt);
    save_ckpt(harp::stage_finetune(cfg->cfg, pruned, data->split, log_stream()), out_ckpt);
  });
}

harp_status harp_eval(const harp_config* cfg, const harp_dataset* data, const char* ckpt, const char* metrics_csv) {
  return guarded([&] {
    require(cfg, "config");
    require(data, "dataset");
    require(metrics_csv, "metrics path");
    const auto c = load_ckpt(ckpt);
    write_text(metrics_csv, harp::metrics_csv(harp::evaluate_checkpoint(cfg->cfg, c, data->split)));
  });
}

harp_status harp_run(const harp_config* cfg, const harp_dataset* data, const char* out_dir) {
  return guarded([&] {
    require(cfg, "config");
    require(data, "dataset");
    const auto dir = ensure_dir(out_dir);
    const auto r = harp::run_pipeline(cfg->cfg, data->split, log_stream());
    save_ckpt(r.pretrained, (dir / "pretrain.ckpt").string());
    save_ckpt(r.pruned.ckpt, (dir / "prune.ckpt").string());
    save_ckpt(r.final, (dir / "final.ckpt").string());
    write_text((dir / "config.txt").string(), cfg->cfg.to_text());
    write_text((dir / "prune_curve.csv").string(), harp::curve_csv(r.pruned.curve));
    write_text((dir / "strategy.csv").string(), harp::strategy_csv(harp::measure_strategy(r.final.net)));
    write_text((dir / "histogram.csv").string(), harp::histogram_csv(r.final.net, cfg->cfg.histogram_bins));
    write_text((dir / "metrics.csv").string(), harp::metrics_csv(r.metrics));
  });
}

harp_status harp_sweep(const harp_config* cfg, const harp_dataset* data, const char* out_dir) {
  return guarded([&] {
    require(cfg, "config");
    require(data, "dataset");
    const auto dir = ensure_dir(out_dir);
    const auto rows = harp::run_sweep(cfg->cfg, data->split, log_stream());
    write_text((dir / "config.txt").string(), cfg->cfg.to_text());
    write_text((dir / "sweep.csv").string(), harp::sweep_csv(rows));
  });
}

harp_status harp_strategy_export(const harp_config* cfg, const char* ckpt, const char* source, const char* out_csv) {
  return guarded([&] {
    require(cfg, "config");
    require(source, "source");
    require(out_csv, "output path");
    auto c = load_ckpt(ckpt);
    write_text(out_csv, harp::strategy_csv(table_for(cfg->cfg, c, source)));
  });
}

harp_status harp_strategy_compare(const harp_config* cfg, const char* ckpt, const char* out_csv) {
  return guarded([&] {
    require(cfg, "config");
    require(out_csv, "output path");
    auto c = load_ckpt(ckpt);
    std::vector<harp::StrategyTable> tables;
    for (const char* s : {"harp", "uniform", "erk", "lamp"}) tables.push_back(table_for(cfg->cfg, c, s));
    write_text(out_csv, harp::strategy_comparison_csv(tables));
  });
}

harp_status harp_histogram_export(const harp_config* cfg, const char* ckpt, const char* out_csv) {
  return guarded([&] {
    require(cfg, "config");
    require(out_csv, "output path");
    const auto c = load_ckpt(ckpt);
    write_text(out_csv, harp::histogram_csv(c.net, cfg->cfg.histogram_bins));
  });
}

}  // extern "C"
