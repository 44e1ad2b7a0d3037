#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "harp/adversary.hpp"
#include "harp/compress.hpp"
#include "harp/net.hpp"
#include "harp/sgd.hpp"

namespace harp {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pruning method: which of (r, s) are learned and where fixed rates come from.
enum class Method { harp, harp_r, harp_s, hydra_erk, hydra_lamp };

Method parse_method(std::string_view name);
std::string_view method_name(Method m);

struct DataConfig {
  /// synthetic, csv or idx.
  std::string format = "synthetic";
  std::string synthetic = "blobs:n=1200,size=16,classes=4,noise=0.08";
  std::string path;
  /// IDX label file.
  std::string labels_path;
  /// Optional held-out file; otherwise the train file is split.
  std::string test_path;
  std::string test_labels_path;
  double test_fraction = 0.25;
  std::size_t limit = 0;
  std::size_t classes = 0;
  /// Data seed; defaults to the run seed.
  std::uint64_t seed = 0;
  bool seed_set = false;
};

struct StageConfig {
  int epochs = 1;
  SgdConfig sgd;
  /// Epochs over which ε (and the step size) ramp linearly up from 0.
  int attack_warmup = 0;
};

struct EvalConfig {
  std::vector<std::string> attacks{"natural", "fgsm", "pgd"};
  AttackConfig attack;
  std::uint64_t seed = 1234;
  std::size_t limit = 0;
};

struct SweepConfig {
  std::vector<double> targets{1.0, 0.1, 0.01, 0.001};
  std::vector<Method> methods{Method::harp, Method::harp_s};
};

struct RunConfig {
  Arch arch = Arch::conv_small;
  std::uint64_t seed = 0;
  bool seed_set = false;
  DataConfig data;
  std::size_t batch_size = 64;
  StageConfig pretrain{30, {0.05, 0.9, 5e-4}, 5};
  StageConfig prune{20, {0.01, 0.9, 0.0}};
  /// Quota optimizer; shares the prune stage's epoch count.
  SgdConfig prune_rates{0.1, 0.9, 0.0};
  StageConfig finetune{100, {0.01, 0.9, 5e-4}};
  Method method = Method::harp;
  CompressionConfig compression = CompressionConfig::for_target(0.01);
  AttackConfig attack;
  RobustLossConfig loss;
  EvalConfig eval;
  SweepConfig sweep;
  std::size_t histogram_bins = 20;

  /// Applies one `key = value` pair; throws ConfigError on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Canonical `key=value` lines, sorted by key.
  std::map<std::string, std::string> to_map() const;
  std::string to_text() const;
  /// FNV-1a 64 over the canonical text.
  std::uint64_t hash() const;
  /// Cross-field checks; throws ConfigError.
  void validate() const;

  /// Compression config with method-implied learn flags.
  CompressionConfig effective_compression() const;
  PruneHyper prune_hyper() const;

 private:
  std::set<std::string> explicit_keys_;
};

/// Parses `key = value` lines, `# comments` and `[section]` headers (which
/// prefix following keys with `section.`).
RunConfig parse_config_text(const std::string& text, RunConfig base = {});
RunConfig load_config_file(const std::string& path, RunConfig base = {});

}  // namespace harp
