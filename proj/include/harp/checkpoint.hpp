#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "harp/net.hpp"

namespace harp {

/// Network state plus what is needed to resume or audit a stage.
struct Checkpoint {
  std::string stage;  // init, pretrain, prune or final
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string rng_state;
  Network net;
  /// Optimizer name -> one velocity buffer per parameter.
  std::vector<std::pair<std::string, std::vector<std::vector<double>>>> optimizers;
};

/// "HARPCKP1", u64 header length, JSON header, then little-endian doubles.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
/// Throws FormatError on a malformed or truncated file.
Checkpoint load_checkpoint(const std::string& path);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

/// FNV-1a 64 over every mask value.
std::uint64_t mask_hash(const Network& net);

}  // namespace harp
