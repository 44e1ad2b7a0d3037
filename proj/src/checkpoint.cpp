#include "harp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "harp/dataset.hpp"

namespace harp {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'H', 'A', 'R', 'P', 'C', 'K', 'P', '1'};

using nlohmann::json;

struct Writer {
  std::string blob;
  json arrays = json::array();

  void put(const std::string& name, std::span<const double> v) {
    arrays.push_back({{"name", name}, {"count", v.size()}});
    const auto* p = reinterpret_cast<const char*>(v.data());
    blob.append(p, v.size() * sizeof(double));
  }
};

struct Reader {
  const std::string& bytes;
  std::size_t offset;
  const json& arrays;
  std::size_t next = 0;

  std::vector<double> get(const std::string& name) {
    if (next >= arrays.size()) throw FormatError("checkpoint: missing array '" + name + "'");
    const auto& a = arrays[next++];
    if (a.at("name").get<std::string>() != name) {
      throw FormatError("checkpoint: expected array '" + name + "' at offset " + std::to_string(offset));
    }
    const auto count = a.at("count").get<std::size_t>();
    if (offset + count * sizeof(double) > bytes.size()) {
      throw FormatError("checkpoint: truncated at offset " + std::to_string(offset));
    }
    std::vector<double> v(count);
    std::memcpy(v.data(), bytes.data() + offset, count * sizeof(double));
    offset += count * sizeof(double);
    return v;
  }

  void into(const std::string& name, Tensor& t) {
    auto v = get(name);
    if (v.size() != t.size()) throw FormatError("checkpoint: array '" + name + "' has the wrong size");
    std::copy(v.begin(), v.end(), t.mutable_values().begin());
  }
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const auto& net = ckpt.net;
  Writer w;
  for (const auto& l : net.layers) {
    w.put(l.spec.name + ".weight", l.weight.values());
    if (l.bias.defined()) w.put(l.spec.name + ".bias", l.bias.values());
    w.put(l.spec.name + ".scores", l.scores.values());
    w.put(l.spec.name + ".quota", l.quota.values());
    w.put(l.spec.name + ".mask", l.mask.values());
  }
  json opt = json::array();
  for (const auto& [name, bufs] : ckpt.optimizers) {
    opt.push_back({{"name", name}, {"buffers", bufs.size()}});
    for (std::size_t i = 0; i < bufs.size(); ++i) w.put(name + "." + std::to_string(i), bufs[i]);
  }
  json header = {
      {"stage", ckpt.stage},
      {"config_hash", ckpt.config_hash},
      {"seed", ckpt.seed},
      {"rng_state", ckpt.rng_state},
      {"arch", std::string(arch_name(net.arch))},
      {"input_shape", net.input_shape},
      {"classes", net.classes},
      {"granularity", std::string(granularity_name(net.granularity))},
      {"optimizers", opt},
      {"arrays", w.arrays},
  };
  const std::string h = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  const std::uint64_t len = h.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof(len));
  out += h;
  out += w.blob;
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("checkpoint: bad magic at offset 0");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof(len));
  if (16 + len > bytes.size()) throw FormatError("checkpoint: header truncated at offset 16");
  json header;
  try {
    header = json::parse(bytes.substr(16, len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  }
  try {
    Checkpoint c;
    c.stage = header.at("stage").get<std::string>();
    c.config_hash = header.at("config_hash").get<std::uint64_t>();
    c.seed = header.at("seed").get<std::uint64_t>();
    c.rng_state = header.at("rng_state").get<std::string>();
    const auto shape = header.at("input_shape").get<Shape>();
    c.net = build_network(parse_arch(header.at("arch").get<std::string>()), shape,
                          header.at("classes").get<std::size_t>(), 0);
    c.net.set_granularity(parse_granularity(header.at("granularity").get<std::string>()));
    Reader r{bytes, static_cast<std::size_t>(16 + len), header.at("arrays")};
    for (auto& l : c.net.layers) {
      r.into(l.spec.name + ".weight", l.weight);
      if (l.bias.defined()) r.into(l.spec.name + ".bias", l.bias);
      r.into(l.spec.name + ".scores", l.scores);
      r.into(l.spec.name + ".quota", l.quota);
      r.into(l.spec.name + ".mask", l.mask);
    }
    for (const auto& o : header.at("optimizers")) {
      const auto name = o.at("name").get<std::string>();
      const auto n = o.at("buffers").get<std::size_t>();
      std::vector<std::vector<double>> bufs;
      for (std::size_t i = 0; i < n; ++i) bufs.push_back(r.get(name + "." + std::to_string(i)));
      c.optimizers.emplace_back(name, std::move(bufs));
    }
    if (r.offset != bytes.size()) throw FormatError("checkpoint: trailing bytes at offset " + std::to_string(r.offset));
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  const auto bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

std::uint64_t mask_hash(const Network& net) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& l : net.layers) {
    for (double m : l.mask.values()) {
      unsigned char b[sizeof(double)];
      std::memcpy(b, &m, sizeof(double));
      for (unsigned char c : b) {
        h ^= c;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

}  // namespace harp
