#include "harp/net.hpp"

#include <cmath>
#include <stdexcept>

#include "harp/rng.hpp"

namespace harp {

Arch parse_arch(std::string_view name) {
  if (name == "mlp-small") return Arch::mlp_small;
  if (name == "conv-small") return Arch::conv_small;
  if (name == "resnet-tiny") return Arch::resnet_tiny;
  throw std::invalid_argument("unknown architecture '" + std::string(name) +
                              "' (expected mlp-small, conv-small or resnet-tiny)");
}

std::string_view arch_name(Arch arch) {
  switch (arch) {
    case Arch::mlp_small: return "mlp-small";
    case Arch::conv_small: return "conv-small";
    case Arch::resnet_tiny: return "resnet-tiny";
  }
  return "?";
}

Granularity parse_granularity(std::string_view name) {
  if (name == "weight") return Granularity::weight;
  if (name == "channel") return Granularity::channel;
  throw std::invalid_argument("unknown granularity '" + std::string(name) + "' (expected weight or channel)");
}

std::string_view granularity_name(Granularity g) {
  return g == Granularity::weight ? "weight" : "channel";
}

Shape LayerSpec::weight_shape() const {
  if (kind == LayerKind::fc) return {out_channels, in_channels};
  return {out_channels, in_channels, kernel, kernel};
}

std::vector<double> ForwardTrace::upstream_grad(std::size_t index) const {
  const auto& uses = masked_weights.at(index);
  if (uses.empty()) throw std::logic_error("forward trace: layer " + std::to_string(index) + " was never used");
  std::vector<double> g(uses.front().size(), 0.0);
  for (const auto& t : uses) {
    auto tg = t.grad();
    for (std::size_t i = 0; i < tg.size(); ++i) g[i] += tg[i];
  }
  return g;
}

std::size_t Network::total_weights() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.spec.weight_count();
  return n;
}

std::size_t Network::mask_size(std::size_t layer) const {
  const auto& spec = layers.at(layer).spec;
  return granularity == Granularity::weight ? spec.weight_count() : spec.in_channels;
}

void Network::set_granularity(Granularity g) {
  granularity = g;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    const Shape shape = g == Granularity::weight ? l.spec.weight_shape() : Shape{l.spec.in_channels};
    l.scores = Tensor(shape, 0.0);
    l.mask = Tensor(shape, 1.0);
  }
}

void Network::reset_masks() {
  for (auto& l : layers) {
    for (auto& v : l.mask.mutable_values()) v = 1.0;
  }
}

Tensor Network::expanded_mask(std::size_t layer) const {
  const auto& l = layers.at(layer);
  if (granularity == Granularity::weight) return l.mask.clone();
  Tensor full(l.spec.weight_shape(), 0.0);
  auto fv = full.mutable_values();
  auto mv = l.mask.values();
  const std::size_t ci = l.spec.in_channels, kk = l.spec.kernel * l.spec.kernel;
  for (std::size_t o = 0; o < l.spec.out_channels; ++o) {
    for (std::size_t c = 0; c < ci; ++c) {
      const double m = mv[c];
      double* dst = fv.data() + (o * ci + c) * kk;
      for (std::size_t j = 0; j < kk; ++j) dst[j] = m;
    }
  }
  return full;
}

std::vector<Tensor> Network::parameters() const {
  std::vector<Tensor> out;
  for (const auto& l : layers) out.push_back(l.weight);
  for (const auto& l : layers) {
    if (l.bias.defined()) out.push_back(l.bias);
  }
  return out;
}

namespace {

struct LayerRunner {
  const Network& net;
  Tape& tape;
  const ForwardOptions& options;
  ForwardTrace* trace;

  Tensor operator()(std::size_t index, const Tensor& x) const {
    const auto& layer = net.layers[index];
    Tensor w = layer.weight;
    w.set_requires_grad(options.track_params);
    Tensor mask = net.expanded_mask(index);
    mask.set_requires_grad(options.track_masked_weights);
    Tensor effective = ops::mul(tape, w, mask);
    if (trace) trace->masked_weights[index].push_back(effective);
    if (layer.spec.kind == LayerKind::fc) {
      if (x.rank() != 2 || x.dim(1) != layer.spec.in_channels) {
        throw ShapeError("layer " + layer.spec.name + ": expects [n," + std::to_string(layer.spec.in_channels) +
                         "] input, got " + shape_string(x.shape()));
      }
      Tensor y = ops::matmul(tape, x, effective, /*transpose_b=*/true);
      if (layer.bias.defined()) {
        Tensor b = layer.bias;
        b.set_requires_grad(options.track_params);
        y = ops::add(tape, y, b);
      }
      return y;
    }
    return ops::conv2d(tape, x, effective, layer.spec.stride, layer.spec.padding);
  }
};

Tensor flatten(Tape& tape, const Tensor& x) {
  const std::size_t n = x.dim(0);
  return ops::reshape(tape, x, Shape{n, x.size() / n});
}

}  // namespace

Tensor Network::forward(Tape& tape, const Tensor& x, const ForwardOptions& options, ForwardTrace* trace) const {
  if (x.rank() != 4 || Shape(x.shape().begin() + 1, x.shape().end()) != input_shape) {
    throw ShapeError("forward: expected input [n," + shape_string(input_shape).substr(1) + ", got " +
                     shape_string(x.shape()));
  }
  if (trace && trace->masked_weights.size() != layers.size()) trace->masked_weights.resize(layers.size());
  LayerRunner run{*this, tape, options, trace};
  switch (arch) {
    case Arch::mlp_small: {
      Tensor h = flatten(tape, x);
      h = ops::relu(tape, run(0, h));
      h = ops::relu(tape, run(1, h));
      return run(2, h);
    }
    case Arch::conv_small: {
      Tensor h = ops::max_pool2d(tape, ops::relu(tape, run(0, x)), 2);
      h = ops::max_pool2d(tape, ops::relu(tape, run(1, h)), 2);
      h = ops::relu(tape, run(2, flatten(tape, h)));
      return run(3, h);
    }
    case Arch::resnet_tiny: {
      Tensor h0 = ops::relu(tape, run(0, x));
      Tensor a = ops::relu(tape, run(1, h0));
      Tensor h1 = ops::relu(tape, ops::add(tape, run(2, a), h0));
      Tensor b = ops::relu(tape, run(3, h1));
      Tensor h2 = ops::relu(tape, ops::add(tape, run(4, b), run(5, h1)));
      Tensor pooled = ops::max_pool2d(tape, h2, 2);
      return run(6, flatten(tape, pooled));
    }
  }
  throw std::logic_error("forward: unhandled architecture");
}

namespace {

LayerSpec conv_spec(std::string name, std::size_t ci, std::size_t co, std::size_t k, std::size_t stride,
                    std::size_t pad, std::size_t spatial_out, LayerKind kind = LayerKind::conv) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = kind;
  s.in_channels = ci;
  s.out_channels = co;
  s.kernel = k;
  s.stride = stride;
  s.padding = pad;
  s.spatial_out = spatial_out;
  return s;
}

LayerSpec fc_spec(std::string name, std::size_t in, std::size_t out) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::fc;
  s.in_channels = in;
  s.out_channels = out;
  return s;
}

}  // namespace

Network build_network(Arch arch, const Shape& input_shape, std::size_t classes, std::uint64_t seed) {
  if (input_shape.size() != 3) throw ShapeError("build_network: input shape must be {c,h,w}");
  if (classes < 2) throw std::invalid_argument("build_network: need at least 2 classes");
  const std::size_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
  Network net;
  net.arch = arch;
  net.input_shape = input_shape;
  net.classes = classes;
  std::vector<LayerSpec> specs;
  switch (arch) {
    case Arch::mlp_small:
      specs = {fc_spec("fc1", c * h * w, 64), fc_spec("fc2", 64, 32), fc_spec("fc3", 32, classes)};
      net.consumers = {{1}, {2}, {}};
      break;
    case Arch::conv_small:
      if (h % 4 != 0 || w % 4 != 0 || h != w) {
        throw ShapeError("build_network: conv-small needs square input divisible by 4, got " +
                         shape_string(input_shape));
      }
      specs = {conv_spec("conv1", c, 8, 3, 1, 1, h), conv_spec("conv2", 8, 16, 3, 1, 1, h / 2),
               fc_spec("fc1", 16 * (h / 4) * (w / 4), 48), fc_spec("fc2", 48, classes)};
      net.consumers = {{1}, {2}, {3}, {}};
      break;
    case Arch::resnet_tiny:
      if (h % 4 != 0 || w % 4 != 0 || h != w) {
        throw ShapeError("build_network: resnet-tiny needs square input divisible by 4, got " +
                         shape_string(input_shape));
      }
      specs = {conv_spec("conv0", c, 8, 3, 1, 1, h),
               conv_spec("block1.conv_a", 8, 8, 3, 1, 1, h),
               conv_spec("block1.conv_b", 8, 8, 3, 1, 1, h),
               conv_spec("block2.conv_a", 8, 16, 3, 2, 1, h / 2),
               conv_spec("block2.conv_b", 16, 16, 3, 1, 1, h / 2),
               conv_spec("block2.shortcut", 8, 16, 1, 2, 0, h / 2, LayerKind::shortcut_conv),
               fc_spec("fc", 16 * (h / 4) * (w / 4), classes)};
      // Identity skips pass conv0 and block1.conv_b outputs straight through.
      net.consumers = {{1, 3, 5}, {2}, {3, 5}, {4}, {6}, {6}, {}};
      net.residual_links = {{3, 5}};
      break;
  }
  Rng rng(seed);
  for (auto& spec : specs) {
    PrunableLayer layer;
    layer.spec = spec;
    const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in()));
    std::vector<double> values(spec.weight_count());
    for (auto& v : values) v = rng.uniform(-bound, bound);
    layer.weight = Tensor(spec.weight_shape(), std::move(values));
    if (spec.kind == LayerKind::fc) layer.bias = Tensor(Shape{spec.out_channels}, 0.0);
    layer.quota = Tensor(Shape{1}, 0.0);
    net.layers.push_back(std::move(layer));
  }
  net.set_granularity(Granularity::weight);
  return net;
}

PreservedCount count_preserved(const Network& net) {
  PreservedCount out;
  out.per_layer.resize(net.layers.size(), 0);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    std::size_t kept = 0;
    for (double m : l.mask.values()) kept += m != 0.0 ? 1 : 0;
    if (net.granularity == Granularity::channel) kept *= l.spec.weights_per_input_channel();
    out.per_layer[i] = kept;
    out.total += kept;
  }
  return out;
}

std::size_t retained_output_channels(const Network& net, const std::vector<Tensor>& masks, std::size_t layer) {
  const auto& spec = net.layers.at(layer).spec;
  const auto& cons = net.consumers.at(layer);
  if (cons.empty()) return spec.out_channels;
  std::size_t kept = 0;
  for (std::size_t ch = 0; ch < spec.out_channels; ++ch) {
    bool used = false;
    for (std::size_t consumer : cons) {
      const auto& cspec = net.layers[consumer].spec;
      const std::size_t group = cspec.in_channels / spec.out_channels;
      auto mv = masks[consumer].values();
      for (std::size_t f = ch * group; f < (ch + 1) * group && !used; ++f) used = mv[f] != 0.0;
      if (used) break;
    }
    kept += used ? 1 : 0;
  }
  return kept;
}

FlopsCount flops(const Network& net, const std::vector<Tensor>& masks) {
  if (masks.size() != net.layers.size()) throw ShapeError("flops: one mask per layer required");
  FlopsCount out;
  out.per_layer.resize(net.layers.size(), 0.0);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& spec = net.layers[i].spec;
    const double positions = static_cast<double>(spec.spatial_out * spec.spatial_out);
    double f = 0.0;
    if (net.granularity == Granularity::weight) {
      std::size_t kept = 0;
      for (double m : masks[i].values()) kept += m != 0.0 ? 1 : 0;
      f = static_cast<double>(kept) * positions;
    } else {
      std::size_t ci = 0;
      for (double m : masks[i].values()) ci += m != 0.0 ? 1 : 0;
      const std::size_t co = retained_output_channels(net, masks, i);
      f = static_cast<double>(ci * co * spec.kernel * spec.kernel) * positions;
    }
    out.per_layer[i] = f;
    out.total += f;
  }
  return out;
}

FlopsCount flops(const Network& net) {
  std::vector<Tensor> masks;
  masks.reserve(net.layers.size());
  for (const auto& l : net.layers) masks.push_back(l.mask);
  return flops(net, masks);
}

FlopsCount full_flops(const Network& net) {
  std::vector<Tensor> masks;
  masks.reserve(net.layers.size());
  for (const auto& l : net.layers) masks.emplace_back(l.mask.shape(), 1.0);
  return flops(net, masks);
}

}  // namespace harp
