#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "harp/tensor.hpp"

namespace harp {

enum class Arch { mlp_small, conv_small, resnet_tiny };
enum class LayerKind { fc, conv, shortcut_conv };
enum class Granularity { weight, channel };

Arch parse_arch(std::string_view name);
std::string_view arch_name(Arch arch);
Granularity parse_granularity(std::string_view name);
std::string_view granularity_name(Granularity g);

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::fc;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t spatial_out = 1;
  bool prunable = true;

  /// Receptive-field size times input channels.
  std::size_t fan_in() const { return in_channels * kernel * kernel; }
  std::size_t weight_count() const { return out_channels * in_channels * kernel * kernel; }
  /// Weights attached to one input channel.
  std::size_t weights_per_input_channel() const { return out_channels * kernel * kernel; }
  /// conv: [c_o, c_i, k, k]; fc: [c_o, c_i].
  Shape weight_shape() const;
};

struct PrunableLayer {
  LayerSpec spec;
  Tensor weight;
  /// fc layers only; never pruned, not part of N.
  Tensor bias;
  /// Weight-shaped for weight granularity, [c_i] for channel granularity.
  Tensor scores;
  /// Unconstrained compression quota, shape [1].
  Tensor quota;
  /// Binary, same shape as scores.
  Tensor mask;
};

struct ResidualLink {
  std::size_t block_input;
  std::size_t shortcut;
};

struct ForwardOptions {
  /// Differentiate with respect to weights and biases.
  bool track_params = false;
  /// Make the masked weights tape-visible so their gradients can be read back.
  bool track_masked_weights = false;
};

struct ForwardTrace {
  /// Per layer, weight ⊙ mask for every forward pass recorded with this
  /// trace (TRADES runs two).
  std::vector<std::vector<Tensor>> masked_weights;

  /// Summed gradient over all recorded uses of layer `index`.
  std::vector<double> upstream_grad(std::size_t index) const;
};

class Network {
 public:
  Arch arch = Arch::mlp_small;
  Shape input_shape;  // {c, h, w}
  std::size_t classes = 0;
  Granularity granularity = Granularity::weight;
  std::vector<PrunableLayer> layers;
  std::vector<ResidualLink> residual_links;
  /// consumers[l]: layers whose input is (a function of) layer l's output.
  std::vector<std::vector<std::size_t>> consumers;

  /// N: total prunable weight count.
  std::size_t total_weights() const;

  /// Logits for a batch [n, c, h, w]; every layer uses weight ⊙ mask.
  Tensor forward(Tape& tape, const Tensor& x, const ForwardOptions& options = {},
                 ForwardTrace* trace = nullptr) const;

  /// Reshapes scores and masks for `g`; masks become all ones, scores zero.
  void set_granularity(Granularity g);
  void reset_masks();
  /// Mask broadcast to the weight shape.
  Tensor expanded_mask(std::size_t layer) const;
  /// Weights then biases, as live handles.
  std::vector<Tensor> parameters() const;
  std::size_t mask_size(std::size_t layer) const;
};

/// Deterministic topology; weights drawn uniform in ±sqrt(6 / fan_in).
Network build_network(Arch arch, const Shape& input_shape, std::size_t classes, std::uint64_t seed);

struct PreservedCount {
  std::size_t total = 0;
  std::vector<std::size_t> per_layer;
};

/// Retained weights after broadcasting each mask to the weight shape.
PreservedCount count_preserved(const Network& net);

struct FlopsCount {
  double total = 0.0;
  std::vector<double> per_layer;
};

/// Multiply-accumulates under the given masks (one per layer, scores-shaped).
FlopsCount flops(const Network& net, const std::vector<Tensor>& masks);
/// Multiply-accumulates under the network's installed masks.
FlopsCount flops(const Network& net);
/// Multiply-accumulates with nothing pruned.
FlopsCount full_flops(const Network& net);

/// Output channels of `layer` still read by at least one consumer (channel granularity).
std::size_t retained_output_channels(const Network& net, const std::vector<Tensor>& masks, std::size_t layer);

}  // namespace harp
