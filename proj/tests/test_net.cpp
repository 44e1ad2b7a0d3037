#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "harp/net.hpp"
#include "test_util.hpp"

using namespace harp;
using harp::testing::random_tensor;

namespace {

const Shape kImage{1, 16, 16};

void random_masks(Network& net, Rng& rng, double keep) {
  for (auto& l : net.layers) {
    for (auto& m : l.mask.mutable_values()) m = rng.uniform() < keep ? 1.0 : 0.0;
  }
}

std::vector<double> logits(const Network& net, const Tensor& x) {
  Tape tape;
  auto y = net.forward(tape, x);
  return {y.values().begin(), y.values().end()};
}

// Input channel of flat weight index i in the [c_o, c_i, k, k] (or [c_o, c_i]) layout.
std::size_t input_channel_of(const LayerSpec& s, std::size_t i) {
  return (i / (s.kernel * s.kernel)) % s.in_channels;
}

Network single_layer(LayerSpec spec) {
  Network net;
  net.arch = Arch::mlp_small;
  net.input_shape = {spec.in_channels, 1, 1};
  net.classes = spec.out_channels;
  PrunableLayer l;
  l.spec = spec;
  l.weight = Tensor(spec.weight_shape(), 0.5);
  l.quota = Tensor(Shape{1}, 0.0);
  net.layers.push_back(l);
  net.consumers = {{}};
  net.set_granularity(Granularity::weight);
  return net;
}

LayerSpec conv(std::size_t ci, std::size_t co, std::size_t k, std::size_t out) {
  LayerSpec s;
  s.name = "conv";
  s.kind = LayerKind::conv;
  s.in_channels = ci;
  s.out_channels = co;
  s.kernel = k;
  s.spatial_out = out;
  return s;
}

}  // namespace

TEST_CASE("construction contracts") {
  auto cs = build_network(Arch::conv_small, kImage, 2, 1);
  CHECK(cs.layers.size() >= 4);
  CHECK(cs.total_weights() >= 10000);
  CHECK(build_network(Arch::resnet_tiny, kImage, 2, 1).residual_links.size() > 0);
  CHECK(build_network(Arch::mlp_small, kImage, 2, 1).layers.back().spec.out_channels == 2);
  CHECK_THROWS(parse_arch("vgg16"));
  CHECK(parse_arch("resnet-tiny") == Arch::resnet_tiny);
}

TEST_CASE("fan-in and weight counts") {
  auto s = conv(3, 8, 3, 8);
  CHECK(s.fan_in() == 27);
  CHECK(s.weight_count() == 216);
  LayerSpec fc;
  fc.in_channels = 10;
  fc.out_channels = 2;
  CHECK(fc.fan_in() == 10);
}

TEST_CASE("construction is deterministic in the seed and init is fan-in bounded") {
  auto a = build_network(Arch::resnet_tiny, kImage, 3, 9);
  auto b = build_network(Arch::resnet_tiny, kImage, 3, 9);
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    auto va = a.layers[l].weight.values(), vb = b.layers[l].weight.values();
    CHECK(std::equal(va.begin(), va.end(), vb.begin()));
    const double bound = std::sqrt(6.0 / static_cast<double>(a.layers[l].spec.fan_in()));
    for (double v : va) CHECK(std::abs(v) <= bound);
  }
  std::size_t n = 0;
  for (const auto& l : a.layers) n += l.weight.size();
  CHECK(a.total_weights() == n);
}

TEST_CASE("forward rejects inputs of the wrong shape") {
  auto net = build_network(Arch::conv_small, kImage, 2, 1);
  Tape tape;
  CHECK_THROWS_AS(net.forward(tape, Tensor(Shape{2, 1, 8, 8})), ShapeError);
}

TEST_CASE("all-ones masks leave logits unchanged, all-zeros masks make them constant") {
  Rng rng(3);
  for (Arch arch : {Arch::mlp_small, Arch::conv_small, Arch::resnet_tiny}) {
    auto net = build_network(arch, kImage, 4, 2);
    for (auto& l : net.layers) {
      if (l.bias.defined()) for (auto& b : l.bias.mutable_values()) b = rng.uniform(-0.1, 0.1);
    }
    auto x = random_tensor(rng, {3, 1, 16, 16}, 0, 1, false);
    auto before = logits(net, x);
    random_masks(net, rng, 0.5);
    CHECK(before != logits(net, x));
    net.reset_masks();
    CHECK(before == logits(net, x));

    for (auto& l : net.layers) for (auto& m : l.mask.mutable_values()) m = 0.0;
    auto zeroed = logits(net, x);
    const std::size_t c = net.classes;
    for (std::size_t n = 1; n < 3; ++n)
      for (std::size_t k = 0; k < c; ++k) CHECK(zeroed[n * c + k] == zeroed[k]);
  }
}

TEST_CASE("masked forward equals forward after overwriting theta with theta*m") {
  Rng rng(4);
  for (Granularity g : {Granularity::weight, Granularity::channel}) {
    for (Arch arch : {Arch::mlp_small, Arch::conv_small, Arch::resnet_tiny}) {
      CAPTURE(static_cast<int>(arch));
      CAPTURE(static_cast<int>(g));
      auto net = build_network(arch, kImage, 3, 5);
      net.set_granularity(g);
      random_masks(net, rng, 0.6);
      auto x = random_tensor(rng, {2, 1, 16, 16}, 0, 1, false);
      auto masked = logits(net, x);

      Network manual = net;
      for (std::size_t li = 0; li < manual.layers.size(); ++li) {
        auto& l = manual.layers[li];
        l.weight = l.weight.clone();
        auto w = l.weight.mutable_values();
        auto m = net.layers[li].mask.values();
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double keep = g == Granularity::weight ? m[i] : m[input_channel_of(l.spec, i)];
          w[i] *= keep;
        }
        l.mask = Tensor(l.mask.shape(), 1.0);
      }
      CHECK(masked == logits(manual, x));
    }
  }
}

TEST_CASE("zeroing one mask entry matches zeroing that weight") {
  auto net = build_network(Arch::conv_small, kImage, 2, 7);
  Rng rng(5);
  auto x = random_tensor(rng, {2, 1, 16, 16}, 0, 1, false);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t l = rng.below(net.layers.size());
    const std::size_t i = rng.below(net.layers[l].weight.size());
    Network a = net;
    a.layers[l].mask = Tensor(net.layers[l].mask.shape(), 1.0);
    a.layers[l].mask.mutable_values()[i] = 0.0;
    Network b = net;
    b.layers[l].weight = net.layers[l].weight.clone();
    b.layers[l].weight.mutable_values()[i] = 0.0;
    CHECK(logits(a, x) == logits(b, x));
  }
}

TEST_CASE("masked forward passes gradients to weights only where kept") {
  auto net = build_network(Arch::mlp_small, kImage, 2, 1);
  auto& m = net.layers[1].mask;
  m = Tensor(m.shape(), 1.0);
  m.mutable_values()[0] = 0.0;
  Rng rng(6);
  auto x = random_tensor(rng, {4, 1, 16, 16}, 0, 1, false);
  Tape tape;
  ForwardOptions opt;
  opt.track_params = true;
  auto y = net.forward(tape, x, opt);
  tape.backward(ops::sum(tape, ops::mul(tape, y, y)));
  CHECK(net.layers[1].weight.grad()[0] == 0.0);
}

TEST_CASE("count_preserved") {
  auto net = build_network(Arch::resnet_tiny, kImage, 2, 1);
  CHECK(count_preserved(net).total == net.total_weights());

  SUBCASE("half of a 100-weight layer") {
    LayerSpec fc;
    fc.name = "fc";
    fc.in_channels = 10;
    fc.out_channels = 10;
    auto one = single_layer(fc);
    auto mv = one.layers[0].mask.mutable_values();
    for (std::size_t i = 0; i < 50; ++i) mv[i * 2] = 0.0;
    CHECK(count_preserved(one).per_layer[0] == 50);
  }
  SUBCASE("2 of 4 input channels in a 4x8x3x3 conv") {
    // Brute force over the broadcast mask with the same channel rule as the forward.
    auto one = single_layer(conv(4, 8, 3, 4));
    one.set_granularity(Granularity::channel);
    auto mv = one.layers[0].mask.mutable_values();
    mv[1] = 0.0;
    mv[3] = 0.0;
    std::size_t brute = 0;
    for (std::size_t i = 0; i < one.layers[0].spec.weight_count(); ++i)
      brute += mv[input_channel_of(one.layers[0].spec, i)] != 0.0;
    CHECK(brute == 144);
    CHECK(count_preserved(one).per_layer[0] == brute);
  }
  SUBCASE("randomized masks against a broadcast brute force") {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
      auto g = trial % 2 ? Granularity::channel : Granularity::weight;
      net.set_granularity(g);
      random_masks(net, rng, rng.uniform());
      std::size_t brute = 0;
      for (const auto& l : net.layers) {
        auto mv = l.mask.values();
        for (std::size_t i = 0; i < l.spec.weight_count(); ++i)
          brute += (g == Granularity::weight ? mv[i] : mv[input_channel_of(l.spec, i)]) != 0.0;
      }
      CHECK(count_preserved(net).total == brute);
    }
  }
}

TEST_CASE("flops examples") {
  auto c = single_layer(conv(3, 8, 3, 8));
  CHECK(full_flops(c).total == 13824.0);
  c.set_granularity(Granularity::channel);
  CHECK(flops(c).total == 13824.0);
  c.layers[0].mask.mutable_values()[0] = 0.0;
  CHECK(flops(c).total == doctest::Approx(13824.0 * 2.0 / 3.0));

  LayerSpec fc;
  fc.in_channels = 10;
  fc.out_channels = 2;
  auto f = single_layer(fc);
  CHECK(full_flops(f).total == 20.0);
  f.set_granularity(Granularity::channel);
  for (std::size_t i = 0; i < 5; ++i) f.layers[0].mask.mutable_values()[i] = 0.0;
  CHECK(flops(f).total == 10.0);
}

TEST_CASE("flops under channel masks follows consumer inputs") {
  auto net = build_network(Arch::conv_small, kImage, 2, 1);
  net.set_granularity(Granularity::channel);
  // conv2 reads conv1's outputs; dropping conv2's input channel 0 drops one conv1 output.
  net.layers[1].mask.mutable_values()[0] = 0.0;
  CHECK(retained_output_channels(net, {net.layers[0].mask, net.layers[1].mask, net.layers[2].mask,
                                       net.layers[3].mask}, 0) == 7);
  const auto& s0 = net.layers[0].spec;
  CHECK(flops(net).per_layer[0] == static_cast<double>(1 * 7 * 9 * s0.spatial_out * s0.spatial_out));
}

TEST_CASE("flops is monotone non-increasing when any mask entry is cleared") {
  Rng rng(9);
  for (Granularity g : {Granularity::weight, Granularity::channel}) {
    auto net = build_network(Arch::resnet_tiny, kImage, 2, 1);
    net.set_granularity(g);
    random_masks(net, rng, 0.7);
    for (int trial = 0; trial < 200; ++trial) {
      const double before = flops(net).total;
      const std::size_t l = rng.below(net.layers.size());
      auto mv = net.layers[l].mask.mutable_values();
      mv[rng.below(mv.size())] = 0.0;
      CHECK(flops(net).total <= before);
    }
  }
}
