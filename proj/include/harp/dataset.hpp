#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "harp/tensor.hpp"

namespace harp {

/// Malformed dataset file; the message names the row or byte offset.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Samples normalized to [0, 1], NCHW, with integer labels.
struct Dataset {
  Shape sample_shape;  // {c, h, w}
  std::size_t classes = 0;
  std::vector<double> inputs;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return shape_size(sample_shape); }
  /// Batch tensor [n, c, h, w] for the given sample indices.
  Tensor batch(const std::vector<std::size_t>& indices) const;
  std::vector<int> batch_labels(const std::vector<std::size_t>& indices) const;
  Dataset subset(const std::vector<std::size_t>& indices) const;
  /// Throws FormatError if values leave [0,1] or labels leave [0, classes).
  void validate() const;
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

/// Oriented-blob generator: class c draws an anisotropic Gaussian blob at
/// angle c·π/classes, random centre and amplitude, plus clipped noise.
struct SyntheticSpec {
  std::size_t samples = 2000;
  std::size_t size = 16;
  std::size_t classes = 2;
  double noise = 0.08;
  std::uint64_t seed = 0;
};

/// Parses "blobs:n=2000,size=16,classes=2,noise=0.08".
SyntheticSpec parse_synthetic_spec(const std::string& text);
/// Balanced: sample i belongs to class i mod classes before shuffling.
Dataset make_synthetic(const SyntheticSpec& spec);

/// Rows "label,p0,p1,...". Pixels above 1 trigger /255 scaling of the file.
/// `sample_shape` may be empty to infer a square single-channel image.
Dataset load_csv(const std::string& path, Shape sample_shape = {}, std::size_t classes = 0);

/// Big-endian IDX pair: images 0x00000803, labels 0x00000801; bytes /255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t classes = 0,
                 std::size_t limit = 0);

/// Deterministic shuffled split; `test_fraction` of samples go to test.
DatasetSplit split_dataset(const Dataset& data, double test_fraction, std::uint64_t seed);

}  // namespace harp
