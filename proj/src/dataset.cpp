#include "harp/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "harp/rng.hpp"

namespace harp {

Tensor Dataset::batch(const std::vector<std::size_t>& indices) const {
  const std::size_t per = sample_size();
  std::vector<double> values(indices.size() * per);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= size()) throw std::out_of_range("dataset: sample index out of range");
    std::copy_n(inputs.begin() + static_cast<std::ptrdiff_t>(src * per), per,
                values.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Tensor(std::move(shape), std::move(values));
}

std::vector<int> Dataset::batch_labels(const std::vector<std::size_t>& indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.sample_shape = sample_shape;
  out.classes = classes;
  const std::size_t per = sample_size();
  out.inputs.reserve(indices.size() * per);
  for (auto i : indices) {
    out.inputs.insert(out.inputs.end(), inputs.begin() + static_cast<std::ptrdiff_t>(i * per),
                      inputs.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

void Dataset::validate() const {
  if (inputs.size() != labels.size() * sample_size()) {
    throw FormatError("dataset: " + std::to_string(inputs.size()) + " values do not fit " +
                      std::to_string(labels.size()) + " samples of shape " + shape_string(sample_shape));
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!(inputs[i] >= 0.0 && inputs[i] <= 1.0)) {
      throw FormatError("dataset: value " + std::to_string(inputs[i]) + " of sample " +
                        std::to_string(i / sample_size()) + " outside [0,1]");
    }
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw FormatError("dataset: label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) +
                        " outside [0," + std::to_string(classes) + ")");
    }
  }
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& text, double& out) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last;
}

}  // namespace

SyntheticSpec parse_synthetic_spec(const std::string& text) {
  SyntheticSpec spec;
  std::string body = text;
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    if (trim(text.substr(0, colon)) != "blobs") {
      throw std::invalid_argument("synthetic spec: unknown generator '" + text.substr(0, colon) + "'");
    }
    body = text.substr(colon + 1);
  } else if (trim(text) == "blobs") {
    body.clear();
  }
  for (const auto& item : split(body, ',')) {
    if (trim(item).empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("synthetic spec: expected key=value, got '" + item + "'");
    const std::string key = trim(item.substr(0, eq));
    double v = 0.0;
    if (!parse_double(item.substr(eq + 1), v)) {
      throw std::invalid_argument("synthetic spec: non-numeric value for '" + key + "'");
    }
    if (key == "n") {
      spec.samples = static_cast<std::size_t>(v);
    } else if (key == "size") {
      spec.size = static_cast<std::size_t>(v);
    } else if (key == "classes") {
      spec.classes = static_cast<std::size_t>(v);
    } else if (key == "noise") {
      spec.noise = v;
    } else if (key == "seed") {
      spec.seed = static_cast<std::uint64_t>(v);
    } else {
      throw std::invalid_argument("synthetic spec: unknown key '" + key + "'");
    }
  }
  if (spec.samples == 0 || spec.size < 4 || spec.classes < 2 || spec.noise < 0.0) {
    throw std::invalid_argument("synthetic spec: need n>0, size>=4, classes>=2, noise>=0");
  }
  return spec;
}

Dataset make_synthetic(const SyntheticSpec& spec) {
  Dataset data;
  data.sample_shape = {1, spec.size, spec.size};
  data.classes = spec.classes;
  Rng rng(spec.seed);
  const double s = static_cast<double>(spec.size);
  const double major = s / 5.0, minor = s / 14.0;
  std::vector<std::size_t> order(spec.samples);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  data.inputs.reserve(spec.samples * spec.size * spec.size);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const int label = static_cast<int>(order[i] % spec.classes);
    const double angle = std::numbers::pi * label / static_cast<double>(spec.classes) + rng.uniform(-0.15, 0.15);
    const double cy = rng.uniform(0.3 * s, 0.7 * s), cx = rng.uniform(0.3 * s, 0.7 * s);
    const double amp = rng.uniform(0.5, 0.9);
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (std::size_t y = 0; y < spec.size; ++y) {
      for (std::size_t x = 0; x < spec.size; ++x) {
        const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
        const double u = dx * ca + dy * sa, v = -dx * sa + dy * ca;
        const double blob = amp * std::exp(-0.5 * (u * u / (major * major) + v * v / (minor * minor)));
        const double value = 0.1 + blob + spec.noise * rng.normal();
        data.inputs.push_back(std::clamp(value, 0.0, 1.0));
      }
    }
    data.labels.push_back(label);
  }
  return data;
}

Dataset load_csv(const std::string& path, Shape sample_shape, std::size_t classes) {
  std::ifstream in(path);
  if (!in) throw FormatError("csv: cannot open '" + path + "'");
  Dataset data;
  std::string line;
  std::size_t row = 0, width = 0;
  double max_value = 0.0;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (row == 1) {
      double probe = 0.0;
      if (!parse_double(cells.front(), probe)) continue;  // header row
    }
    if (cells.size() < 2) throw FormatError("csv: row " + std::to_string(row) + " has no pixel values");
    if (width == 0) width = cells.size() - 1;
    if (cells.size() - 1 != width) {
      throw FormatError("csv: row " + std::to_string(row) + " has " + std::to_string(cells.size() - 1) +
                        " pixels, expected " + std::to_string(width));
    }
    double label = 0.0;
    if (!parse_double(cells[0], label) || label < 0.0 || label != std::floor(label)) {
      throw FormatError("csv: row " + std::to_string(row) + " has invalid label '" + cells[0] + "'");
    }
    data.labels.push_back(static_cast<int>(label));
    max_label = std::max(max_label, static_cast<int>(label));
    for (std::size_t c = 1; c < cells.size(); ++c) {
      double v = 0.0;
      if (!parse_double(cells[c], v)) {
        throw FormatError("csv: row " + std::to_string(row) + " column " + std::to_string(c + 1) +
                          " is not numeric: '" + cells[c] + "'");
      }
      if (v < 0.0) throw FormatError("csv: row " + std::to_string(row) + " has a negative pixel");
      max_value = std::max(max_value, v);
      data.inputs.push_back(v);
    }
  }
  if (data.labels.empty()) throw FormatError("csv: '" + path + "' holds no samples");
  if (max_value > 1.0) {
    if (max_value > 255.0) throw FormatError("csv: pixel values exceed 255");
    for (auto& v : data.inputs) v /= 255.0;
  }
  if (sample_shape.empty()) {
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(width))));
    if (side * side != width) {
      throw FormatError("csv: " + std::to_string(width) + " pixels per row is not a square image; set a shape");
    }
    sample_shape = {1, side, side};
  }
  if (shape_size(sample_shape) != width) {
    throw FormatError("csv: rows hold " + std::to_string(width) + " pixels, shape " + shape_string(sample_shape) +
                      " needs " + std::to_string(shape_size(sample_shape)));
  }
  data.sample_shape = sample_shape;
  data.classes = classes ? classes : static_cast<std::size_t>(max_label + 1);
  data.validate();
  return data;
}

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("idx: cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::string& path) {
  if (offset + 4 > bytes.size()) {
    throw FormatError("idx: '" + path + "' truncated at byte offset " + std::to_string(offset));
  }
  return (static_cast<std::uint32_t>(bytes[offset]) << 24) | (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) | static_cast<std::uint32_t>(bytes[offset + 3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t classes,
                 std::size_t limit) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);
  const std::uint32_t image_magic = read_be32(images, 0, images_path);
  if (image_magic != 0x00000803) {
    std::ostringstream os;
    os << "idx: '" << images_path << "' has magic 0x" << std::hex << image_magic << ", expected 0x00000803";
    throw FormatError(os.str());
  }
  const std::uint32_t label_magic = read_be32(labels, 0, labels_path);
  if (label_magic != 0x00000801) {
    std::ostringstream os;
    os << "idx: '" << labels_path << "' has magic 0x" << std::hex << label_magic << ", expected 0x00000801";
    throw FormatError(os.str());
  }
  const std::size_t n = read_be32(images, 4, images_path);
  const std::size_t rows = read_be32(images, 8, images_path);
  const std::size_t cols = read_be32(images, 12, images_path);
  const std::size_t n_labels = read_be32(labels, 4, labels_path);
  if (n != n_labels) {
    throw FormatError("idx: " + std::to_string(n) + " images but " + std::to_string(n_labels) + " labels");
  }
  if (rows == 0 || cols == 0) throw FormatError("idx: zero-sized images in '" + images_path + "'");
  const std::size_t count = limit ? std::min(limit, n) : n;
  const std::size_t per = rows * cols;
  if (16 + count * per > images.size()) {
    throw FormatError("idx: '" + images_path + "' truncated at byte offset " + std::to_string(images.size()));
  }
  if (8 + count > labels.size()) {
    throw FormatError("idx: '" + labels_path + "' truncated at byte offset " + std::to_string(labels.size()));
  }
  Dataset data;
  data.sample_shape = {1, rows, cols};
  data.inputs.reserve(count * per);
  int max_label = 0;
  for (std::size_t i = 0; i < count * per; ++i) data.inputs.push_back(images[16 + i] / 255.0);
  for (std::size_t i = 0; i < count; ++i) {
    data.labels.push_back(labels[8 + i]);
    max_label = std::max(max_label, static_cast<int>(labels[8 + i]));
  }
  data.classes = classes ? classes : static_cast<std::size_t>(max_label + 1);
  data.validate();
  return data;
}

DatasetSplit split_dataset(const Dataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("split: test fraction must lie in (0,1)");
  }
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(data.size())));
  if (n_test == 0 || n_test >= data.size()) throw std::invalid_argument("split: dataset too small to split");
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {data.subset(train), data.subset(test)};
}

}  // namespace harp
