#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace harp {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Raised when operands do not conform; the message names the op and dims.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major array of doubles with an optional gradient slot.
///
/// A Tensor is a cheap handle: copies share storage. The `requires_grad`
/// flag lives on the handle, so `detached()` yields a view over the same
/// values that the tape will not differentiate through.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad() const;
  /// Allocates a zero gradient if none is present.
  void ensure_grad() const;
  void zero_grad();
  /// Drops the gradient slot entirely.
  void clear_grad();

  /// Same storage, not tracked by the tape.
  Tensor detached() const;
  /// Deep copy of values (no gradient).
  Tensor clone() const;
  /// Same storage, different shape of equal size.
  Tensor reshaped(Shape shape) const;

  bool same_storage(const Tensor& other) const { return data_ == other.data_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool has_grad = false;
  };

  std::shared_ptr<Storage> data_;
  bool requires_grad_ = false;
};

/// Ordered record of operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so every node's inputs are
/// recorded before it. `backward` walks the list once, in reverse, and
/// then clears it.
class Tape {
 public:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  void record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward);
  void backward(const Tensor& loss);
  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

namespace ops {

/// [n,k] x [k,m] -> [n,m]; with `transpose_b`, b is [m,k].
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b, bool transpose_b = false);
/// NCHW input, [c_o, c_i, k, k] kernel, no bias.
Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& w, std::size_t stride = 1,
              std::size_t padding = 0);
/// Same-shape add, or [n,m] + [m] row broadcast.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double factor);
Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
/// Non-overlapping window pooling over NCHW.
Tensor max_pool2d(Tape& tape, const Tensor& x, std::size_t window = 2);
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);
/// Mean cross-entropy of softmax(logits) over the batch.
Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels);
/// Batch mean of KL(softmax(p_logits) || softmax(q_logits)).
Tensor kl_divergence(Tape& tape, const Tensor& p_logits, const Tensor& q_logits);
Tensor sum(Tape& tape, const Tensor& x);
Tensor mean(Tape& tape, const Tensor& x);
/// Subgradient 1 on [lo, hi] (boundaries included), 0 outside.
Tensor clamp(Tape& tape, const Tensor& x, double lo, double hi);

}  // namespace ops

/// Row-wise log-softmax of [n, C] logits, not recorded.
std::vector<double> log_softmax_rows(std::span<const double> logits, std::size_t classes);

}  // namespace harp
