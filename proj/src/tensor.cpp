#include "harp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace harp {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : data_(std::make_shared<Storage>()), requires_grad_(requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor: zero-sized dimension in shape " + shape_string(shape));
  }
  data_->values.assign(shape_size(shape), fill);
  data_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : data_(std::make_shared<Storage>()), requires_grad_(requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_string(shape) + " holds " +
                     std::to_string(shape_size(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  data_->shape = std::move(shape);
  data_->values = std::move(values);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

const Shape& Tensor::shape() const {
  static const Shape empty;
  return data_ ? data_->shape : empty;
}

std::size_t Tensor::size() const { return data_ ? data_->values.size() : 0; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("tensor: axis out of range for " + shape_string(shape()));
  return data_->shape[axis];
}

std::span<const double> Tensor::values() const {
  if (!data_) return {};
  return data_->values;
}

std::span<double> Tensor::mutable_values() {
  if (!data_) return {};
  return data_->values;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + shape_string(shape()) + " is not scalar");
  return data_->values[0];
}

bool Tensor::has_grad() const { return data_ && data_->has_grad; }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) return {};
  return data_->grad;
}

std::span<double> Tensor::mutable_grad() const {
  ensure_grad();
  return data_->grad;
}

void Tensor::ensure_grad() const {
  if (!data_) return;
  if (!data_->has_grad) {
    data_->grad.assign(data_->values.size(), 0.0);
    data_->has_grad = true;
  }
}

void Tensor::zero_grad() {
  if (has_grad()) std::fill(data_->grad.begin(), data_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  if (!data_) return;
  data_->grad.clear();
  data_->grad.shrink_to_fit();
  data_->has_grad = false;
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.requires_grad_ = false;
  return t;
}

Tensor Tensor::clone() const {
  if (!data_) return {};
  return Tensor(data_->shape, data_->values);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != size()) {
    throw ShapeError("reshape: cannot view " + shape_string(this->shape()) + " as " + shape_string(shape));
  }
  Tensor t(std::move(shape), std::vector<double>(values().begin(), values().end()));
  return t;
}

void Tape::record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward) {
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  }
  for (auto& node : nodes_) {
    for (auto& in : node.inputs) {
      if (in.requires_grad()) in.ensure_grad();
    }
  }
  if (loss.requires_grad()) {
    Tensor seed = loss;
    seed.mutable_grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->output.has_grad()) it->backward();
    }
  }
  nodes_.clear();
}

namespace {

bool any_grad(std::initializer_list<const Tensor*> ts) {
  for (auto* t : ts) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + shape_string(t.shape()));
  }
}

}  // namespace

namespace ops {

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank("matmul", a, 2, "lhs");
  require_rank("matmul", b, 2, "rhs");
  const std::size_t n = a.dim(0), k = a.dim(1);
  const std::size_t m = transpose_b ? b.dim(0) : b.dim(1);
  const std::size_t bk = transpose_b ? b.dim(1) : b.dim(0);
  if (k != bk) {
    throw ShapeError("matmul: inner dims differ, lhs " + shape_string(a.shape()) + " rhs " +
                     shape_string(b.shape()) + (transpose_b ? " (transposed)" : ""));
  }
  Tensor out(Shape{n, m}, 0.0, any_grad({&a, &b}));
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = ov.data() + i * m;
    const double* arow = av.data() + i * k;
    if (transpose_b) {
      for (std::size_t j = 0; j < m; ++j) {
        const double* brow = bv.data() + j * k;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        orow[j] = acc;
      }
    } else {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = arow[p];
        const double* brow = bv.data() + p * m;
        for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
      }
    }
  }
  if (out.requires_grad()) {
    tape.record({a, b}, out, [a, b, out, n, k, m, transpose_b]() mutable {
      auto go = out.grad();
      auto av = a.values();
      auto bv = b.values();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const double* grow = go.data() + i * m;
          double* garow = ga.data() + i * k;
          if (transpose_b) {
            for (std::size_t j = 0; j < m; ++j) {
              const double g = grow[j];
              const double* brow = bv.data() + j * k;
              for (std::size_t p = 0; p < k; ++p) garow[p] += g * brow[p];
            }
          } else {
            for (std::size_t p = 0; p < k; ++p) {
              const double* brow = bv.data() + p * m;
              double acc = 0.0;
              for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
              garow[p] += acc;
            }
          }
        }
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const double* grow = go.data() + i * m;
          const double* arow = av.data() + i * k;
          if (transpose_b) {
            for (std::size_t j = 0; j < m; ++j) {
              const double g = grow[j];
              double* gbrow = gb.data() + j * k;
              for (std::size_t p = 0; p < k; ++p) gbrow[p] += g * arow[p];
            }
          } else {
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = arow[p];
              double* gbrow = gb.data() + p * m;
              for (std::size_t j = 0; j < m; ++j) gbrow[j] += aip * grow[j];
            }
          }
        }
      }
    });
  }
  return out;
}

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, o, k, stride, pad, oh, ow;
};

// Range of output columns whose input column ow*stride + kw - pad lies in [0, w).
inline void column_range(const ConvGeometry& g, std::size_t kw, std::size_t& lo, std::size_t& hi) {
  const long s = static_cast<long>(g.stride);
  const long off = static_cast<long>(kw) - static_cast<long>(g.pad);
  long first = off >= 0 ? 0 : (-off + s - 1) / s;
  long last = (static_cast<long>(g.w) - 1 - off) / s;
  if (static_cast<long>(g.w) - 1 - off < 0) last = -1;
  last = std::min(last, static_cast<long>(g.ow) - 1);
  lo = static_cast<std::size_t>(std::max(0L, first));
  hi = last < static_cast<long>(lo) ? lo : static_cast<std::size_t>(last + 1);
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding) {
  require_rank("conv2d", x, 4, "input");
  require_rank("conv2d", w, 4, "kernel");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, padding, 0, 0};
  if (w.dim(1) != g.c) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(w.dim(1)) + " input channels, input " +
                     shape_string(x.shape()) + " has " + std::to_string(g.c));
  }
  if (w.dim(3) != g.k) throw ShapeError("conv2d: kernel must be square, got " + shape_string(w.shape()));
  if (g.h + 2 * padding < g.k || g.w + 2 * padding < g.k) {
    throw ShapeError("conv2d: kernel " + shape_string(w.shape()) + " larger than padded input " +
                     shape_string(x.shape()));
  }
  g.oh = (g.h + 2 * padding - g.k) / stride + 1;
  g.ow = (g.w + 2 * padding - g.k) / stride + 1;

  Tensor out(Shape{g.n, g.o, g.oh, g.ow}, 0.0, any_grad({&x, &w}));
  auto xv = x.values();
  auto wv = w.values();
  auto ov = out.mutable_values();
  const std::size_t plane_in = g.h * g.w, plane_out = g.oh * g.ow;

  std::vector<std::size_t> col_lo(g.k), col_hi(g.k);
  for (std::size_t kw = 0; kw < g.k; ++kw) column_range(g, kw, col_lo[kw], col_hi[kw]);

  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t o = 0; o < g.o; ++o) {
      double* op = ov.data() + (n * g.o + o) * plane_out;
      for (std::size_t c = 0; c < g.c; ++c) {
        const double* xp = xv.data() + (n * g.c + c) * plane_in;
        const double* wp = wv.data() + (o * g.c + c) * g.k * g.k;
        for (std::size_t kh = 0; kh < g.k; ++kh) {
          for (std::size_t kw = 0; kw < g.k; ++kw) {
            const double wk = wp[kh * g.k + kw];
            if (wk == 0.0) continue;
            for (std::size_t oh = 0; oh < g.oh; ++oh) {
              const long ih = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.pad);
              if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
              const double* xrow = xp + static_cast<std::size_t>(ih) * g.w;
              double* orow = op + oh * g.ow;
              for (std::size_t ow = col_lo[kw]; ow < col_hi[kw]; ++ow) {
                orow[ow] += wk * xrow[ow * g.stride + kw - g.pad];
              }
            }
          }
        }
      }
    }
  }

  if (out.requires_grad()) {
    tape.record({x, w}, out, [x, w, out, g, col_lo, col_hi]() mutable {
      auto go = out.grad();
      auto xv = x.values();
      auto wv = w.values();
      const std::size_t plane_in = g.h * g.w, plane_out = g.oh * g.ow;
      const bool want_x = x.requires_grad(), want_w = w.requires_grad();
      std::span<double> gx, gw;
      if (want_x) gx = x.mutable_grad();
      if (want_w) gw = w.mutable_grad();
      for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t o = 0; o < g.o; ++o) {
          const double* gp = go.data() + (n * g.o + o) * plane_out;
          for (std::size_t c = 0; c < g.c; ++c) {
            const std::size_t xoff = (n * g.c + c) * plane_in;
            const std::size_t woff = (o * g.c + c) * g.k * g.k;
            for (std::size_t kh = 0; kh < g.k; ++kh) {
              for (std::size_t kw = 0; kw < g.k; ++kw) {
                const double wk = wv[woff + kh * g.k + kw];
                double acc = 0.0;
                for (std::size_t oh = 0; oh < g.oh; ++oh) {
                  const long ih = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.pad);
                  if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
                  const std::size_t row = xoff + static_cast<std::size_t>(ih) * g.w;
                  const double* grow = gp + oh * g.ow;
                  if (want_x && wk != 0.0) {
                    double* gxrow = gx.data() + row;
                    for (std::size_t ow = col_lo[kw]; ow < col_hi[kw]; ++ow) {
                      gxrow[ow * g.stride + kw - g.pad] += wk * grow[ow];
                    }
                  }
                  if (want_w) {
                    const double* xrow = xv.data() + row;
                    for (std::size_t ow = col_lo[kw]; ow < col_hi[kw]; ++ow) {
                      acc += xrow[ow * g.stride + kw - g.pad] * grow[ow];
                    }
                  }
                }
                if (want_w) gw[woff + kh * g.k + kw] += acc;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  const bool row_broadcast = a.shape() != b.shape() && a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1);
  if (!row_broadcast) require_same_shape("add", a, b);
  Tensor out(a.shape(), 0.0, any_grad({&a, &b}));
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.mutable_values();
  const std::size_t m = row_broadcast ? b.size() : a.size();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i % m];
  if (out.requires_grad()) {
    tape.record({a, b}, out, [a, b, out, m]() mutable {
      auto go = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i % m] += go[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape(), 0.0, any_grad({&a, &b}));
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (out.requires_grad()) {
    tape.record({a, b}, out, [a, b, out]() mutable {
      auto go = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        auto bv = b.values();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        auto av = a.values();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
  Tensor out(a.shape(), 0.0, a.requires_grad());
  auto av = a.values();
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * factor;
  if (out.requires_grad()) {
    tape.record({a}, out, [a, out, factor]() mutable {
      auto go = out.grad();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * factor;
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out(x.shape(), 0.0, x.requires_grad());
  auto xv = x.values();
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  if (out.requires_grad()) {
    tape.record({x}, out, [x, out]() mutable {
      auto go = out.grad();
      auto gx = x.mutable_grad();
      auto xv = x.values();
      for (std::size_t i = 0; i < go.size(); ++i) {
        if (xv[i] > 0.0) gx[i] += go[i];
      }
    });
  }
  return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  Tensor out(x.shape(), 0.0, x.requires_grad());
  auto xv = x.values();
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  if (out.requires_grad()) {
    tape.record({x}, out, [x, out]() mutable {
      auto go = out.grad();
      auto ov = out.values();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * ov[i] * (1.0 - ov[i]);
    });
  }
  return out;
}

Tensor max_pool2d(Tape& tape, const Tensor& x, std::size_t window) {
  require_rank("max_pool2d", x, 4, "input");
  if (window == 0 || x.dim(2) < window || x.dim(3) < window) {
    throw ShapeError("max_pool2d: window " + std::to_string(window) + " does not fit input " +
                     shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / window, ow = w / window;
  Tensor out(Shape{n, c, oh, ow}, 0.0, x.requires_grad());
  std::vector<std::size_t> argmax(out.size());
  auto xv = x.values();
  auto ov = out.mutable_values();
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = base + (i * window) * w + j * window;
        for (std::size_t di = 0; di < window; ++di) {
          for (std::size_t dj = 0; dj < window; ++dj) {
            const std::size_t idx = base + (i * window + di) * w + j * window + dj;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        const std::size_t o = (p * oh + i) * ow + j;
        ov[o] = xv[best];
        argmax[o] = best;
      }
    }
  }
  if (out.requires_grad()) {
    tape.record({x}, out, [x, out, argmax = std::move(argmax)]() mutable {
      auto go = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t o = 0; o < go.size(); ++o) gx[argmax[o]] += go[o];
    });
  }
  return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  Tensor out = x.reshaped(std::move(shape));
  out.set_requires_grad(x.requires_grad());
  if (out.requires_grad()) {
    tape.record({x}, out, [x, out]() mutable {
      auto go = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    });
  }
  return out;
}

}  // namespace ops

std::vector<double> log_softmax_rows(std::span<const double> logits, std::size_t classes) {
  std::vector<double> out(logits.size());
  for (std::size_t r = 0; r * classes < logits.size(); ++r) {
    const double* row = logits.data() + r * classes;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < classes; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < classes; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < classes; ++j) out[r * classes + j] = row[j] - lse;
  }
  return out;
}

namespace ops {

Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels) {
  require_rank("softmax_cross_entropy", logits, 2, "logits");
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_string(logits.shape()));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0," +
                       std::to_string(classes) + ")");
    }
  }
  auto logp = log_softmax_rows(logits.values(), classes);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) loss -= logp[i * classes + static_cast<std::size_t>(labels[i])];
  loss /= static_cast<double>(n);
  Tensor out = Tensor::scalar(loss, logits.requires_grad());
  if (out.requires_grad()) {
    std::vector<int> ys(labels.begin(), labels.end());
    tape.record({logits}, out, [logits, out, logp = std::move(logp), ys = std::move(ys), n, classes]() mutable {
      const double g = out.grad()[0] / static_cast<double>(n);
      auto gl = logits.mutable_grad();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < classes; ++j) {
          const double p = std::exp(logp[i * classes + j]);
          const double t = static_cast<std::size_t>(ys[i]) == j ? 1.0 : 0.0;
          gl[i * classes + j] += g * (p - t);
        }
      }
    });
  }
  return out;
}

Tensor kl_divergence(Tape& tape, const Tensor& p_logits, const Tensor& q_logits) {
  require_rank("kl_divergence", p_logits, 2, "p logits");
  require_same_shape("kl_divergence", p_logits, q_logits);
  const std::size_t n = p_logits.dim(0), classes = p_logits.dim(1);
  auto logp = log_softmax_rows(p_logits.values(), classes);
  auto logq = log_softmax_rows(q_logits.values(), classes);
  std::vector<double> row_kl(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double kl = 0.0;
    for (std::size_t j = 0; j < classes; ++j) {
      const std::size_t idx = i * classes + j;
      kl += std::exp(logp[idx]) * (logp[idx] - logq[idx]);
    }
    row_kl[i] = kl;
    total += kl;
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n), any_grad({&p_logits, &q_logits}));
  if (out.requires_grad()) {
    tape.record({p_logits, q_logits}, out,
                [p_logits, q_logits, out, logp = std::move(logp), logq = std::move(logq),
                 row_kl = std::move(row_kl), n, classes]() mutable {
                  const double g = out.grad()[0] / static_cast<double>(n);
                  if (p_logits.requires_grad()) {
                    auto gp = p_logits.mutable_grad();
                    for (std::size_t i = 0; i < n; ++i) {
                      for (std::size_t j = 0; j < classes; ++j) {
                        const std::size_t idx = i * classes + j;
                        const double p = std::exp(logp[idx]);
                        gp[idx] += g * p * ((logp[idx] - logq[idx]) - row_kl[i]);
                      }
                    }
                  }
                  if (q_logits.requires_grad()) {
                    auto gq = q_logits.mutable_grad();
                    for (std::size_t idx = 0; idx < n * classes; ++idx) {
                      gq[idx] += g * (std::exp(logq[idx]) - std::exp(logp[idx]));
                    }
                  }
                });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor out = Tensor::scalar(s, x.requires_grad());
  if (out.requires_grad()) {
    tape.record({x}, out, [x, out]() mutable {
      const double g = out.grad()[0];
      for (auto& v : x.mutable_grad()) v += g;
    });
  }
  return out;
}

Tensor mean(Tape& tape, const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double v : x.values()) s += v;
  const double n = static_cast<double>(x.size());
  Tensor out = Tensor::scalar(s / n, x.requires_grad());
  if (out.requires_grad()) {
    tape.record({x}, out, [x, out, n]() mutable {
      const double g = out.grad()[0] / n;
      for (auto& v : x.mutable_grad()) v += g;
    });
  }
  return out;
}

Tensor clamp(Tape& tape, const Tensor& x, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lower bound exceeds upper bound");
  Tensor out(x.shape(), 0.0, x.requires_grad());
  auto xv = x.values();
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::clamp(xv[i], lo, hi);
  if (out.requires_grad()) {
    tape.record({x}, out, [x, out, lo, hi]() mutable {
      auto go = out.grad();
      auto xv = x.values();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < go.size(); ++i) {
        if (xv[i] >= lo && xv[i] <= hi) gx[i] += go[i];
      }
    });
  }
  return out;
}

}  // namespace ops
}  // namespace harp
