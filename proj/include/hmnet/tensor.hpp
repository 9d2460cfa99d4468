#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// Storage is a row-major Eigen matrix: the trailing extent is the column
// count and all leading extents are folded into rows, so an n-d tensor and
// its 2-d view share one flat buffer. Rank-0 tensors are stored as 1x1.
//
// Graph construction and backward are single-threaded per graph. Reductions
// inside matmul use Eigen's single-threaded GEMM kernels, whose accumulation
// order depends only on the operand shapes, so results are deterministic.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hmnet/errors.hpp"

namespace hmnet {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Boolean mask laid out like a tensor's storage; true marks a masked position.
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

inline Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

inline std::pair<Index, Index> storage_dims(const Shape& shape) {
  if (shape.empty()) return {1, 1};
  for (Index extent : shape) {
    if (extent <= 0) throw ShapeMismatch("non-positive extent in " + shape_string(shape));
  }
  const Index cols = shape.back();
  return {shape_numel(shape) / cols, cols};
}

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
class BasicTensor {
 public:
  using Matrix = RowMatrix<Scalar>;

  struct Node {
    Shape shape;
    Matrix value;
    Matrix grad;  // empty until a gradient reaches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    void accumulate(const Matrix& g) {
      if (!requires_grad) return;
      if (grad.size() == 0) {
        grad = g;
      } else {
        grad += g;
      }
    }
  };

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, Scalar fill = Scalar(0), bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    const auto [rows, cols] = detail::storage_dims(shape);
    node_->shape = std::move(shape);
    node_->value = Matrix::Constant(rows, cols, fill);
    node_->requires_grad = requires_grad;
  }

  BasicTensor(Shape shape, Matrix values, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    const auto [rows, cols] = detail::storage_dims(shape);
    if (values.rows() * values.cols() != rows * cols) {
      throw ShapeMismatch("values do not fill shape " + shape_string(shape));
    }
    if (values.rows() != rows) values = Eigen::Map<const Matrix>(values.data(), rows, cols).eval();
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  BasicTensor(Shape shape, std::initializer_list<Scalar> flat, bool requires_grad = false)
      : BasicTensor(std::move(shape), Scalar(0), requires_grad) {
    if (static_cast<Index>(flat.size()) != numel()) {
      throw ShapeMismatch(std::to_string(flat.size()) + " values for shape " +
                          shape_string(node_->shape));
    }
    std::copy(flat.begin(), flat.end(), node_->value.data());
  }

  static BasicTensor scalar(Scalar v, bool requires_grad = false) {
    return BasicTensor(Shape{}, v, requires_grad);
  }

  static BasicTensor matrix(Matrix values, bool requires_grad = false) {
    Shape shape{values.rows(), values.cols()};
    return BasicTensor(std::move(shape), std::move(values), requires_grad);
  }

  // Builds an op result; graph edges are recorded only when some input
  // requires a gradient and recording is enabled.
  static BasicTensor make_result(Shape shape, Matrix value,
                                 std::initializer_list<BasicTensor> inputs,
                                 std::function<void(Node&)> backward) {
    return make_result(std::move(shape), std::move(value),
                       std::vector<BasicTensor>(inputs), std::move(backward));
  }

  static BasicTensor make_result(Shape shape, Matrix value, const std::vector<BasicTensor>& inputs,
                                 std::function<void(Node&)> backward) {
    BasicTensor out(std::move(shape), std::move(value));
    if (!detail::grad_mode()) return out;
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const BasicTensor& t) { return t.requires_grad(); });
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->inputs.reserve(inputs.size());
    for (const auto& t : inputs) out.node_->inputs.push_back(t.node_);
    out.node_->backward = std::move(backward);
    return out;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index numel() const { return node_->value.size(); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index extent(Index axis) const { return node_->shape.at(static_cast<std::size_t>(axis)); }

  const Matrix& value() const { return node_->value; }
  // In-place access for optimizers and finite-difference probes.
  Matrix& mutable_value() { return node_->value; }

  bool has_grad() const { return node_->grad.size() != 0; }
  // Zero-filled view when no gradient has arrived yet.
  Matrix grad() const {
    if (has_grad()) return node_->grad;
    return Matrix::Zero(rows(), cols());
  }
  Matrix& mutable_grad() {
    if (!has_grad()) node_->grad = Matrix::Zero(rows(), cols());
    return node_->grad;
  }
  void zero_grad() { node_->grad.resize(0, 0); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_->inputs.empty(); }

  Scalar item() const {
    if (numel() != 1) throw NotScalar("tensor of shape " + shape_string(shape()));
    return node_->value(0, 0);
  }
  Scalar operator()(Index r, Index c) const { return node_->value(r, c); }
  Scalar flat(Index i) const { return node_->value.data()[i]; }

  // Copy of the values with no graph history.
  BasicTensor detach() const { return BasicTensor(node_->shape, node_->value); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using Tensor = BasicTensor<double>;

namespace detail {

template <typename Scalar>
void require_rank2(const BasicTensor<Scalar>& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeMismatch(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
  }
}

template <typename Scalar>
void require_same_shape(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b,
                        const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
  }
}

// Decomposes shape around `axis` into (outer, extent, inner) strides.
inline std::tuple<Index, Index, Index> axis_split(const Shape& shape, Index axis) {
  const auto rank = static_cast<Index>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeMismatch("axis out of range for " + shape_string(shape));
  Index outer = 1;
  Index inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
  for (Index i = axis + 1; i < rank; ++i) inner *= shape[static_cast<std::size_t>(i)];
  return {outer, shape[static_cast<std::size_t>(axis)], inner};
}

template <typename Scalar>
using Node = typename BasicTensor<Scalar>::Node;

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeMismatch("matmul inner extents " + shape_string(a.shape()) + " x " +
                        shape_string(b.shape()));
  }
  using M = typename BasicTensor<Scalar>::Matrix;
  M out = a.value() * b.value();
  return BasicTensor<Scalar>::make_result(
      {a.rows(), b.cols()}, std::move(out), {a, b}, [](detail::Node<Scalar>& self) {
        auto& lhs = *self.inputs[0];
        auto& rhs = *self.inputs[1];
        if (lhs.requires_grad) lhs.accumulate(self.grad * rhs.value.transpose());
        if (rhs.requires_grad) rhs.accumulate(lhs.value.transpose() * self.grad);
      });
}

template <typename Scalar>
BasicTensor<Scalar> transpose(const BasicTensor<Scalar>& a) {
  detail::require_rank2(a, "transpose");
  using M = typename BasicTensor<Scalar>::Matrix;
  M out = a.value().transpose();
  return BasicTensor<Scalar>::make_result({a.cols(), a.rows()}, std::move(out), {a},
                                          [](detail::Node<Scalar>& self) {
                                            self.inputs[0]->accumulate(self.grad.transpose());
                                          });
}

// ---------------------------------------------------------------------------
// Elementwise

// Same-shape addition, or broadcast of a rank-1 `b` along the trailing axis.
template <typename Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  using M = typename BasicTensor<Scalar>::Matrix;
  if (a.shape() == b.shape()) {
    M out = a.value() + b.value();
    return BasicTensor<Scalar>::make_result(a.shape(), std::move(out), {a, b},
                                            [](detail::Node<Scalar>& self) {
                                              self.inputs[0]->accumulate(self.grad);
                                              self.inputs[1]->accumulate(self.grad);
                                            });
  }
  if (b.rank() == 1 && a.rank() >= 1 && b.cols() == a.cols()) {
    M out = a.value().rowwise() + b.value().row(0);
    return BasicTensor<Scalar>::make_result(a.shape(), std::move(out), {a, b},
                                            [](detail::Node<Scalar>& self) {
                                              self.inputs[0]->accumulate(self.grad);
                                              self.inputs[1]->accumulate(self.grad.colwise().sum());
                                            });
  }
  throw ShapeMismatch("add: " + shape_string(a.shape()) + " + " + shape_string(b.shape()));
}

template <typename Scalar>
BasicTensor<Scalar> sub(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  using M = typename BasicTensor<Scalar>::Matrix;
  M out = a.value() - b.value();
  return BasicTensor<Scalar>::make_result(a.shape(), std::move(out), {a, b},
                                          [](detail::Node<Scalar>& self) {
                                            self.inputs[0]->accumulate(self.grad);
                                            self.inputs[1]->accumulate(-self.grad);
                                          });
}

template <typename Scalar>
BasicTensor<Scalar> mul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  using M = typename BasicTensor<Scalar>::Matrix;
  M out = a.value().cwiseProduct(b.value());
  return BasicTensor<Scalar>::make_result(
      a.shape(), std::move(out), {a, b}, [](detail::Node<Scalar>& self) {
        auto& lhs = *self.inputs[0];
        auto& rhs = *self.inputs[1];
        if (lhs.requires_grad) lhs.accumulate(self.grad.cwiseProduct(rhs.value));
        if (rhs.requires_grad) rhs.accumulate(self.grad.cwiseProduct(lhs.value));
      });
}

template <typename Scalar>
BasicTensor<Scalar> scale(const BasicTensor<Scalar>& a, Scalar factor) {
  using M = typename BasicTensor<Scalar>::Matrix;
  M out = a.value() * factor;
  return BasicTensor<Scalar>::make_result(a.shape(), std::move(out), {a},
                                          [factor](detail::Node<Scalar>& self) {
                                            self.inputs[0]->accumulate(self.grad * factor);
                                          });
}

template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& a) {
  using M = typename BasicTensor<Scalar>::Matrix;
  M out = a.value().cwiseMax(Scalar(0));
  return BasicTensor<Scalar>::make_result(
      a.shape(), std::move(out), {a}, [](detail::Node<Scalar>& self) {
        auto& in = *self.inputs[0];
        in.accumulate((in.value.array() > Scalar(0)).select(self.grad.array(), Scalar(0)).matrix());
      });
}

// Backward uses the subgradient +1 at the kink x == 0.
template <typename Scalar>
BasicTensor<Scalar> abs(const BasicTensor<Scalar>& a) {
  using M = typename BasicTensor<Scalar>::Matrix;
  M out = a.value().cwiseAbs();
  return BasicTensor<Scalar>::make_result(
      a.shape(), std::move(out), {a}, [](detail::Node<Scalar>& self) {
        auto& in = *self.inputs[0];
        M sign = in.value.unaryExpr([](Scalar v) {
          return v >= Scalar(0) ? Scalar(1) : Scalar(-1);
        });
        in.accumulate(self.grad.cwiseProduct(sign));
      });
}

template <typename Scalar>
BasicTensor<Scalar> operator+(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  return add(a, b);
}
template <typename Scalar>
BasicTensor<Scalar> operator-(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  return sub(a, b);
}
template <typename Scalar>
BasicTensor<Scalar> operator*(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  return mul(a, b);
}
template <typename Scalar>
BasicTensor<Scalar> operator*(Scalar factor, const BasicTensor<Scalar>& a) {
  return scale(a, factor);
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
BasicTensor<Scalar> sum(const BasicTensor<Scalar>& a) {
  using M = typename BasicTensor<Scalar>::Matrix;
  M out = M::Constant(1, 1, a.value().sum());
  return BasicTensor<Scalar>::make_result(
      {}, std::move(out), {a}, [](detail::Node<Scalar>& self) {
        auto& in = *self.inputs[0];
        in.accumulate(M::Constant(in.value.rows(), in.value.cols(), self.grad(0, 0)));
      });
}

template <typename Scalar>
BasicTensor<Scalar> mean(const BasicTensor<Scalar>& a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.numel()));
}

// ---------------------------------------------------------------------------
// Normalization

namespace detail {

// The additive constant standing in for -infinity under a mask.
template <typename Scalar>
constexpr Scalar kMaskFill = Scalar(-1e9);

template <typename Scalar>
BasicTensor<Scalar> softmax_impl(const BasicTensor<Scalar>& x, Index axis, const Mask* mask) {
  using M = typename BasicTensor<Scalar>::Matrix;
  if (mask && (mask->rows() != x.rows() || mask->cols() != x.cols())) {
    throw ShapeMismatch("softmax mask does not match " + shape_string(x.shape()));
  }
  const auto [outer, extent, inner] = axis_split(x.shape(), axis);
  M out(x.rows(), x.cols());
  const Scalar* in = x.value().data();
  Scalar* dst = out.data();
  const bool* masked = mask ? mask->data() : nullptr;
  for (Index o = 0; o < outer; ++o) {
    for (Index i = 0; i < inner; ++i) {
      const Index base = o * extent * inner + i;
      Scalar max_v = -std::numeric_limits<Scalar>::infinity();
      bool any_open = false;
      for (Index k = 0; k < extent; ++k) {
        const Index at = base + k * inner;
        const bool m = masked && masked[at];
        any_open = any_open || !m;
        max_v = std::max(max_v, in[at] + (m ? kMaskFill<Scalar> : Scalar(0)));
      }
      if (!any_open) throw AllMasked("every position along the softmax axis is masked");
      Scalar total = 0;
      for (Index k = 0; k < extent; ++k) {
        const Index at = base + k * inner;
        const bool m = masked && masked[at];
        dst[at] = std::exp(in[at] + (m ? kMaskFill<Scalar> : Scalar(0)) - max_v);
        total += dst[at];
      }
      for (Index k = 0; k < extent; ++k) {
        const Index at = base + k * inner;
        dst[at] = (masked && masked[at]) ? Scalar(0) : dst[at] / total;
      }
    }
  }
  return BasicTensor<Scalar>::make_result(
      x.shape(), std::move(out), {x},
      [outer = outer, extent = extent, inner = inner](detail::Node<Scalar>& self) {
        M dx(self.value.rows(), self.value.cols());
        const Scalar* y = self.value.data();
        const Scalar* dy = self.grad.data();
        Scalar* g = dx.data();
        for (Index o = 0; o < outer; ++o) {
          for (Index i = 0; i < inner; ++i) {
            const Index base = o * extent * inner + i;
            Scalar dot = 0;
            for (Index k = 0; k < extent; ++k) dot += y[base + k * inner] * dy[base + k * inner];
            for (Index k = 0; k < extent; ++k) {
              const Index at = base + k * inner;
              g[at] = y[at] * (dy[at] - dot);
            }
          }
        }
        self.inputs[0]->accumulate(dx);
      });
}

}  // namespace detail

template <typename Scalar>
BasicTensor<Scalar> softmax(const BasicTensor<Scalar>& x, Index axis = -1) {
  return detail::softmax_impl(x, axis, nullptr);
}

template <typename Scalar>
BasicTensor<Scalar> softmax(const BasicTensor<Scalar>& x, Index axis, const Mask& mask) {
  return detail::softmax_impl(x, axis, &mask);
}

// Standardizes along the trailing axis (biased variance), then applies
// gain * x_hat + bias.
template <typename Scalar>
BasicTensor<Scalar> layer_norm(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& gain,
                               const BasicTensor<Scalar>& bias, Scalar eps = Scalar(1e-5)) {
  using M = typename BasicTensor<Scalar>::Matrix;
  if (x.rank() < 1 || gain.rank() != 1 || bias.rank() != 1 || gain.cols() != x.cols() ||
      bias.cols() != x.cols()) {
    throw ShapeMismatch("layer_norm " + shape_string(x.shape()) + " with gain " +
                        shape_string(gain.shape()) + " bias " + shape_string(bias.shape()));
  }
  if (!(eps > Scalar(0))) throw std::invalid_argument("layer_norm eps must be positive");
  const Index d = x.cols();
  const auto mu = x.value().rowwise().mean().eval();
  M centered = x.value().colwise() - mu;
  const auto var = (centered.array().square().rowwise().sum() / static_cast<Scalar>(d)).eval();
  const auto inv_std = (var + eps).rsqrt().eval();
  M x_hat = centered.array().colwise() * inv_std;
  M out = (x_hat.array().rowwise() * gain.value().row(0).array()).rowwise() +
          bias.value().row(0).array();
  return BasicTensor<Scalar>::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [x_hat = std::move(x_hat), inv_std, d](detail::Node<Scalar>& self) {
        auto& in = *self.inputs[0];
        auto& g = *self.inputs[1];
        auto& b = *self.inputs[2];
        if (g.requires_grad) g.accumulate(self.grad.cwiseProduct(x_hat).colwise().sum());
        if (b.requires_grad) b.accumulate(self.grad.colwise().sum());
        if (in.requires_grad) {
          M dx_hat = self.grad.array().rowwise() * g.value.row(0).array();
          const auto mean_dx = dx_hat.rowwise().mean().eval();
          const auto mean_dx_xhat =
              (dx_hat.cwiseProduct(x_hat).rowwise().sum() / static_cast<Scalar>(d)).eval();
          M dx = dx_hat;
          dx.colwise() -= mean_dx;
          dx -= (x_hat.array().colwise() * mean_dx_xhat.array()).matrix();
          dx = dx.array().colwise() * inv_std;
          in.accumulate(dx);
        }
      });
}

// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
template <typename Scalar>
BasicTensor<Scalar> cross_entropy(const BasicTensor<Scalar>& logits,
                                  std::span<const Index> targets) {
  using M = typename BasicTensor<Scalar>::Matrix;
  detail::require_rank2(logits, "cross_entropy");
  if (static_cast<Index>(targets.size()) != logits.rows()) {
    throw ShapeMismatch("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                        std::to_string(logits.rows()) + " rows");
  }
  const Index n = logits.rows();
  M probs(n, logits.cols());
  Scalar total = 0;
  std::vector<Index> tgt(targets.begin(), targets.end());
  for (Index r = 0; r < n; ++r) {
    if (tgt[r] < 0 || tgt[r] >= logits.cols()) throw IdOutOfRange("cross_entropy target");
    const auto row = logits.value().row(r);
    const Scalar max_v = row.maxCoeff();
    const auto shifted = (row.array() - max_v).eval();
    const Scalar log_z = std::log(shifted.exp().sum());
    total -= shifted(tgt[r]) - log_z;
    probs.row(r) = (shifted - log_z).exp().matrix();
  }
  M out = M::Constant(1, 1, total / static_cast<Scalar>(n));
  return BasicTensor<Scalar>::make_result(
      {}, std::move(out), {logits},
      [probs = std::move(probs), tgt = std::move(tgt), n](detail::Node<Scalar>& self) {
        M dlogits = probs;
        for (Index r = 0; r < n; ++r) dlogits(r, tgt[r]) -= Scalar(1);
        self.inputs[0]->accumulate(dlogits * (self.grad(0, 0) / static_cast<Scalar>(n)));
      });
}

// ---------------------------------------------------------------------------
// Structural

// Concatenates along the trailing axis. Inputs share their leading extents.
template <typename Scalar>
BasicTensor<Scalar> concat_cols(const std::vector<BasicTensor<Scalar>>& parts) {
  using M = typename BasicTensor<Scalar>::Matrix;
  if (parts.empty()) throw ShapeMismatch("concat_cols of nothing");
  const Index rows = parts.front().rows();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows || p.rank() != parts.front().rank()) {
      throw ShapeMismatch("concat_cols leading extents differ: " + shape_string(p.shape()) +
                          " vs " + shape_string(parts.front().shape()));
    }
    total += p.cols();
  }
  M out(rows, total);
  std::vector<Index> widths;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    widths.push_back(p.cols());
    at += p.cols();
  }
  Shape shape = parts.front().shape();
  if (shape.empty()) shape = {total};
  shape.back() = total;
  return BasicTensor<Scalar>::make_result(std::move(shape), std::move(out), parts,
                                          [widths = std::move(widths)](detail::Node<Scalar>& self) {
                                            Index offset = 0;
                                            for (std::size_t i = 0; i < widths.size(); ++i) {
                                              auto& in = *self.inputs[i];
                                              if (in.requires_grad) {
                                                in.accumulate(self.grad.middleCols(offset, widths[i]));
                                              }
                                              offset += widths[i];
                                            }
                                          });
}

// Stacks matrices (or rank-1 rows) vertically into a matrix.
template <typename Scalar>
BasicTensor<Scalar> concat_rows(const std::vector<BasicTensor<Scalar>>& parts) {
  using M = typename BasicTensor<Scalar>::Matrix;
  if (parts.empty()) throw ShapeMismatch("concat_rows of nothing");
  const Index cols = parts.front().cols();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols || p.rank() > 2 || p.rank() < 1) {
      throw ShapeMismatch("concat_rows widths differ: " + shape_string(p.shape()));
    }
    total += p.rows();
  }
  M out(total, cols);
  std::vector<Index> heights;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    heights.push_back(p.rows());
    at += p.rows();
  }
  return BasicTensor<Scalar>::make_result({total, cols}, std::move(out), parts,
                                          [heights = std::move(heights)](detail::Node<Scalar>& self) {
                                            Index offset = 0;
                                            for (std::size_t i = 0; i < heights.size(); ++i) {
                                              auto& in = *self.inputs[i];
                                              if (in.requires_grad) {
                                                in.accumulate(self.grad.middleRows(offset, heights[i]));
                                              }
                                              offset += heights[i];
                                            }
                                          });
}

template <typename Scalar>
BasicTensor<Scalar> slice_rows(const BasicTensor<Scalar>& x, Index begin, Index count) {
  using M = typename BasicTensor<Scalar>::Matrix;
  detail::require_rank2(x, "slice_rows");
  if (begin < 0 || count <= 0 || begin + count > x.rows()) {
    throw ShapeMismatch("slice_rows out of range on " + shape_string(x.shape()));
  }
  M out = x.value().middleRows(begin, count);
  return BasicTensor<Scalar>::make_result(
      {count, x.cols()}, std::move(out), {x}, [begin, count](detail::Node<Scalar>& self) {
        auto& in = *self.inputs[0];
        M g = M::Zero(in.value.rows(), in.value.cols());
        g.middleRows(begin, count) = self.grad;
        in.accumulate(g);
      });
}

template <typename Scalar>
BasicTensor<Scalar> slice_cols(const BasicTensor<Scalar>& x, Index begin, Index count) {
  using M = typename BasicTensor<Scalar>::Matrix;
  detail::require_rank2(x, "slice_cols");
  if (begin < 0 || count <= 0 || begin + count > x.cols()) {
    throw ShapeMismatch("slice_cols out of range on " + shape_string(x.shape()));
  }
  M out = x.value().middleCols(begin, count);
  return BasicTensor<Scalar>::make_result(
      {x.rows(), count}, std::move(out), {x}, [begin, count](detail::Node<Scalar>& self) {
        auto& in = *self.inputs[0];
        M g = M::Zero(in.value.rows(), in.value.cols());
        g.middleCols(begin, count) = self.grad;
        in.accumulate(g);
      });
}

template <typename Scalar>
BasicTensor<Scalar> reshape(const BasicTensor<Scalar>& x, Shape shape) {
  using M = typename BasicTensor<Scalar>::Matrix;
  if (shape_numel(shape) != x.numel()) {
    throw ShapeMismatch("reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  const auto [rows, cols] = detail::storage_dims(shape);
  M out = Eigen::Map<const M>(x.value().data(), rows, cols);
  return BasicTensor<Scalar>::make_result(std::move(shape), std::move(out), {x},
                                          [](detail::Node<Scalar>& self) {
                                            auto& in = *self.inputs[0];
                                            in.accumulate(Eigen::Map<const M>(
                                                self.grad.data(), in.value.rows(), in.value.cols()));
                                          });
}

// Row lookup table[ids]; gradients scatter-add back into the table.
template <typename Scalar>
BasicTensor<Scalar> gather_rows(const BasicTensor<Scalar>& table, std::span<const Index> ids) {
  using M = typename BasicTensor<Scalar>::Matrix;
  detail::require_rank2(table, "gather_rows");
  if (ids.empty()) throw ShapeMismatch("gather_rows with no ids");
  M out(static_cast<Index>(ids.size()), table.cols());
  std::vector<Index> rows(ids.begin(), ids.end());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= table.rows()) {
      throw IdOutOfRange("row " + std::to_string(rows[i]) + " of table with " +
                         std::to_string(table.rows()) + " rows");
    }
    out.row(static_cast<Index>(i)) = table.value().row(rows[i]);
  }
  Shape shape{static_cast<Index>(rows.size()), table.cols()};
  return BasicTensor<Scalar>::make_result(
      std::move(shape), std::move(out), {table},
      [rows = std::move(rows)](detail::Node<Scalar>& self) {
        auto& in = *self.inputs[0];
        M g = M::Zero(in.value.rows(), in.value.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) g.row(rows[i]) += self.grad.row(static_cast<Index>(i));
        in.accumulate(g);
      });
}

// Inverted dropout: kept entries are scaled by 1/(1-p) so eval mode is the
// identity. The keep decision consumes one 64-bit draw per element.
template <typename Scalar, typename Rng>
BasicTensor<Scalar> dropout(const BasicTensor<Scalar>& x, Scalar p, Rng& rng, bool training) {
  using M = typename BasicTensor<Scalar>::Matrix;
  if (!training || p <= Scalar(0)) return x;
  if (p >= Scalar(1)) throw std::invalid_argument("dropout probability must be < 1");
  const Scalar keep_scale = Scalar(1) / (Scalar(1) - p);
  M keep(x.rows(), x.cols());
  for (Index i = 0; i < keep.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    keep.data()[i] = u < static_cast<double>(p) ? Scalar(0) : keep_scale;
  }
  M out = x.value().cwiseProduct(keep);
  return BasicTensor<Scalar>::make_result(x.shape(), std::move(out), {x},
                                          [keep = std::move(keep)](detail::Node<Scalar>& self) {
                                            self.inputs[0]->accumulate(self.grad.cwiseProduct(keep));
                                          });
}

// ---------------------------------------------------------------------------
// Differentiation

// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a
// gradient. Interior gradients are recomputed from zero on each call, so
// calling twice on one graph doubles the leaf gradients.
template <typename Scalar>
void backward(const BasicTensor<Scalar>& loss) {
  using NodeT = detail::Node<Scalar>;
  using M = typename BasicTensor<Scalar>::Matrix;
  if (loss.numel() != 1) throw NotScalar("backward on shape " + shape_string(loss.shape()));
  if (!loss.requires_grad()) return;

  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodeT* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (NodeT* node : order) {
    if (!node->inputs.empty()) node->grad = M::Zero(node->value.rows(), node->value.cols());
  }
  loss.node()->accumulate(M::Constant(1, 1, Scalar(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

// Worst elementwise relative error between the backward gradient of f at x
// and central differences (f(x+eps e_i) - f(x-eps e_i)) / (2 eps). The
// denominator is max(|analytic|, |numeric|, 1e-8). Non-finite evaluations
// report infinity. `entries` restricts the probe to the given flat indices;
// empty means all. x's gradient is restored afterwards.
template <typename Scalar, typename F>
Scalar grad_check(F&& f, BasicTensor<Scalar>& x, Scalar eps,
                  std::span<const Index> entries = {}) {
  using M = typename BasicTensor<Scalar>::Matrix;
  if (!(eps > Scalar(0))) throw std::invalid_argument("grad_check eps must be positive");
  if (!x.requires_grad()) throw std::invalid_argument("grad_check input must require grad");
  const M saved_grad = x.has_grad() ? x.grad() : M();
  x.zero_grad();
  const Scalar inf = std::numeric_limits<Scalar>::infinity();

  const BasicTensor<Scalar> loss = f(x);
  if (!std::isfinite(loss.item())) return inf;
  backward(loss);
  const M analytic = x.grad();

  std::vector<Index> probe(entries.begin(), entries.end());
  if (probe.empty()) {
    probe.resize(static_cast<std::size_t>(x.numel()));
    std::iota(probe.begin(), probe.end(), Index{0});
  }

  Scalar worst = 0;
  {
    NoGradGuard no_grad;
    Scalar* data = x.mutable_value().data();
    for (Index i : probe) {
      const Scalar original = data[i];
      data[i] = original + eps;
      const Scalar plus = f(x).item();
      data[i] = original - eps;
      const Scalar minus = f(x).item();
      data[i] = original;
      if (!std::isfinite(plus) || !std::isfinite(minus)) return inf;
      const Scalar numeric = (plus - minus) / (Scalar(2) * eps);
      const Scalar a = analytic.data()[i];
      const Scalar denom = std::max({std::abs(a), std::abs(numeric), Scalar(1e-8)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  x.zero_grad();
  if (saved_grad.size() != 0) x.mutable_grad() = saved_grad;
  return worst;
}

}  // namespace hmnet
