#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle: copies alias the same storage, like a
// framework tensor. Every primitive that consumes a tensor requiring a
// gradient records a node on the result; backward() walks those nodes in
// reverse topological order and then releases them, so each forward pass
// builds its own graph.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gnli/error.hpp"

#if !defined(NDEBUG) && !defined(GNLI_CHECK_FINITE)
#define GNLI_CHECK_FINITE 1
#endif

namespace gnli {

using Real = double;
using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

class Tensor;

namespace detail {

struct TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;
using BackwardFn = std::function<void(const TensorImpl& out, const std::vector<ImplPtr>& inputs)>;

struct Node {
  std::string op;
  std::vector<ImplPtr> inputs;
  BackwardFn backward;
  bool consumed = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<Real> data;
  std::optional<std::vector<Real>> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;

  std::vector<Real>& ensure_grad() {
    if (!grad) grad.emplace(data.size(), Real{0});
    return *grad;
  }
};

// Gradient buffer of an input, or nullptr when it does not take gradients.
inline std::vector<Real>* grad_of(const ImplPtr& p) {
  return p->requires_grad ? &p->ensure_grad() : nullptr;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() : impl_(std::make_shared<detail::TensorImpl>()) { impl_->data.assign(1, Real{0}); }

  static Tensor from(Shape shape, std::vector<Real> data, bool requires_grad = false) {
    if (numel(shape) != data.size()) {
      throw ShapeError("tensor: shape " + to_string(shape) + " holds " + std::to_string(numel(shape)) +
                       " values, got " + std::to_string(data.size()));
    }
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    t.impl_->requires_grad = requires_grad;
    return t;
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return from(std::move(shape), std::vector<Real>(n, Real{0}), requires_grad);
  }
  static Tensor full(Shape shape, Real value) {
    const std::size_t n = numel(shape);
    return from(std::move(shape), std::vector<Real>(n, value));
  }
  static Tensor scalar(Real value, bool requires_grad = false) { return from({}, {value}, requires_grad); }
  static Tensor vector(std::vector<Real> values, bool requires_grad = false) {
    const std::size_t n = values.size();
    return from({n}, std::move(values), requires_grad);
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<const Real> data() const { return impl_->data; }
  /// Raw storage. Mutating a tensor that is part of a live graph invalidates its backward pass.
  std::span<Real> mutable_data() { return impl_->data; }
  Real operator[](std::size_t i) const { return impl_->data[i]; }
  Real item() const {
    if (size() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return impl_->grad.has_value(); }
  /// Accumulated gradient; empty span when none has been written.
  std::span<const Real> grad() const {
    return impl_->grad ? std::span<const Real>(*impl_->grad) : std::span<const Real>();
  }
  std::span<Real> mutable_grad() { return impl_->grad ? std::span<Real>(*impl_->grad) : std::span<Real>(); }
  void zero_grad() {
    if (impl_->grad) std::fill(impl_->grad->begin(), impl_->grad->end(), Real{0});
  }
  void clear_grad() { impl_->grad.reset(); }
  bool is_leaf() const { return impl_->grad_fn == nullptr; }

  /// Deep copy of the values with no graph attached.
  Tensor detach() const { return from(shape(), impl_->data); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const detail::ImplPtr& impl() const { return impl_; }
  static Tensor wrap(detail::ImplPtr p) { return Tensor(std::move(p)); }

 private:
  explicit Tensor(detail::ImplPtr p) : impl_(std::move(p)) {}

  detail::ImplPtr impl_;
};

/// Wraps freshly computed values as the output of primitive `op`.
inline Tensor make_result(std::string_view op, Shape shape, std::vector<Real> data,
                          const std::vector<Tensor>& inputs, detail::BackwardFn backward) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
#if GNLI_CHECK_FINITE
  const auto finite = [](const std::vector<Real>& v) {
    return std::all_of(v.begin(), v.end(), [](Real x) { return std::isfinite(x); });
  };
  if (!finite(impl->data) &&
      std::all_of(inputs.begin(), inputs.end(), [&](const Tensor& t) { return finite(t.impl()->data); })) {
    throw NumericError(std::string(op) + ": non-finite output from finite inputs");
  }
#endif
  const bool needs_grad = detail::grad_mode() && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
                            return t.requires_grad();
                          });
  if (needs_grad) {
    impl->requires_grad = true;
    auto node = std::make_shared<detail::Node>();
    node->op = std::string(op);
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.impl());
    node->backward = std::move(backward);
    impl->grad_fn = std::move(node);
  }
  return Tensor::wrap(std::move(impl));
}

// ---------------------------------------------------------------------------
// Graph

/// One executed primitive, identified by the storage of its operands.
struct GraphOp {
  std::string op;
  std::vector<const void*> inputs;
  const void* output = nullptr;
};

/// Topologically ordered record of the primitives reachable from a root.
class Graph {
 public:
  static Graph trace(const Tensor& root) {
    Graph g;
    std::unordered_set<const detail::TensorImpl*> seen;
    // Iterative post-order DFS so deep recurrences do not exhaust the stack.
    std::vector<std::pair<detail::ImplPtr, std::size_t>> stack;
    if (root.impl()->grad_fn) stack.emplace_back(root.impl(), 0);
    seen.insert(root.impl().get());
    while (!stack.empty()) {
      const detail::ImplPtr impl = stack.back().first;
      const auto& node = impl->grad_fn;
      if (node->consumed) throw NumericError("backward: graph already consumed; run a new forward pass");
      std::size_t& next = stack.back().second;
      if (next < node->inputs.size()) {
        const detail::ImplPtr& child = node->inputs[next++];
        if (child->grad_fn && seen.insert(child.get()).second) stack.emplace_back(child, 0);
        continue;
      }
      g.order_.push_back(impl);
      stack.pop_back();
    }
    g.ops_.reserve(g.order_.size());
    for (const auto& impl : g.order_) {
      GraphOp op{impl->grad_fn->op, {}, impl.get()};
      for (const auto& in : impl->grad_fn->inputs) op.inputs.push_back(in.get());
      g.ops_.push_back(std::move(op));
    }
    return g;
  }

  const std::vector<GraphOp>& ops() const { return ops_; }
  std::size_t size() const { return ops_.size(); }

 private:
  friend void backward(const Tensor& loss);
  std::vector<detail::ImplPtr> order_;
  std::vector<GraphOp> ops_;
};

/// Accumulates d(loss)/dx into every reachable tensor that requires a gradient,
/// then releases the graph.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  }
  const auto& root = loss.impl();
  if (!root->requires_grad) return;
  Graph g = Graph::trace(loss);
  root->ensure_grad()[0] += Real{1};
  for (auto it = g.order_.rbegin(); it != g.order_.rend(); ++it) {
    detail::TensorImpl* impl = it->get();
    auto& node = *impl->grad_fn;
    if (impl->grad) node.backward(*impl, node.inputs);
    node.consumed = true;
    node.inputs.clear();
    node.backward = nullptr;
  }
}

// ---------------------------------------------------------------------------
// Primitives

namespace detail {

inline std::size_t check_axis(std::string_view op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(shape));
  }
  return axis;
}

// Decomposes a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer, extent, inner;
};
inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out = shape;
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  return out;
}

// Numpy-style broadcasting plan: for each output element, the source offset in a and b.
struct Broadcast {
  Shape out;
  bool same = false;
  std::vector<std::size_t> a_index, b_index;
};

inline Broadcast plan_broadcast(std::string_view op, const Shape& a, const Shape& b) {
  Broadcast plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  const std::size_t r = std::max(a.size(), b.size());
  plan.out.resize(r);
  std::vector<std::size_t> a_dims(r, 1), b_dims(r, 1);
  std::copy(a.begin(), a.end(), a_dims.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
  std::copy(b.begin(), b.end(), b_dims.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
  for (std::size_t i = 0; i < r; ++i) {
    if (a_dims[i] == b_dims[i] || b_dims[i] == 1) {
      plan.out[i] = a_dims[i];
    } else if (a_dims[i] == 1) {
      plan.out[i] = b_dims[i];
    } else {
      throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
  }
  std::vector<std::size_t> a_stride(r, 0), b_stride(r, 0);
  for (std::size_t i = r, sa = 1, sb = 1; i-- > 0;) {
    a_stride[i] = a_dims[i] == 1 ? 0 : sa;
    b_stride[i] = b_dims[i] == 1 ? 0 : sb;
    sa *= a_dims[i];
    sb *= b_dims[i];
  }
  const std::size_t n = numel(plan.out);
  plan.a_index.resize(n);
  plan.b_index.resize(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t ao = 0, bo = 0;
  for (std::size_t k = 0; k < n; ++k) {
    plan.a_index[k] = ao;
    plan.b_index[k] = bo;
    for (std::size_t i = r; i-- > 0;) {
      ++idx[i];
      ao += a_stride[i];
      bo += b_stride[i];
      if (idx[i] < plan.out[i]) break;
      ao -= a_stride[i] * idx[i];
      bo -= b_stride[i] * idx[i];
      idx[i] = 0;
    }
  }
  return plan;
}

// Elementwise binary op. `da`/`db` give the partial derivatives given (a, b, out).
template <class Fwd, class DA, class DB>
Tensor binary(std::string_view op, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
  auto plan = std::make_shared<Broadcast>(plan_broadcast(op, a.shape(), b.shape()));
  const std::size_t n = numel(plan->out);
  std::vector<Real> out(n);
  const auto av = a.data();
  const auto bv = b.data();
  if (plan->same) {
    for (std::size_t k = 0; k < n; ++k) out[k] = fwd(av[k], bv[k]);
  } else {
    for (std::size_t k = 0; k < n; ++k) out[k] = fwd(av[plan->a_index[k]], bv[plan->b_index[k]]);
  }
  return make_result(op, plan->out, std::move(out), {a, b},
                     [plan, da, db](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                       const auto& g = *o.grad;
                       const auto& x = in[0]->data;
                       const auto& y = in[1]->data;
                       auto* gx = grad_of(in[0]);
                       auto* gy = grad_of(in[1]);
                       for (std::size_t k = 0; k < g.size(); ++k) {
                         const std::size_t i = plan->same ? k : plan->a_index[k];
                         const std::size_t j = plan->same ? k : plan->b_index[k];
                         if (gx) (*gx)[i] += g[k] * da(x[i], y[j], o.data[k]);
                         if (gy) (*gy)[j] += g[k] * db(x[i], y[j], o.data[k]);
                       }
                     });
}

// Elementwise unary op; `deriv(x, y)` is dy/dx given input x and output y.
template <class Fwd, class Deriv>
Tensor unary(std::string_view op, const Tensor& a, Fwd fwd, Deriv deriv) {
  std::vector<Real> out(a.size());
  const auto av = a.data();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = fwd(av[k]);
  return make_result(op, a.shape(), std::move(out), {a},
                     [deriv](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                       auto* gx = grad_of(in[0]);
                       if (!gx) return;
                       const auto& g = *o.grad;
                       const auto& x = in[0]->data;
                       for (std::size_t k = 0; k < g.size(); ++k) (*gx)[k] += g[k] * deriv(x[k], o.data[k]);
                     });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "add", a, b, [](Real x, Real y) { return x + y; }, [](Real, Real, Real) { return Real{1}; },
      [](Real, Real, Real) { return Real{1}; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "sub", a, b, [](Real x, Real y) { return x - y; }, [](Real, Real, Real) { return Real{1}; },
      [](Real, Real, Real) { return Real{-1}; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "mul", a, b, [](Real x, Real y) { return x * y; }, [](Real, Real y, Real) { return y; },
      [](Real x, Real, Real) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "div", a, b, [](Real x, Real y) { return x / y; }, [](Real, Real y, Real) { return 1 / y; },
      [](Real x, Real y, Real) { return -x / (y * y); });
}

inline Tensor scale(const Tensor& a, Real s) {
  return detail::unary(
      "scale", a, [s](Real x) { return x * s; }, [s](Real, Real) { return s; });
}

inline Tensor scalar_divide(const Tensor& a, Real s) {
  if (s == 0) throw NumericError("scalar_divide: division by zero");
  return detail::unary(
      "scalar_divide", a, [s](Real x) { return x / s; }, [s](Real, Real) { return 1 / s; });
}

inline Tensor abs(const Tensor& a) {
  return detail::unary(
      "abs", a, [](Real x) { return std::abs(x); },
      [](Real x, Real) { return x > 0 ? Real{1} : (x < 0 ? Real{-1} : Real{0}); });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      "sigmoid", a,
      [](Real x) {
        if (x >= 0) return 1 / (1 + std::exp(-x));
        const Real e = std::exp(x);
        return e / (1 + e);
      },
      [](Real, Real y) { return y * (1 - y); });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      "tanh", a, [](Real x) { return std::tanh(x); }, [](Real, Real y) { return 1 - y * y; });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      "relu", a, [](Real x) { return x > 0 ? x : Real{0}; }, [](Real x, Real) { return x > 0 ? Real{1} : Real{0}; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary(
      "log", a, [](Real x) { return std::log(x); }, [](Real x, Real) { return 1 / x; });
}

/// max(x, lo) elementwise; clamped entries pass no gradient.
inline Tensor clamp_min(const Tensor& a, Real lo) {
  return detail::unary(
      "clamp_min", a, [lo](Real x) { return x < lo ? lo : x; }, [lo](Real x, Real) { return x < lo ? Real{0} : Real{1}; });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<Real> out(m * n, Real{0});
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    Real* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real s = av[i * k + p];
      if (s == 0) continue;
      const Real* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  return make_result("matmul", {m, n}, std::move(out), {a, b},
                     [m, k, n](const detail::TensorImpl& o, const std::vector<detail::ImplPtr>& in) {
                       const auto& g = *o.grad;
                       const auto& x = in[0]->data;
                       const auto& y = in[1]->data;
                       if (auto* gx = detail::grad_of(in[0])) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             Real acc = 0;
                             for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * y[p * n + j];
                             (*gx)[i * k + p] += acc;
                           }
                       }
                       if (auto* gy = detail::grad_of(in[1])) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             const Real s = x[i * k + p];
                             if (s == 0) continue;
                             for (std::size_t j = 0; j < n; ++j) (*gy)[p * n + j] += s * g[i * n + j];
                           }
                       }
                     });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<Real> out(a.data().begin(), a.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {a},
                     [](const detail::TensorImpl& o, const std::vector<detail::ImplPtr>& in) {
                       if (auto* gx = detail::grad_of(in[0]))
                         for (std::size_t k = 0; k < gx->size(); ++k) (*gx)[k] += (*o.grad)[k];
                     });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  detail::check_axis("concat", first, axis);
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw ShapeError("concat: shape " + to_string(s) + " does not match " + to_string(first));
    out_shape[axis] += s[axis];
  }
  const auto split = detail::split_at(out_shape, axis);
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis) * split.inner);
  const std::size_t row = split.extent * split.inner;
  std::vector<Real> out(numel(out_shape));
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::size_t off = o * row;
    for (std::size_t j = 0; j < parts.size(); ++j) {
      const auto src = parts[j].data().subspan(o * widths[j], widths[j]);
      std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(off));
      off += widths[j];
    }
  }
  return make_result("concat", out_shape, std::move(out), parts,
                     [split, widths, row](const detail::TensorImpl& o, const std::vector<detail::ImplPtr>& in) {
                       const auto& g = *o.grad;
                       for (std::size_t r = 0; r < split.outer; ++r) {
                         std::size_t off = r * row;
                         for (std::size_t j = 0; j < in.size(); ++j) {
                           if (auto* gx = detail::grad_of(in[j]))
                             for (std::size_t k = 0; k < widths[j]; ++k) (*gx)[r * widths[j] + k] += g[off + k];
                           off += widths[j];
                         }
                       }
                     });
}

/// Entries [begin, end) along `axis`.
inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  detail::check_axis("slice", a.shape(), axis);
  if (begin >= end || end > a.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for axis " + std::to_string(axis) + " of shape " + to_string(a.shape()));
  }
  const auto split = detail::split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  const std::size_t width = (end - begin) * split.inner;
  std::vector<Real> out(split.outer * width);
  const auto av = a.data();
  for (std::size_t o = 0; o < split.outer; ++o) {
    const auto src = av.subspan(o * split.extent * split.inner + begin * split.inner, width);
    std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(o * width));
  }
  return make_result("slice", std::move(out_shape), std::move(out), {a},
                     [split, begin, width](const detail::TensorImpl& o, const std::vector<detail::ImplPtr>& in) {
                       auto* gx = detail::grad_of(in[0]);
                       if (!gx) return;
                       for (std::size_t r = 0; r < split.outer; ++r)
                         for (std::size_t k = 0; k < width; ++k)
                           (*gx)[r * split.extent * split.inner + begin * split.inner + k] += (*o.grad)[r * width + k];
                     });
}

/// Sum over `axis`, which is removed from the result.
inline Tensor sum(const Tensor& a, std::size_t axis) {
  detail::check_axis("sum", a.shape(), axis);
  const auto s = detail::split_at(a.shape(), axis);
  std::vector<Real> out(s.outer * s.inner, Real{0});
  const auto av = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += av[(o * s.extent + e) * s.inner + i];
  return make_result("sum", detail::drop_axis(a.shape(), axis), std::move(out), {a},
                     [s](const detail::TensorImpl& o, const std::vector<detail::ImplPtr>& in) {
                       auto* gx = detail::grad_of(in[0]);
                       if (!gx) return;
                       for (std::size_t r = 0; r < s.outer; ++r)
                         for (std::size_t e = 0; e < s.extent; ++e)
                           for (std::size_t i = 0; i < s.inner; ++i)
                             (*gx)[(r * s.extent + e) * s.inner + i] += (*o.grad)[r * s.inner + i];
                     });
}

/// Sum of every element, as a rank-0 tensor.
inline Tensor sum(const Tensor& a) {
  Real acc = 0;
  for (Real x : a.data()) acc += x;
  return make_result("sum", {}, {acc}, {a}, [](const detail::TensorImpl& o, const std::vector<detail::ImplPtr>& in) {
    if (auto* gx = detail::grad_of(in[0]))
      for (auto& g : *gx) g += (*o.grad)[0];
  });
}

/// Maximum over `axis`. Gradient goes to the first maximal entry only.
inline Tensor max(const Tensor& a, std::size_t axis) {
  detail::check_axis("max", a.shape(), axis);
  const auto s = detail::split_at(a.shape(), axis);
  if (s.extent == 0) throw ShapeError("max: empty axis");
  std::vector<Real> out(s.outer * s.inner);
  std::vector<std::size_t> arg(out.size());
  const auto av = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = o * s.extent * s.inner + i;
      for (std::size_t e = 1; e < s.extent; ++e) {
        const std::size_t k = (o * s.extent + e) * s.inner + i;
        if (av[k] > av[best]) best = k;
      }
      out[o * s.inner + i] = av[best];
      arg[o * s.inner + i] = best;
    }
  return make_result("max", detail::drop_axis(a.shape(), axis), std::move(out), {a},
                     [arg = std::move(arg)](const detail::TensorImpl& o, const std::vector<detail::ImplPtr>& in) {
                       auto* gx = detail::grad_of(in[0]);
                       if (!gx) return;
                       for (std::size_t k = 0; k < arg.size(); ++k) (*gx)[arg[k]] += (*o.grad)[k];
                     });
}

/// Euclidean norm over `axis`. At the zero vector the value and gradient are both 0.
inline Tensor l2norm(const Tensor& a, std::size_t axis) {
  detail::check_axis("l2norm", a.shape(), axis);
  const auto s = detail::split_at(a.shape(), axis);
  std::vector<Real> out(s.outer * s.inner, Real{0});
  const auto av = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      Real acc = 0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const Real x = av[(o * s.extent + e) * s.inner + i];
        acc += x * x;
      }
      out[o * s.inner + i] = std::sqrt(acc);
    }
  return make_result("l2norm", detail::drop_axis(a.shape(), axis), std::move(out), {a},
                     [s](const detail::TensorImpl& o, const std::vector<detail::ImplPtr>& in) {
                       auto* gx = detail::grad_of(in[0]);
                       if (!gx) return;
                       const auto& x = in[0]->data;
                       for (std::size_t r = 0; r < s.outer; ++r)
                         for (std::size_t i = 0; i < s.inner; ++i) {
                           const Real norm = o.data[r * s.inner + i];
                           if (norm == 0) continue;
                           const Real g = (*o.grad)[r * s.inner + i] / norm;
                           for (std::size_t e = 0; e < s.extent; ++e) {
                             const std::size_t k = (r * s.extent + e) * s.inner + i;
                             (*gx)[k] += g * x[k];
                           }
                         }
                     });
}

/// Numerically stable softmax over the last axis.
inline Tensor softmax(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("softmax: needs at least one axis");
  const std::size_t cols = a.shape().back();
  const std::size_t rows = a.size() / cols;
  std::vector<Real> out(a.size());
  const auto av = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* x = av.data() + r * cols;
    Real* y = out.data() + r * cols;
    const Real hi = *std::max_element(x, x + cols);
    Real z = 0;
    for (std::size_t c = 0; c < cols; ++c) z += (y[c] = std::exp(x[c] - hi));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
  }
  return make_result("softmax", a.shape(), std::move(out), {a},
                     [rows, cols](const detail::TensorImpl& o, const std::vector<detail::ImplPtr>& in) {
                       auto* gx = detail::grad_of(in[0]);
                       if (!gx) return;
                       const auto& g = *o.grad;
                       for (std::size_t r = 0; r < rows; ++r) {
                         Real dot = 0;
                         for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * o.data[r * cols + c];
                         for (std::size_t c = 0; c < cols; ++c)
                           (*gx)[r * cols + c] += o.data[r * cols + c] * (g[r * cols + c] - dot);
                       }
                     });
}

/// Rows of a [V, D] table selected by `ids`, giving [ids.size(), D].
inline Tensor gather_rows(const Tensor& table, std::span<const std::int64_t> ids) {
  if (table.rank() != 2) throw ShapeError("gather_rows: table must be rank 2, got " + to_string(table.shape()));
  const std::size_t rows = table.dim(0), cols = table.dim(1);
  std::vector<std::size_t> index(ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] < 0 || static_cast<std::size_t>(ids[k]) >= rows) {
      throw ShapeError("gather_rows: id " + std::to_string(ids[k]) + " out of range [0, " + std::to_string(rows) +
                       ")");
    }
    index[k] = static_cast<std::size_t>(ids[k]);
  }
  std::vector<Real> out(ids.size() * cols);
  const auto tv = table.data();
  for (std::size_t k = 0; k < index.size(); ++k)
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(index[k] * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(k * cols));
  return make_result("gather_rows", {ids.size(), cols}, std::move(out), {table},
                     [index = std::move(index), cols](const detail::TensorImpl& o,
                                                      const std::vector<detail::ImplPtr>& in) {
                       auto* gx = detail::grad_of(in[0]);
                       if (!gx) return;
                       for (std::size_t k = 0; k < index.size(); ++k)
                         for (std::size_t c = 0; c < cols; ++c) (*gx)[index[k] * cols + c] += (*o.grad)[k * cols + c];
                     });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

/// Largest per-coordinate relative error between the analytic gradient of `f`
/// with respect to `wrt` and central differences with step `eps`.
/// Relative error is |a - n| / max(|a|, |n|, 1e-8).
inline Real grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& wrt, Real eps = 1e-5) {
  if (!(eps > 0)) throw ConfigError("grad_check: eps must be positive");
  std::vector<bool> previous;
  for (auto t : wrt) {
    previous.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.clear_grad();
  }
  const Tensor y = f();
  if (y.size() != 1) throw ShapeError("grad_check: function must be scalar-valued, got " + to_string(y.shape()));
  backward(y);
  std::vector<std::vector<Real>> analytic;
  for (const auto& t : wrt) {
    analytic.emplace_back(t.has_grad() ? std::vector<Real>(t.grad().begin(), t.grad().end())
                                       : std::vector<Real>(t.size(), Real{0}));
  }
  Real worst = 0;
  {
    NoGradGuard no_grad;
    for (std::size_t j = 0; j < wrt.size(); ++j) {
      Tensor x = wrt[j];
      auto data = x.mutable_data();
      for (std::size_t k = 0; k < data.size(); ++k) {
        const Real orig = data[k];
        data[k] = orig + eps;
        const Real up = f().item();
        data[k] = orig - eps;
        const Real down = f().item();
        data[k] = orig;
        const Real numeric = (up - down) / (2 * eps);
        const Real a = analytic[j][k];
        const Real denom = std::max({std::abs(a), std::abs(numeric), Real{1e-8}});
        worst = std::max(worst, std::abs(a - numeric) / denom);
      }
    }
  }
  for (std::size_t j = 0; j < wrt.size(); ++j) {
    Tensor t = wrt[j];
    t.clear_grad();
    t.set_requires_grad(previous[j]);
  }
  return worst;
}

inline Real grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, Real eps = 1e-5) {
  return grad_check([&] { return f(x); }, std::vector<Tensor>{x}, eps);
}

}  // namespace gnli
