#include "ibpd/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <Eigen/Core>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

namespace ibpd {

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // null for leaves
};

using BackwardFn =
    std::function<void(const TensorImpl& out, const std::vector<std::shared_ptr<TensorImpl>>& in)>;

struct Node {
  std::uint64_t seq = 0;
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::weak_ptr<TensorImpl> output;
  BackwardFn backward;
};

}  // namespace detail

using detail::Node;
using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_next_seq{0};

void ensure_grad(TensorImpl& t) {
  if (t.grad.size() != t.data.size()) t.grad.assign(t.data.size(), 0.0);
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

// Builds the output impl and, when any input participates in differentiation,
// the node that knows how to push gradients back into the inputs.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<ImplPtr> inputs, detail::BackwardFn backward) {
  check_finite(data, op);
  auto out = std::make_shared<TensorImpl>();
  out->shape = std::move(shape);
  out->data = std::move(data);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in->requires_grad;
  }
  if (needs) {
    out->requires_grad = true;
    auto node = std::make_shared<Node>();
    node->seq = g_next_seq.fetch_add(1);
    node->op = op;
    node->inputs = std::move(inputs);
    node->output = out;
    node->backward = std::move(backward);
    out->node = std::move(node);
  }
  return Tensor(out);
}

std::size_t normalize_axis(int axis, std::size_t ndim) {
  const int n = static_cast<int>(ndim);
  const int a = axis < 0 ? axis + n : axis;
  if (a < 0 || a >= n) {
    throw DimensionError("invalid axis " + std::to_string(axis) + " for tensor of rank " +
                         std::to_string(ndim));
  }
  return static_cast<std::size_t>(a);
}

// ---------------------------------------------------------------------------
// Broadcasting

struct Broadcast {
  enum class Kind { same, a_scalar, b_scalar, b_trailing, a_trailing, general };
  Kind kind = Kind::same;
  Shape out;
  std::size_t a_size = 0, b_size = 0;
  std::vector<std::size_t> a_strides, b_strides;  // per output dim; 0 on broadcast axes
};

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
  Broadcast p;
  p.a_size = shape_size(a);
  p.b_size = shape_size(b);
  const std::size_t nd = std::max(a.size(), b.size());
  p.out.assign(nd, 1);
  for (std::size_t i = 0; i < nd; ++i) {
    const std::size_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    const std::size_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
    }
    p.out[i] = std::max(da, db);
  }
  if (a == b) {
    p.kind = Broadcast::Kind::same;
  } else if (p.b_size == 1 && a == p.out) {
    p.kind = Broadcast::Kind::b_scalar;
  } else if (p.a_size == 1 && b == p.out) {
    p.kind = Broadcast::Kind::a_scalar;
  } else if (a == p.out && is_suffix(b, a)) {
    p.kind = Broadcast::Kind::b_trailing;
  } else if (b == p.out && is_suffix(a, b)) {
    p.kind = Broadcast::Kind::a_trailing;
  } else {
    p.kind = Broadcast::Kind::general;
    auto strides_for = [&](const Shape& s) {
      std::vector<std::size_t> st(nd, 0);
      std::size_t stride = 1;
      for (std::size_t k = 0; k < s.size(); ++k) {
        const std::size_t src = s.size() - 1 - k;
        const std::size_t dst = nd - 1 - k;
        st[dst] = s[src] == 1 ? 0 : stride;
        stride *= s[src];
      }
      return st;
    };
    p.a_strides = strides_for(a);
    p.b_strides = strides_for(b);
  }
  return p;
}

// Calls f(i, ia, ib) for every output element i with the source indices.
template <class F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  const std::size_t n = shape_size(p.out);
  switch (p.kind) {
    case Broadcast::Kind::same:
      for (std::size_t i = 0; i < n; ++i) f(i, i, i);
      return;
    case Broadcast::Kind::b_scalar:
      for (std::size_t i = 0; i < n; ++i) f(i, i, std::size_t{0});
      return;
    case Broadcast::Kind::a_scalar:
      for (std::size_t i = 0; i < n; ++i) f(i, std::size_t{0}, i);
      return;
    case Broadcast::Kind::b_trailing:
      for (std::size_t i = 0; i < n; ++i) f(i, i, i % p.b_size);
      return;
    case Broadcast::Kind::a_trailing:
      for (std::size_t i = 0; i < n; ++i) f(i, i % p.a_size, i);
      return;
    case Broadcast::Kind::general: {
      const std::size_t nd = p.out.size();
      std::vector<std::size_t> idx(nd, 0);
      std::size_t ia = 0, ib = 0;
      for (std::size_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (std::size_t d = nd; d-- > 0;) {
          ++idx[d];
          ia += p.a_strides[d];
          ib += p.b_strides[d];
          if (idx[d] < p.out[d]) break;
          ia -= p.a_strides[d] * idx[d];
          ib -= p.b_strides[d] * idx[d];
          idx[d] = 0;
        }
      }
      return;
    }
  }
}

const char* binary_name(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return "add";
    case BinaryOp::sub: return "sub";
    case BinaryOp::mul: return "mul";
    case BinaryOp::div: return "div";
    case BinaryOp::pow: return "pow";
  }
  return "?";
}

const char* activation_name(Activation k) {
  switch (k) {
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::softplus: return "softplus";
    case Activation::exp: return "exp";
    case Activation::log: return "log";
    case Activation::neg: return "neg";
  }
  return "?";
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Shared driver for unary elementwise ops. `deriv(x, y)` is dy/dx.
template <class Fwd, class Deriv>
Tensor unary(const char* name, const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto& src = a.impl()->data;
  std::vector<double> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = fwd(src[i]);
  return make_result(name, a.shape(), std::move(out), {a.impl()},
                     [deriv](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                       TensorImpl& x = *in[0];
                       if (!x.requires_grad) return;
                       ensure_grad(x);
                       for (std::size_t i = 0; i < o.data.size(); ++i) {
                         x.grad[i] += o.grad[i] * deriv(x.data[i], o.data[i]);
                       }
                     });
}

}  // namespace

// ---------------------------------------------------------------------------
// Shape helpers

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : Tensor(Tensor::scalar(0.0)) {}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("zero-length dimension in shape " + shape_str(shape));
  }
  check_finite(values, "Tensor::from");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
  return from({values.size()}, std::vector<double>(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    v.insert(v.end(), row.begin(), row.end());
  }
  return from({r, c}, std::move(v), requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::size() const { return impl_->data.size(); }

std::size_t Tensor::rows() const {
  if (dim() != 2) throw DimensionError("rows() on tensor of shape " + shape_str(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (dim() != 2) throw DimensionError("cols() on tensor of shape " + shape_str(shape()));
  return shape()[1];
}

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  return impl_->data[row * cols() + col];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }
bool Tensor::is_leaf() const { return impl_->node == nullptr; }

std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::mutable_grad() {
  ensure_grad(*impl_);
  return impl_->grad;
}

void Tensor::zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

Tensor Tensor::detach() const { return from(shape(), impl_->data, false); }

Tensor Tensor::clone() const { return from(shape(), impl_->data, impl_->requires_grad); }

ComputationRecord ComputationRecord::collect(const Tensor& root) {
  ComputationRecord rec;
  std::unordered_set<const Node*> seen;
  std::vector<const TensorImpl*> stack{root.impl().get()};
  while (!stack.empty()) {
    const TensorImpl* t = stack.back();
    stack.pop_back();
    if (!t->node || !seen.insert(t->node.get()).second) continue;
    rec.nodes.push_back(t->node);
    for (const auto& in : t->node->inputs) stack.push_back(in.get());
  }
  std::sort(rec.nodes.begin(), rec.nodes.end(),
            [](const auto& x, const auto& y) { return x->seq < y->seq; });
  return rec;
}

std::vector<std::uint64_t> ComputationRecord::sequence_ids() const {
  std::vector<std::uint64_t> ids;
  ids.reserve(nodes.size());
  for (const auto& n : nodes) ids.push_back(n->seq);
  return ids;
}

void Tensor::backward() const {
  if (size() != 1 || dim() != 0) {
    throw DimensionError("backward() needs a scalar loss, got shape " + shape_str(shape()));
  }
  if (!requires_grad()) return;
  const ComputationRecord rec = ComputationRecord::collect(*this);
  // Interior gradients are per-pass; only leaves accumulate across calls.
  for (const auto& node : rec.nodes) {
    if (auto out = node->output.lock()) out->grad.assign(out->data.size(), 0.0);
  }
  ensure_grad(*impl_);
  impl_->grad[0] += 1.0;
  for (auto it = rec.nodes.rbegin(); it != rec.nodes.rend(); ++it) {
    const auto out = (*it)->output.lock();
    if (!out) continue;
    (*it)->backward(*out, (*it)->inputs);
  }
}

NoGradGuard::NoGradGuard(bool enabled) : previous_(g_grad_enabled) { g_grad_enabled = enabled; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Elementwise binary ops

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  const Broadcast p = plan_broadcast(a.shape(), b.shape());
  const auto& x = a.impl()->data;
  const auto& y = b.impl()->data;
  std::vector<double> out(shape_size(p.out));
  switch (op) {
    case BinaryOp::add:
      for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = x[ia] + y[ib]; });
      break;
    case BinaryOp::sub:
      for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = x[ia] - y[ib]; });
      break;
    case BinaryOp::mul:
      for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = x[ia] * y[ib]; });
      break;
    case BinaryOp::div:
      for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = x[ia] / y[ib]; });
      break;
    case BinaryOp::pow:
      for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        out[i] = std::pow(x[ia], y[ib]);
      });
      break;
  }
  return make_result(
      binary_name(op), p.out, std::move(out), {a.impl(), b.impl()},
      [op, p](const TensorImpl& o, const std::vector<ImplPtr>& in) {
        TensorImpl& A = *in[0];
        TensorImpl& B = *in[1];
        const bool ga = A.requires_grad;
        const bool gb = B.requires_grad;
        if (ga) ensure_grad(A);
        if (gb) ensure_grad(B);
        const auto& g = o.grad;
        switch (op) {
          case BinaryOp::add:
            for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) {
              if (ga) A.grad[ia] += g[i];
              if (gb) B.grad[ib] += g[i];
            });
            break;
          case BinaryOp::sub:
            for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) {
              if (ga) A.grad[ia] += g[i];
              if (gb) B.grad[ib] -= g[i];
            });
            break;
          case BinaryOp::mul:
            for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) {
              if (ga) A.grad[ia] += g[i] * B.data[ib];
              if (gb) B.grad[ib] += g[i] * A.data[ia];
            });
            break;
          case BinaryOp::div:
            for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) {
              const double yb = B.data[ib];
              if (ga) A.grad[ia] += g[i] / yb;
              if (gb) B.grad[ib] -= g[i] * A.data[ia] / (yb * yb);
            });
            break;
          case BinaryOp::pow:
            for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) {
              const double base = A.data[ia];
              const double e = B.data[ib];
              if (ga && e != 0.0) A.grad[ia] += g[i] * e * std::pow(base, e - 1.0);
              if (gb && base > 0.0) B.grad[ib] += g[i] * o.data[i] * std::log(base);
            });
            break;
        }
      });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator-(const Tensor& a) { return neg(a); }
Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor operator+(double a, const Tensor& b) { return add(Tensor::scalar(a), b); }
Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
Tensor operator-(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
Tensor operator/(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }
Tensor operator/(double a, const Tensor& b) { return div(Tensor::scalar(a), b); }

// ---------------------------------------------------------------------------
// Activations

Tensor activation(Activation kind, const Tensor& a) {
  const char* name = activation_name(kind);
  switch (kind) {
    case Activation::sigmoid:
      return unary(name, a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
    case Activation::tanh:
      return unary(name, a, [](double x) { return std::tanh(x); },
                   [](double, double y) { return 1.0 - y * y; });
    case Activation::relu:
      return unary(name, a, [](double x) { return x > 0 ? x : 0.0; },
                   [](double x, double) { return x > 0 ? 1.0 : 0.0; });
    case Activation::softplus:
      return unary(name, a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
    case Activation::exp:
      return unary(name, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
    case Activation::log:
      for (double v : a.data()) {
        if (!(v > 0)) throw DomainError("log of non-positive value " + std::to_string(v));
      }
      return unary(name, a, [](double x) { return std::log(x); },
                   [](double x, double) { return 1.0 / x; });
    case Activation::neg:
      return unary(name, a, [](double x) { return -x; }, [](double, double) { return -1.0; });
  }
  throw DomainError("unknown activation");
}

Tensor lgamma(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0)) throw DomainError("lgamma of non-positive value " + std::to_string(v));
  }
  return unary("lgamma", a, [](double x) { return std::lgamma(x); },
               [](double x, double) { return boost::math::digamma(x); });
}

Tensor digamma(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0)) throw DomainError("digamma of non-positive value " + std::to_string(v));
  }
  return unary("digamma", a, [](double x) { return boost::math::digamma(x); },
               [](double x, double) { return boost::math::trigamma(x); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary("clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor reduce(Reduction kind, const Tensor& a, std::optional<int> axis) {
  const auto& src = a.impl()->data;
  std::size_t outer = 1, len = src.size(), inner = 1;
  Shape out_shape;
  if (axis) {
    const std::size_t ax = normalize_axis(*axis, a.dim());
    const Shape& s = a.shape();
    for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
    len = s[ax];
    for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    out_shape = s;
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  std::vector<double> out(outer * inner, 0.0);
  std::vector<std::size_t> argmax;
  if (kind == Reduction::max) argmax.assign(out.size(), 0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      const std::size_t dst = o * inner + in;
      if (kind == Reduction::max) {
        std::size_t best = 0;
        double bv = src[base];
        for (std::size_t l = 1; l < len; ++l) {
          const double v = src[base + l * inner];
          if (v > bv) {  // strict: ties keep the lowest index
            bv = v;
            best = l;
          }
        }
        out[dst] = bv;
        argmax[dst] = best;
      } else {
        double acc = 0.0;
        for (std::size_t l = 0; l < len; ++l) acc += src[base + l * inner];
        out[dst] = kind == Reduction::mean ? acc / static_cast<double>(len) : acc;
      }
    }
  }
  const char* name = kind == Reduction::sum ? "sum" : kind == Reduction::mean ? "mean" : "max";
  return make_result(
      name, out_shape, std::move(out), {a.impl()},
      [kind, outer, len, inner, argmax = std::move(argmax)](const TensorImpl& o,
                                                            const std::vector<ImplPtr>& in) {
        TensorImpl& x = *in[0];
        if (!x.requires_grad) return;
        ensure_grad(x);
        const double scale = kind == Reduction::mean ? 1.0 / static_cast<double>(len) : 1.0;
        for (std::size_t oi = 0; oi < outer; ++oi) {
          for (std::size_t ii = 0; ii < inner; ++ii) {
            const std::size_t base = oi * len * inner + ii;
            const double g = o.grad[oi * inner + ii];
            if (kind == Reduction::max) {
              x.grad[base + argmax[oi * inner + ii] * inner] += g;
            } else {
              for (std::size_t l = 0; l < len; ++l) x.grad[base + l * inner] += g * scale;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Linear algebra and structural ops

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n);
  MatMap(out.data(), m, n).noalias() = CMatMap(a.impl()->data.data(), m, k) * CMatMap(b.impl()->data.data(), k, n);
  return make_result("matmul", {m, n}, std::move(out), {a.impl(), b.impl()},
                     [m, k, n](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                       TensorImpl& A = *in[0];
                       TensorImpl& B = *in[1];
                       const CMatMap G(o.grad.data(), m, n);
                       if (A.requires_grad) {  // dA += G * B^T
                         ensure_grad(A);
                         MatMap(A.grad.data(), m, k).noalias() += G * CMatMap(B.data.data(), k, n).transpose();
                       }
                       if (B.requires_grad) {  // dB += A^T * G
                         ensure_grad(B);
                         MatMap(B.grad.data(), k, n).noalias() += CMatMap(A.data.data(), m, k).transpose() * G;
                       }
                     });
}

Tensor cumsum(const Tensor& a) {
  if (a.dim() == 0) return reshape(a, {});
  const std::size_t len = a.shape().back();
  const std::size_t rows = a.size() / len;
  const auto& src = a.impl()->data;
  std::vector<double> out(src.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      acc += src[r * len + j];
      out[r * len + j] = acc;
    }
  }
  return make_result("cumsum", a.shape(), std::move(out), {a.impl()},
                     [rows, len](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                       TensorImpl& x = *in[0];
                       if (!x.requires_grad) return;
                       ensure_grad(x);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double acc = 0.0;
                         for (std::size_t j = len; j-- > 0;) {
                           acc += o.grad[r * len + j];
                           x.grad[r * len + j] += acc;
                         }
                       }
                     });
}

Tensor log_softmax(const Tensor& a) {
  if (a.dim() == 0) throw DimensionError("log_softmax needs at least one axis");
  const std::size_t len = a.shape().back();
  const std::size_t rows = a.size() / len;
  const auto& src = a.impl()->data;
  std::vector<double> out(src.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &src[r * len];
    const double mx = *std::max_element(row, row + len);
    double acc = 0.0;
    for (std::size_t j = 0; j < len; ++j) acc += std::exp(row[j] - mx);
    const double lse = mx + std::log(acc);
    for (std::size_t j = 0; j < len; ++j) out[r * len + j] = row[j] - lse;
  }
  return make_result("log_softmax", a.shape(), std::move(out), {a.impl()},
                     [rows, len](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                       TensorImpl& x = *in[0];
                       if (!x.requires_grad) return;
                       ensure_grad(x);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double gsum = 0.0;
                         for (std::size_t j = 0; j < len; ++j) gsum += o.grad[r * len + j];
                         for (std::size_t j = 0; j < len; ++j) {
                           const std::size_t i = r * len + j;
                           x.grad[i] += o.grad[i] - std::exp(o.data[i]) * gsum;
                         }
                       }
                     });
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.dim() == 0 || Shape(p.shape().begin(), p.shape().end() - 1) != lead) {
      throw DimensionError("concat shape mismatch: " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    widths.push_back(p.shape().back());
    total += p.shape().back();
  }
  const std::size_t rows = shape_size(lead);
  std::vector<double> out(rows * total);
  std::vector<ImplPtr> inputs;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& src = parts[k].impl()->data;
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(&src[r * widths[k]], widths[k], &out[r * total + offset]);
    }
    offset += widths[k];
    inputs.push_back(parts[k].impl());
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  return make_result("concat", out_shape, std::move(out), std::move(inputs),
                     [rows, total, widths](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < in.size(); ++k) {
                         TensorImpl& x = *in[k];
                         if (x.requires_grad) {
                           ensure_grad(x);
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t j = 0; j < widths[k]; ++j) {
                               x.grad[r * widths[k] + j] += o.grad[r * total + off + j];
                             }
                           }
                         }
                         off += widths[k];
                       }
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  return make_result("reshape", std::move(shape), a.impl()->data, {a.impl()},
                     [](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                       TensorImpl& x = *in[0];
                       if (!x.requires_grad) return;
                       ensure_grad(x);
                       for (std::size_t i = 0; i < o.grad.size(); ++i) x.grad[i] += o.grad[i];
                     });
}

Tensor straight_through(const Tensor& soft, const Tensor& hard) {
  if (soft.shape() != hard.shape()) {
    throw DimensionError("straight_through shape mismatch: " + shape_str(soft.shape()) + " vs " +
                         shape_str(hard.shape()));
  }
  return make_result("straight_through", soft.shape(), hard.impl()->data, {soft.impl()},
                     [](const TensorImpl& o, const std::vector<ImplPtr>& in) {
                       TensorImpl& x = *in[0];
                       if (!x.requires_grad) return;
                       ensure_grad(x);
                       for (std::size_t i = 0; i < o.grad.size(); ++i) x.grad[i] += o.grad[i];
                     });
}

// ---------------------------------------------------------------------------
// Gradient checking

double gradient_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                      double h) {
  if (!(h > 0)) throw DomainError("gradient_check step must be positive");
  std::vector<Tensor> leaves = params;
  for (auto& p : leaves) p.zero_grad();
  const Tensor loss = f();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& p : leaves) {
    if (p.grad().empty()) {
      analytic.emplace_back(p.size(), 0.0);
    } else {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    }
  }

  NoGradGuard no_grad;
  const double base1 = f().item();
  const double base2 = f().item();
  if (std::memcmp(&base1, &base2, sizeof(double)) != 0) {
    throw NonDeterministicError("function under gradient_check is not deterministic");
  }
  double worst = 0.0;
  for (std::size_t pi = 0; pi < leaves.size(); ++pi) {
    auto values = leaves[pi].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double fp = f().item();
      values[i] = saved - h;
      const double fm = f().item();
      values[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = std::abs(analytic[pi][i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace ibpd
