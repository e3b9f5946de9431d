#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ibpd/errors.hpp"

namespace ibpd {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl;
struct Node;
}  // namespace detail

/// Dense row-major float64 tensor with reverse-mode differentiation.
///
/// A Tensor is a cheap handle: copies share storage and graph position.
/// Every op that sees an input with requires_grad() (while grad mode is on)
/// records a node; backward() replays reachable nodes in reverse creation
/// order. The graph lives as long as the tensors that reference it.
class Tensor {
 public:
  Tensor();  // scalar zero, no grad

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size() const;
  std::size_t rows() const;  // shape[0] of a 2-D tensor
  std::size_t cols() const;  // shape[1] of a 2-D tensor

  std::span<const double> data() const;
  // Direct write access. Only meaningful for leaves (parameters, inputs);
  // writing into an interior node does not invalidate recorded backward rules.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat_index) const { return data()[flat_index]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;

  // Empty span until a backward pass has touched this tensor.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Same values, no graph history, no grad.
  Tensor detach() const;
  // Deep copy of values; keeps requires_grad, drops history.
  Tensor clone() const;

  // Backpropagates from this scalar. Leaf gradients accumulate across calls.
  void backward() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  // Internal handle access for op implementations.
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  // `enabled = true` turns recording back on inside an outer no-grad scope.
  explicit NoGradGuard(bool enabled = false);
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

enum class BinaryOp { add, sub, mul, div, pow };
enum class Activation { sigmoid, tanh, relu, softplus, exp, log, neg };
enum class Reduction { sum, mean, max };

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);
Tensor activation(Activation kind, const Tensor& a);
// axis may be negative (counted from the back); nullopt reduces everything to shape [].
Tensor reduce(Reduction kind, const Tensor& a, std::optional<int> axis = std::nullopt);
Tensor matmul(const Tensor& a, const Tensor& b);

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::mul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::div, a, b); }
inline Tensor pow(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::pow, a, b); }

inline Tensor sigmoid(const Tensor& a) { return activation(Activation::sigmoid, a); }
inline Tensor tanh(const Tensor& a) { return activation(Activation::tanh, a); }
inline Tensor relu(const Tensor& a) { return activation(Activation::relu, a); }
inline Tensor softplus(const Tensor& a) { return activation(Activation::softplus, a); }
inline Tensor exp(const Tensor& a) { return activation(Activation::exp, a); }
inline Tensor log(const Tensor& a) { return activation(Activation::log, a); }
inline Tensor neg(const Tensor& a) { return activation(Activation::neg, a); }

inline Tensor sum(const Tensor& a, std::optional<int> axis = std::nullopt) {
  return reduce(Reduction::sum, a, axis);
}
inline Tensor mean(const Tensor& a, std::optional<int> axis = std::nullopt) {
  return reduce(Reduction::mean, a, axis);
}
inline Tensor max(const Tensor& a, std::optional<int> axis = std::nullopt) {
  return reduce(Reduction::max, a, axis);
}

// Special functions needed by the Kumaraswamy/Beta KL.
Tensor lgamma(const Tensor& a);   // log|Gamma|, positive inputs only
Tensor digamma(const Tensor& a);  // positive inputs only

Tensor clamp(const Tensor& a, double lo, double hi);
Tensor cumsum(const Tensor& a);  // along the last axis
Tensor log_softmax(const Tensor& a);  // along the last axis
Tensor concat_last(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& a, Shape shape);
// Forward value is `hard`; gradient flows to `soft` unchanged.
Tensor straight_through(const Tensor& soft, const Tensor& hard);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a);
Tensor operator+(const Tensor& a, double b);
Tensor operator+(double a, const Tensor& b);
Tensor operator-(const Tensor& a, double b);
Tensor operator-(double a, const Tensor& b);
Tensor operator*(const Tensor& a, double b);
Tensor operator*(double a, const Tensor& b);
Tensor operator/(const Tensor& a, double b);
Tensor operator/(double a, const Tensor& b);

/// Ordered list of graph nodes reachable from a root, in creation order.
/// backward() walks it back to front.
struct ComputationRecord {
  std::vector<std::shared_ptr<detail::Node>> nodes;
  static ComputationRecord collect(const Tensor& root);
  std::vector<std::uint64_t> sequence_ids() const;
};

/// Worst relative error |analytic - numeric| / max(1, |numeric|) between
/// backward() gradients and central differences, over every scalar entry of
/// `params`. Throws NonDeterministicError when two evaluations of `f` at the
/// same point disagree.
double gradient_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                      double h = 1e-5);

class NonDeterministicError : public Error {
 public:
  using Error::Error;
};

}  // namespace ibpd
