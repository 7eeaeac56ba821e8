#pragma once

#include <Eigen/Core>

#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fgan {

// Row-major dimension list. An empty shape is a rank-0 scalar (size 1).
using Shape = std::vector<Eigen::Index>;

inline Eigen::Index shape_size(const Shape& shape) {
  Eigen::Index n = 1;
  for (Eigen::Index d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: dimensions must be positive");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense n-dimensional array of scalars stored in row-major order, with an
/// optional same-shape gradient buffer. Copies are handles to one shared
/// node, so the tensor an op returned and the one a tape closure captured
/// stay in sync through the reverse pass.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->values = Array::Zero(shape_size(t.node_->shape));
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor constant(Shape shape, Scalar value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    t.values().setConstant(value);
    t.check_finite("constant");
    return t;
  }

  static Tensor scalar(Scalar value, bool requires_grad = false) {
    return constant(Shape{}, value, requires_grad);
  }

  static Tensor from_array(Shape shape, Array values, bool requires_grad = false) {
    if (shape_size(shape) != values.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                  std::to_string(values.size()) + " values");
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(values);
    t.node_->requires_grad = requires_grad;
    t.check_finite("from_array");
    return t;
  }

  static Tensor from_values(Shape shape, const std::vector<Scalar>& values,
                            bool requires_grad = false) {
    Array a(static_cast<Eigen::Index>(values.size()));
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = values[static_cast<std::size_t>(i)];
    return from_array(std::move(shape), std::move(a), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  Eigen::Index rank() const { return static_cast<Eigen::Index>(node().shape.size()); }
  Eigen::Index dim(Eigen::Index i) const { return node().shape.at(static_cast<std::size_t>(i)); }
  Eigen::Index size() const { return node().values.size(); }

  Array& values() { return node().values; }
  const Array& values() const { return node().values; }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool rg) { node().requires_grad = rg; }

  /// Gradient buffer, allocated as zeros on first access.
  Array& grad() {
    ensure_grad();
    return node().grad;
  }
  const Array& grad() const {
    if (!has_grad()) throw std::runtime_error("tensor: gradient was never populated");
    return node().grad;
  }
  bool has_grad() const { return node().grad.size() == size(); }
  void ensure_grad() {
    if (!has_grad()) node().grad = Array::Zero(size());
  }
  void zero_grad() {
    if (has_grad()) node().grad.setZero();
  }
  void accumulate_grad(const Array& g) {
    if (g.size() != size()) throw std::invalid_argument("tensor: gradient size mismatch");
    ensure_grad();
    node().grad += g;
  }

  Scalar item() const {
    if (size() != 1) throw std::invalid_argument("tensor: item() requires a single element");
    return node().values(0);
  }

  /// Value copy that no longer participates in differentiation.
  Tensor detached() const { return from_array(shape(), values(), false); }

  /// Independent deep copy (fresh gradient buffer, same requires_grad flag).
  Tensor clone() const {
    Tensor t = from_array(shape(), values(), requires_grad());
    return t;
  }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  void check_finite(const char* what) const {
    if (!node().values.allFinite())
      throw std::runtime_error(std::string("tensor: non-finite values in ") + what);
  }

 private:
  struct Node {
    Shape shape;
    Array values;
    Array grad;  // empty until ensure_grad()
    bool requires_grad = false;
  };

  Node& node() {
    if (!node_) throw std::runtime_error("tensor: use of default-constructed tensor");
    return *node_;
  }
  const Node& node() const {
    if (!node_) throw std::runtime_error("tensor: use of default-constructed tensor");
    return *node_;
  }

  std::shared_ptr<Node> node_;
};

using TensorXd = Tensor<double>;

}  // namespace fgan
