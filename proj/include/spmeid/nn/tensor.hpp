#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// Every op allocates a node that holds its value, its parents and a closure
// that propagates the node's gradient to them. backward() walks the graph
// once in reverse topological order and then releases it; calling it again
// on the same loss raises StaleTapeError. Leaves created with
// requires_grad=true (parameters) keep their accumulated gradient until
// zero_grad().

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "spmeid/error.hpp"

namespace spmeid::nn {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
struct Node {
  Matrix<T> value;
  Matrix<T> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  bool is_leaf = true;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  /// Adds `g` into grad, allocating it on first use.
  template <class Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (grad.size() == 0) grad = g;
    else grad += g;
  }
};

template <class T>
class BasicTensor {
 public:
  BasicTensor() = default;
  explicit BasicTensor(Matrix<T> value, bool requires_grad = false);

  static BasicTensor zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad = false);
  static BasicTensor scalar(T v);

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  std::vector<Eigen::Index> shape() const { return {rows(), cols()}; }
  std::string shape_str() const;

  const Matrix<T>& value() const { return node_->value; }
  Matrix<T>& mutable_value() { return node_->value; }
  /// Accumulated gradient; zeros of the value's shape if none arrived.
  Matrix<T> grad() const;
  bool has_grad() const { return node_->grad.size() != 0; }
  bool requires_grad() const { return node_->requires_grad; }
  T item() const;

  void zero_grad() { node_->grad.resize(0, 0); }

  /// Runs reverse accumulation from this scalar.
  void backward();

  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

  /// Builds a result node for a custom op. `backward_fn` reads the result's
  /// grad and accumulates into the parents whose requires_grad is set. When
  /// grad recording is disabled or no parent requires grad, the closure is
  /// dropped and the result is a constant.
  static BasicTensor make_result(Matrix<T> value, std::vector<BasicTensor> parents,
                                 std::function<void(Node<T>&)> backward_fn);

 private:
  explicit BasicTensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<Node<T>> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Whether ops record backward closures on this thread.
bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace spmeid::nn
