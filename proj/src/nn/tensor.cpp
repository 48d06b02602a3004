#include "spmeid/nn/tensor.hpp"

#include <fmt/format.h>

#include <unordered_set>

namespace spmeid::nn {

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <class T>
BasicTensor<T>::BasicTensor(Matrix<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <class T>
BasicTensor<T> BasicTensor<T>::zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad) {
  return BasicTensor(Matrix<T>::Zero(rows, cols), requires_grad);
}

template <class T>
BasicTensor<T> BasicTensor<T>::scalar(T v) {
  Matrix<T> m(1, 1);
  m(0, 0) = v;
  return BasicTensor(std::move(m));
}

template <class T>
std::string BasicTensor<T>::shape_str() const {
  return fmt::format("[{}, {}]", rows(), cols());
}

template <class T>
Matrix<T> BasicTensor<T>::grad() const {
  if (node_->grad.size() == 0) return Matrix<T>::Zero(rows(), cols());
  return node_->grad;
}

template <class T>
T BasicTensor<T>::item() const {
  if (rows() != 1 || cols() != 1) throw ShapeError(fmt::format("item(): expected [1, 1], got {}", shape_str()));
  return node_->value(0, 0);
}

template <class T>
BasicTensor<T> BasicTensor<T>::make_result(Matrix<T> value, std::vector<BasicTensor> parents,
                                           std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->is_leaf = false;
  bool any = false;
  for (const auto& p : parents) any = any || p.node_->requires_grad;
  if (any && t_grad_enabled) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_);
    node->backward_fn = std::move(backward_fn);
  }
  return BasicTensor(std::move(node));
}

template <class T>
void BasicTensor<T>::backward() {
  if (rows() != 1 || cols() != 1) throw ShapeError(fmt::format("backward(): loss must be [1, 1], got {}", shape_str()));
  if (node_->consumed) throw StaleTapeError();
  if (!node_->requires_grad) throw Error("backward(): loss does not depend on any parameter");

  // Iterative post-order DFS for a topological order.
  // Owning references keep every interior node alive while parents are released.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack{{node_, 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      const auto& p = n->parents[i++];
      if (p->requires_grad && !p->is_leaf && !seen.count(p.get())) {
        if (p->consumed) throw StaleTapeError();
        seen.insert(p.get());
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(std::move(n));
      stack.pop_back();
    }
  }

  node_->grad = Matrix<T>::Ones(1, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = it->get();
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
    n->backward_fn = nullptr;
    n->parents.clear();
    n->grad.resize(0, 0);
    n->consumed = true;
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace spmeid::nn
