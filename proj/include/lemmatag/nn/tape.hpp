#pragma once

// Reverse-mode automatic differentiation over a linear tape.
//
// Each operation appends a node holding its forward value and a closure that
// propagates the node's gradient to its inputs. Because inputs always precede
// their consumers, walking the tape backwards visits every node after all of
// its consumers.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "lemmatag/errors.hpp"
#include "lemmatag/nn/tensor.hpp"

namespace lemmatag::nn {

struct Var {
  std::size_t index = static_cast<std::size_t>(-1);
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using RowVectorMap = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>;
template <typename T>
using ConstRowVectorMap = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;

template <typename T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor<T> t) { return push(std::move(t.shape), std::move(t.values), false, {}, "constant"); }

  // Leaf whose gradient is retained (used by gradient checks on inputs).
  Var variable(Tensor<T> t) {
    return push(std::move(t.shape), std::move(t.values), grad_enabled_, {}, "variable");
  }

  // Binds a parameter. Gradients accumulate directly into Parameter::grad.
  Var param(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{it->second};
    Node n;
    n.shape = p.value.shape;
    n.param = &p;
    n.needs_grad = grad_enabled_;
    nodes_.push_back(std::move(n));
    const std::size_t idx = nodes_.size() - 1;
    param_nodes_.emplace(&p, idx);
    return Var{idx};
  }

  const Shape& shape(Var v) const { return nodes_.at(v.index).shape; }
  const Buffer<T>& value(Var v) const {
    const Node& n = nodes_.at(v.index);
    return n.param ? n.param->value.values : n.own_value;
  }
  Tensor<T> tensor(Var v) const { return Tensor<T>(shape(v), value(v)); }
  bool requires_grad(Var v) const { return nodes_.at(v.index).needs_grad; }

  // Gradient storage; valid during and after backward() for nodes that
  // require gradients.
  Buffer<T>& grad(Var v) {
    Node& n = nodes_.at(v.index);
    return n.param ? n.param->grad : n.own_grad;
  }

  // Appends a node. `backward` runs only when the node requires gradients.
  Var push(Shape shape, Buffer<T> value, bool needs_grad, std::function<void()> backward, const char* op) {
    if (value.size() != num_elements(shape)) {
      throw ShapeError(std::string(op) + ": value size does not match shape " + to_string(shape));
    }
    if (check_finite && !all_finite(value)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
    Node n;
    n.shape = std::move(shape);
    n.own_value = std::move(value);
    n.needs_grad = needs_grad && grad_enabled_;
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  // Seeds d(loss)/d(loss) = 1 and propagates to every node on the tape.
  void backward(Var loss) {
    if (value(loss).size() != 1) throw ShapeError("backward() needs a scalar loss, got " + to_string(shape(loss)));
    if (!requires_grad(loss)) return;
    for (auto& n : nodes_) {
      if (n.needs_grad && !n.param) n.own_grad.assign(n.own_value.size(), T(0));
    }
    grad(loss)[0] += T(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.needs_grad && n.backward) n.backward();
    }
  }

  std::size_t size() const { return nodes_.size(); }

  bool check_finite = true;

 private:
  struct Node {
    Shape shape;
    Buffer<T> own_value;
    Buffer<T> own_grad;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
    std::function<void()> backward;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
};

}  // namespace lemmatag::nn
