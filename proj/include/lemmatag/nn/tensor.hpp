#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "lemmatag/errors.hpp"
#include "lemmatag/nn/random.hpp"

namespace lemmatag::nn {

using Shape = std::vector<std::size_t>;

// Tensor storage. Eigen peels unaligned heads off vectorized loops, so the
// summation order (and the rounding) of a kernel depends on where its operands
// start. Over-aligned buffers make results a function of shapes only, which
// keeps same-seed runs bit-identical within and across processes.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

inline std::size_t num_elements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
struct Tensor {
  Shape shape;
  Buffer<T> values;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), values(num_elements(shape), fill) {}
  Tensor(Shape s, Buffer<T> v) : shape(std::move(s)), values(std::move(v)) {
    if (values.size() != num_elements(shape)) {
      throw ShapeError("tensor of shape " + to_string(shape) + " given " + std::to_string(values.size()) + " values");
    }
  }
  Tensor(Shape s, const std::vector<T>& v) : Tensor(std::move(s), Buffer<T>(v.begin(), v.end())) {}

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
};

template <typename Range>
bool all_finite(const Range& v) {
  for (auto x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// A named trainable tensor together with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Buffer<T> grad;

  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

// Owns all parameters of a model in registration order (which is also the
// checkpoint order). Addresses are stable.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter<T>& add(const std::string& name, Shape shape) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    auto& p = params_.emplace_back();
    p.name = name;
    p.value = Tensor<T>(std::move(shape));
    p.grad.assign(p.value.size(), T(0));
    index_.emplace(name, params_.size() - 1);
    return p;
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  std::size_t size() const { return params_.size(); }
  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  // Copies values by name from another store (any scalar type).
  template <typename U>
  void assign_from(const ParamStore<U>& other) {
    for (auto& p : params_) {
      const auto* q = other.find(p.name);
      if (!q || q->value.shape != p.value.shape) {
        throw ShapeError("parameter '" + p.name + "' missing or shaped differently in source store");
      }
      for (std::size_t i = 0; i < p.size(); ++i) p.value.values[i] = static_cast<T>(q->value.values[i]);
    }
  }

 private:
  std::deque<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Uniform in [-bound, bound].
template <typename T>
void init_uniform(Parameter<T>& p, double bound, SplitMix64& rng) {
  for (auto& v : p.value.values) v = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace lemmatag::nn
