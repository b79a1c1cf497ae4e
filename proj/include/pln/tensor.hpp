#ifndef PLN_TENSOR_HPP
#define PLN_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pln/errors.hpp"

namespace pln {

#ifdef PLN_SINGLE_PRECISION
using real_t = float;
#else
using real_t = double;
#endif

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

/// Dense n-dimensional array, row-major, with an optional gradient buffer.
///
/// Tensor is a cheap handle: copies share the underlying storage. Ops never
/// mutate an input's values; gradients accumulate additively into `grad()`.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->v.assign(numel(t.d_->shape), real_t(0));
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, real_t value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& x : t.d_->v) x = value;
    return t;
  }

  static Tensor from(Shape shape, std::vector<real_t> values, bool requires_grad = false) {
    if (numel(shape) != values.size())
      throw ShapeError("Tensor::from: " + shape_str(shape) + " does not hold " +
                       std::to_string(values.size()) + " values");
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->v = std::move(values);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  /// Seeded uniform fill on [lo, hi).
  static Tensor uniform(Shape shape, real_t lo, real_t hi, std::mt19937_64& rng,
                        bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& x : t.d_->v) x = static_cast<real_t>(dist(rng));
    return t;
  }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  std::size_t size() const { return d_->v.size(); }
  std::size_t ndim() const { return d_->shape.size(); }
  std::size_t dim(std::size_t i) const { return d_->shape[i]; }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool b) { d_->requires_grad = b; }

  std::vector<real_t>& value() { return d_->v; }
  const std::vector<real_t>& value() const { return d_->v; }

  real_t* data() { return d_->v.data(); }
  const real_t* data() const { return d_->v.data(); }

  bool has_grad() const { return !d_->g.empty(); }

  /// Gradient buffer, allocated as zeros on first access.
  std::vector<real_t>& grad() {
    if (d_->g.empty()) d_->g.assign(d_->v.size(), real_t(0));
    return d_->g;
  }
  const std::vector<real_t>& grad() const {
    const_cast<Tensor*>(this)->grad();
    return d_->g;
  }

  void zero_grad() {
    if (!d_->g.empty()) std::fill(d_->g.begin(), d_->g.end(), real_t(0));
  }

  // Row-major element access.
  real_t& at(std::size_t i) { return d_->v[i]; }
  real_t at(std::size_t i) const { return d_->v[i]; }
  real_t& at(std::size_t i, std::size_t j) { return d_->v[i * d_->shape[1] + j]; }
  real_t at(std::size_t i, std::size_t j) const { return d_->v[i * d_->shape[1] + j]; }
  real_t& at(std::size_t i, std::size_t j, std::size_t k) {
    return d_->v[(i * d_->shape[1] + j) * d_->shape[2] + k];
  }
  real_t at(std::size_t i, std::size_t j, std::size_t k) const {
    return d_->v[(i * d_->shape[1] + j) * d_->shape[2] + k];
  }

  bool all_finite() const {
    for (real_t x : d_->v)
      if (!std::isfinite(x)) return false;
    return true;
  }

  /// Storage identity, for aliasing checks in tests.
  const void* id() const { return d_.get(); }

  bool same_shape(const Tensor& o) const { return d_->shape == o.d_->shape; }

 private:
  struct Data {
    Shape shape;
    std::vector<real_t> v;
    std::vector<real_t> g;
    bool requires_grad = false;
  };
  std::shared_ptr<Data> d_;
};

/// Record of one forward pass: op nodes in execution (= topological) order.
///
/// backward() seeds the loss gradient and replays the nodes in reverse,
/// accumulating into every tensor the pass touched. Not safe for concurrent
/// mutation; build one tape per forward pass.
class Tape {
 public:
  void record(std::string op_kind, std::function<void()> backward_fn) {
    nodes_.push_back(Node{std::move(op_kind), std::move(backward_fn)});
  }

  /// Reverse replay from a scalar loss. `seed` is the upstream gradient of the
  /// loss itself (1/batch_size when averaging per-sample losses).
  void backward(Tensor loss, real_t seed = real_t(1)) {
    if (loss.size() != 1) throw ShapeError("Tape::backward: loss must be scalar");
    loss.grad()[0] += seed;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward_fn();
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  std::vector<std::string> op_kinds() const {
    std::vector<std::string> out;
    out.reserve(nodes_.size());
    for (const auto& n : nodes_) out.push_back(n.kind);
    return out;
  }

 private:
  struct Node {
    std::string kind;
    std::function<void()> backward_fn;
  };
  std::vector<Node> nodes_;
};

}  // namespace pln

#endif  // PLN_TENSOR_HPP
