#ifndef PLN_PARAMS_HPP
#define PLN_PARAMS_HPP

#include <cmath>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "pln/tensor.hpp"

namespace pln {

/// Named trainable tensors in a stable insertion order. The order is part of
/// the model contract: parameter creation consumes RNG draws, so two models
/// built from the same seed and config hold bit-identical weights.
class ParamStore {
 public:
  /// Uniform init on [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Tensor create(const std::string& name, Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const real_t bound = real_t(1) / std::sqrt(static_cast<real_t>(fan_in));
    Tensor t = Tensor::uniform(std::move(shape), -bound, bound, rng);
    return add(name, t);
  }

  Tensor create_zeros(const std::string& name, Shape shape) {
    return add(name, Tensor::zeros(std::move(shape)));
  }

  Tensor add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    index_.emplace(name, order_.size());
    order_.push_back(name);
    tensors_.push_back(t);
    return t;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return tensors_[it->second];
  }

  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }
  Tensor at(std::size_t i) const { return tensors_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  void zero_grads() {
    for (auto& t : tensors_) t.zero_grad();
  }

 private:
  std::vector<std::string> order_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace pln

#endif  // PLN_PARAMS_HPP
