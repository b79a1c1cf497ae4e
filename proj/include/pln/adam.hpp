#ifndef PLN_ADAM_HPP
#define PLN_ADAM_HPP

#include <cmath>
#include <vector>

#include "pln/params.hpp"
#include "pln/tensor.hpp"

namespace pln {

struct AdamConfig {
  real_t lr = real_t(1e-4);
  real_t beta1 = real_t(0.9);
  real_t beta2 = real_t(0.999);
  real_t eps = real_t(1e-8);
};

/// First/second moment buffers, one pair per parameter, plus the shared step
/// counter. Buffers are created lazily on the first step so a fresh state can
/// be constructed before the store is fully populated.
struct AdamState {
  std::vector<std::vector<real_t>> m;
  std::vector<std::vector<real_t>> v;
  long long t = 0;
};

inline void adam_step(ParamStore& params, AdamState& state, const AdamConfig& cfg) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params.at(i).size(), real_t(0));
      state.v[i].assign(params.at(i).size(), real_t(0));
    }
  }
  if (state.m.size() != params.size())
    throw ContractError("adam state does not match parameter store");

  state.t += 1;
  const real_t bc1 = real_t(1) - std::pow(cfg.beta1, static_cast<real_t>(state.t));
  const real_t bc2 = real_t(1) - std::pow(cfg.beta2, static_cast<real_t>(state.t));

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params.at(i);
    auto& val = p.value();
    auto& g = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < val.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (real_t(1) - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (real_t(1) - cfg.beta2) * g[k] * g[k];
      const real_t mhat = m[k] / bc1;
      const real_t vhat = v[k] / bc2;
      val[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace pln

#endif  // PLN_ADAM_HPP
