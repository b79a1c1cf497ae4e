#ifndef PLN_GRADCHECK_HPP
#define PLN_GRADCHECK_HPP

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pln/lstm.hpp"
#include "pln/ops.hpp"
#include "pln/tensor.hpp"

namespace pln {

/// A named differentiable program plus the tensors whose gradients we verify.
/// `build` must be a pure function of the current tensor values so it can be
/// replayed for finite differencing.
struct GradCheckCase {
  std::string name;
  std::vector<Tensor> wrt;
  std::function<Tensor(Tape*)> build;
};

struct GradCheckReport {
  std::string name;
  real_t max_rel_err = 0;
  std::size_t checked = 0;
};

/// Central differences against the tape gradient.
/// rel_err = |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
inline GradCheckReport run_grad_check(const GradCheckCase& c, real_t h = real_t(1e-5)) {
  for (const Tensor& t : c.wrt) const_cast<Tensor&>(t).zero_grad();
  Tape tape;
  Tensor loss = c.build(&tape);
  if (loss.size() != 1) throw ContractError("grad check case must produce a scalar: " + c.name);
  tape.backward(loss);

  GradCheckReport rep{c.name, 0, 0};
  for (const Tensor& t : c.wrt) {
    Tensor tm = t;
    for (std::size_t k = 0; k < tm.size(); ++k) {
      const real_t ad = tm.grad()[k];
      const real_t saved = tm.value()[k];
      tm.value()[k] = saved + h;
      const real_t fp = c.build(nullptr).at(0);
      tm.value()[k] = saved - h;
      const real_t fm = c.build(nullptr).at(0);
      tm.value()[k] = saved;
      const real_t fd = (fp - fm) / (2 * h);
      const real_t rel = std::abs(ad - fd) / std::max(real_t(1e-8), std::abs(ad) + std::abs(fd));
      if (rel > rep.max_rel_err) rep.max_rel_err = rel;
      ++rep.checked;
    }
  }
  return rep;
}

namespace detail {

inline Tensor randn_like_shape(Shape shape, std::mt19937_64& rng, real_t lo = -1, real_t hi = 1) {
  Tensor t = Tensor::uniform(std::move(shape), lo, hi, rng);
  t.set_requires_grad(true);
  return t;
}

}  // namespace detail

/// One case per primitive op (plus the LSTM cell as a composite). Shapes are
/// small; values are seeded so reruns are bit-identical.
inline std::vector<GradCheckCase> op_grad_cases(std::uint64_t seed) {
  using namespace ops;
  using pln::detail::randn_like_shape;
  std::mt19937_64 rng(seed);
  std::vector<GradCheckCase> cases;

  {
    Tensor x = randn_like_shape({2, 3}, rng), W = randn_like_shape({3, 4}, rng),
           b = randn_like_shape({4}, rng);
    cases.push_back({"affine", {x, W, b}, [=](Tape* t) { return sum_all(t, affine(t, x, W, b)); }});
  }
  {
    Tensor x = randn_like_shape({2, 3}, rng), W = randn_like_shape({3, 2}, rng);
    cases.push_back({"matmul", {x, W}, [=](Tape* t) { return sum_all(t, matmul(t, x, W)); }});
  }
  {
    Tensor x = randn_like_shape({2, 5, 5}, rng), k = randn_like_shape({3, 2, 3, 3}, rng),
           b = randn_like_shape({3}, rng);
    // Squaring the output exercises nonuniform upstream gradients.
    cases.push_back({"conv2d", {x, k, b}, [=](Tape* t) {
                       Tensor y = conv2d(t, x, k, b, 1);
                       return sum_all(t, elementwise(t, y, y, Elem::Mul));
                     }});
  }
  {
    Tensor x = randn_like_shape({2, 4, 4}, rng);
    cases.push_back({"pool2d_max", {x}, [=](Tape* t) {
                       return sum_all(t, pool2d(t, x, Pool::Max, 2, 2));
                     }});
  }
  {
    Tensor x = randn_like_shape({2, 4, 4}, rng);
    cases.push_back({"pool2d_mean", {x}, [=](Tape* t) {
                       Tensor y = pool2d(t, x, Pool::Mean, 2, 2);
                       return sum_all(t, elementwise(t, y, y, Elem::Mul));
                     }});
  }
  {
    Tensor x = randn_like_shape({2, 3, 3}, rng);
    cases.push_back({"upsample2x", {x}, [=](Tape* t) {
                       Tensor y = upsample2x(t, x);
                       return sum_all(t, elementwise(t, y, y, Elem::Mul));
                     }});
  }
  {
    Tensor a = randn_like_shape({3, 4}, rng), b = randn_like_shape({3, 4}, rng);
    cases.push_back({"elementwise_mul", {a, b}, [=](Tape* t) {
                       return sum_all(t, elementwise(t, a, b, Elem::Mul));
                     }});
  }
  {
    Tensor a = randn_like_shape({3, 4}, rng), b = randn_like_shape({3, 4}, rng);
    cases.push_back({"elementwise_add", {a, b}, [=](Tape* t) {
                       Tensor y = elementwise(t, a, b, Elem::Add);
                       return sum_all(t, elementwise(t, y, y, Elem::Mul));
                     }});
  }
  {
    Tensor a = randn_like_shape({3, 4}, rng), b = randn_like_shape({3, 4}, rng);
    cases.push_back({"elementwise_max", {a, b}, [=](Tape* t) {
                       Tensor y = elementwise(t, a, b, Elem::Max);
                       return sum_all(t, elementwise(t, y, y, Elem::Mul));
                     }});
  }
  {
    Tensor x = randn_like_shape({3, 4}, rng, -3, 3);
    cases.push_back({"sigmoid", {x}, [=](Tape* t) {
                       return sum_all(t, activation(t, x, Act::Sigmoid));
                     }});
  }
  {
    Tensor x = randn_like_shape({3, 4}, rng);
    cases.push_back({"relu", {x}, [=](Tape* t) {
                       Tensor y = activation(t, x, Act::Relu);
                       return sum_all(t, elementwise(t, y, y, Elem::Mul));
                     }});
  }
  {
    Tensor x = randn_like_shape({3, 4}, rng, -2, 2);
    cases.push_back({"tanh", {x}, [=](Tape* t) {
                       return sum_all(t, activation(t, x, Act::Tanh));
                     }});
  }
  {
    Tensor table = randn_like_shape({5, 3}, rng);
    std::vector<int> ids{0, 2, 2, 4};  // repeated id exercises scatter accumulation
    cases.push_back({"embed_lookup", {table}, [=](Tape* t) {
                       Tensor y = embed_lookup(t, table, ids);
                       return sum_all(t, elementwise(t, y, y, Elem::Mul));
                     }});
  }
  {
    Tensor x = randn_like_shape({2, 3}, rng);
    cases.push_back({"sum_all", {x}, [=](Tape* t) { return sum_all(t, x); }});
  }
  {
    Tensor x = randn_like_shape({2, 3}, rng);
    cases.push_back({"scale", {x}, [=](Tape* t) {
                       Tensor y = scale(t, x, real_t(1.7));
                       return sum_all(t, elementwise(t, y, y, Elem::Mul));
                     }});
  }
  {
    Tensor x = randn_like_shape({2, 6}, rng);
    cases.push_back({"reshape", {x}, [=](Tape* t) {
                       Tensor y = reshape(t, x, {3, 4});
                       return sum_all(t, elementwise(t, y, y, Elem::Mul));
                     }});
  }
  {
    Tensor x = randn_like_shape({3, 4, 2}, rng);
    cases.push_back({"hwc_to_chw", {x}, [=](Tape* t) {
                       Tensor y = hwc_to_chw(t, x);
                       return sum_all(t, elementwise(t, y, y, Elem::Mul));
                     }});
  }
  {
    Tensor x = randn_like_shape({2, 3, 4}, rng);
    cases.push_back({"chw_to_hwc", {x}, [=](Tape* t) {
                       Tensor y = chw_to_hwc(t, x);
                       return sum_all(t, elementwise(t, y, y, Elem::Mul));
                     }});
  }
  {
    Tensor v = randn_like_shape({4}, rng);
    cases.push_back({"tile_rows", {v}, [=](Tape* t) {
                       Tensor y = tile_rows(t, v, 3);
                       return sum_all(t, elementwise(t, y, y, Elem::Mul));
                     }});
  }
  {
    Tensor x = randn_like_shape({6, 3}, rng);
    cases.push_back({"group_mean_rows", {x}, [=](Tape* t) {
                       Tensor y = group_mean_rows(t, x, 2);
                       return sum_all(t, elementwise(t, y, y, Elem::Mul));
                     }});
  }
  {
    Tensor clips = randn_like_shape({4, 3}, rng);
    cases.push_back({"range_max_map", {clips}, [=](Tape* t) {
                       Tensor y = range_max_map(t, clips);
                       return sum_all(t, elementwise(t, y, y, Elem::Mul));
                     }});
  }
  {
    // Differentiates through sigmoid -> bce so p stays strictly inside (0,1).
    Tensor raw = randn_like_shape({3, 3}, rng, -2, 2);
    Tensor y = Tensor::uniform({3, 3}, 0, 1, rng);
    Tensor mask = Tensor::zeros({3, 3});
    for (std::size_t i = 0; i < mask.size(); ++i)
      mask.at(i) = (rng() % 2 == 0) ? real_t(1) : real_t(0);
    mask.at(0) = 1;  // guarantee a nonempty mask
    cases.push_back({"bce_masked", {raw}, [=](Tape* t) {
                       Tensor p = activation(t, raw, Act::Sigmoid);
                       return bce_masked(t, p, y, mask);
                     }});
  }
  {
    ParamStore store;
    std::mt19937_64 prng(seed ^ 0x5f5f5f5fULL);
    auto layer = LstmLayerParams::create(store, "gc.lstm", 3, 3, prng);
    Tensor seq = randn_like_shape({3, 3}, rng);
    std::vector<Tensor> wrt{seq};
    for (std::size_t i = 0; i < store.size(); ++i) wrt.push_back(store.at(i));
    std::vector<LstmLayerParams> layers{layer};
    cases.push_back({"lstm_cell", wrt, [=](Tape* t) {
                       Tensor h = lstm_forward(t, seq, layers, 3);
                       return sum_all(t, elementwise(t, h, h, Elem::Mul));
                     }});
  }
  return cases;
}

}  // namespace pln

#endif  // PLN_GRADCHECK_HPP
