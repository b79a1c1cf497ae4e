#ifndef PLN_LSTM_HPP
#define PLN_LSTM_HPP

#include <string>
#include <vector>

#include "pln/ops.hpp"
#include "pln/params.hpp"
#include "pln/tensor.hpp"

namespace pln {

/// One LSTM layer's weights, one affine triple per gate.
struct LstmLayerParams {
  Tensor W_xi, W_hi, b_i;
  Tensor W_xf, W_hf, b_f;
  Tensor W_xg, W_hg, b_g;
  Tensor W_xo, W_ho, b_o;

  static LstmLayerParams create(ParamStore& store, const std::string& prefix, std::size_t in,
                                std::size_t hid, std::mt19937_64& rng) {
    LstmLayerParams p;
    p.W_xi = store.create(prefix + ".W_xi", {in, hid}, in, rng);
    p.W_hi = store.create(prefix + ".W_hi", {hid, hid}, hid, rng);
    p.b_i = store.create_zeros(prefix + ".b_i", {hid});
    p.W_xf = store.create(prefix + ".W_xf", {in, hid}, in, rng);
    p.W_hf = store.create(prefix + ".W_hf", {hid, hid}, hid, rng);
    p.b_f = store.create_zeros(prefix + ".b_f", {hid});
    p.W_xg = store.create(prefix + ".W_xg", {in, hid}, in, rng);
    p.W_hg = store.create(prefix + ".W_hg", {hid, hid}, hid, rng);
    p.b_g = store.create_zeros(prefix + ".b_g", {hid});
    p.W_xo = store.create(prefix + ".W_xo", {in, hid}, in, rng);
    p.W_ho = store.create(prefix + ".W_ho", {hid, hid}, hid, rng);
    p.b_o = store.create_zeros(prefix + ".b_o", {hid});
    return p;
  }
};

struct LstmState {
  Tensor h;  // [1, hid]
  Tensor c;  // [1, hid]
};

/// Single step, built from primitive ops so the tape differentiates it.
inline LstmState lstm_cell(Tape* tape, const Tensor& x, const LstmState& prev,
                           const LstmLayerParams& p) {
  using namespace ops;
  Tensor i = activation(tape, add(tape, affine(tape, x, p.W_xi, p.b_i), matmul(tape, prev.h, p.W_hi)),
                        Act::Sigmoid);
  Tensor f = activation(tape, add(tape, affine(tape, x, p.W_xf, p.b_f), matmul(tape, prev.h, p.W_hf)),
                        Act::Sigmoid);
  Tensor g = activation(tape, add(tape, affine(tape, x, p.W_xg, p.b_g), matmul(tape, prev.h, p.W_hg)),
                        Act::Tanh);
  Tensor o = activation(tape, add(tape, affine(tape, x, p.W_xo, p.b_o), matmul(tape, prev.h, p.W_ho)),
                        Act::Sigmoid);
  LstmState next;
  next.c = add(tape, elementwise(tape, f, prev.c, Elem::Mul), elementwise(tape, i, g, Elem::Mul));
  next.h = elementwise(tape, o, activation(tape, next.c, Act::Tanh), Elem::Mul);
  return next;
}

/// Run a layer stack over a [T, in] sequence from zero state; returns the last
/// layer's final hidden state [1, hid].
inline Tensor lstm_forward(Tape* tape, const Tensor& seq,
                           const std::vector<LstmLayerParams>& layers, std::size_t hid) {
  if (seq.ndim() != 2) throw ShapeError("lstm_forward: expected seq[T,in]");
  const std::size_t T = seq.dim(0);
  if (T == 0) throw ShapeError("lstm_forward: empty sequence");

  std::vector<Tensor> inputs;
  inputs.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    // Row slice as a copying reshape of one row.
    Tensor row = Tensor::zeros({1, seq.dim(1)});
    std::copy_n(seq.data() + t * seq.dim(1), seq.dim(1), row.data());
    if (tape && seq.requires_grad()) {
      row.set_requires_grad(true);
      Tensor sc = seq, rc = row;
      tape->record("row_slice", [sc, rc, t]() mutable {
        const std::size_t d = sc.dim(1);
        for (std::size_t c = 0; c < d; ++c) sc.grad()[t * d + c] += rc.grad()[c];
      });
    }
    inputs.push_back(row);
  }

  for (const auto& layer : layers) {
    LstmState st{Tensor::zeros({1, hid}), Tensor::zeros({1, hid})};
    std::vector<Tensor> outputs;
    outputs.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
      st = lstm_cell(tape, inputs[t], st, layer);
      outputs.push_back(st.h);
    }
    inputs = std::move(outputs);
  }
  return inputs.back();
}

}  // namespace pln

#endif  // PLN_LSTM_HPP
