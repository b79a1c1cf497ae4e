#ifndef PLN_ENCODERS_HPP
#define PLN_ENCODERS_HPP

#include <cmath>
#include <vector>

#include "pln/lstm.hpp"
#include "pln/ops.hpp"
#include "pln/tensor.hpp"

namespace pln {

/// Clip features at one stage's granularity.
struct ClipSet {
  int stage_index = 1;  // 1-based
  Tensor clips;         // [N, d]
  bool modulated = false;
};

/// Per-unit FC + ReLU projection into the shared hidden width.
inline Tensor encode_units(Tape* tape, const Tensor& units, const Tensor& W, const Tensor& b) {
  if (units.ndim() != 2) throw ShapeError("encode_units: expected units[l_v, d_raw]");
  return ops::activation(tape, ops::affine(tape, units, W, b), ops::Act::Relu);
}

/// Repeats the last unit until the length is a multiple of the finest clip
/// count, so every stage's mean-pool divides evenly.
inline Tensor pad_units(const Tensor& units, std::size_t finest_N) {
  const std::size_t l = units.dim(0), d = units.dim(1);
  if (finest_N == 0) throw ConfigError("pad_units: zero clip count");
  const std::size_t rem = l % finest_N;
  if (rem == 0) return units;
  const std::size_t padded = l + (finest_N - rem);
  Tensor out = Tensor::zeros({padded, d});
  std::copy_n(units.data(), l * d, out.data());
  for (std::size_t r = l; r < padded; ++r)
    std::copy_n(units.data() + (l - 1) * d, d, out.data() + r * d);
  return out;
}

/// Mean-pool consecutive unit windows into N_t clips.
inline ClipSet make_clips(Tape* tape, const Tensor& units, std::size_t N_t, int stage_index) {
  ClipSet cs;
  cs.stage_index = stage_index;
  cs.clips = ops::group_mean_rows(tape, units, N_t);
  return cs;
}

/// Classic sinusoid position code, added to each clip vector. The table is a
/// constant, so gradients flow through the add untouched.
inline ClipSet positional_encode(Tape* tape, const ClipSet& cs) {
  const std::size_t N = cs.clips.dim(0), d = cs.clips.dim(1);
  if (d % 2 != 0) throw ConfigError("positional_encode: feature dim must be even");
  Tensor pe = Tensor::zeros({N, d});
  for (std::size_t pos = 0; pos < N; ++pos) {
    for (std::size_t k = 0; 2 * k < d; ++k) {
      const real_t angle =
          static_cast<real_t>(pos) /
          std::pow(real_t(10000), real_t(2 * k) / static_cast<real_t>(d));
      pe.at(pos * d + 2 * k) = std::sin(angle);
      pe.at(pos * d + 2 * k + 1) = std::cos(angle);
    }
  }
  ClipSet out = cs;
  out.clips = ops::add(tape, cs.clips, pe);
  return out;
}

/// Embed the token ids and run the LSTM stack; the final top-layer hidden
/// state is the query vector [1, d].
inline Tensor encode_query(Tape* tape, const std::vector<int>& token_ids, const Tensor& embed_table,
                           const std::vector<LstmLayerParams>& layers, std::size_t hidden) {
  if (token_ids.empty()) throw InputError("encode_query: empty token sequence");
  Tensor embedded = ops::embed_lookup(tape, embed_table, token_ids);
  return lstm_forward(tape, embedded, layers, hidden);
}

/// Conditional feature manipulation: gate each clip element by a sigmoid score
/// computed from the previous stage's globally max-pooled map.
/// h = maxpool(H_prev);  a_i = sigmoid(W_r (h .* c_i) + b_r);  out_i = c_i .* a_i.
inline ClipSet cfm_modulate(Tape* tape, const ClipSet& cs, const Tensor& H_prev, const Tensor& W_r,
                            const Tensor& b_r) {
  if (cs.stage_index <= 1) throw ContractError("cfm_modulate: not defined for the first stage");
  if (H_prev.ndim() != 3 || H_prev.dim(0) != cs.clips.dim(1))
    throw ShapeError("cfm_modulate: previous map channels " +
                     std::to_string(H_prev.ndim() == 3 ? H_prev.dim(0) : 0) +
                     " do not match clip dim " + std::to_string(cs.clips.dim(1)));
  const std::size_t N = cs.clips.dim(0), d = cs.clips.dim(1);
  const int Np = static_cast<int>(H_prev.dim(1));

  Tensor pooled = ops::pool2d(tape, H_prev, ops::Pool::Max, Np, Np);  // [d,1,1]
  Tensor h = ops::reshape(tape, pooled, {1, d});
  Tensor h_rows = ops::tile_rows(tape, h, N);
  Tensor gated = ops::elementwise(tape, h_rows, cs.clips, ops::Elem::Mul);
  Tensor a = ops::activation(tape, ops::affine(tape, gated, W_r, b_r), ops::Act::Sigmoid);

  ClipSet out;
  out.stage_index = cs.stage_index;
  out.modulated = true;
  out.clips = ops::elementwise(tape, cs.clips, a, ops::Elem::Mul);
  return out;
}

}  // namespace pln

#endif  // PLN_ENCODERS_HPP
