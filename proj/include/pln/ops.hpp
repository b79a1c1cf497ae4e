#ifndef PLN_OPS_HPP
#define PLN_OPS_HPP

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "pln/tensor.hpp"

namespace pln::ops {

using MatRM = Eigen::Matrix<real_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

enum class Pool { Max, Mean };
enum class Elem { Mul, Add, Max };
enum class Act { Sigmoid, Relu, Tanh };

namespace detail {

inline bool want_grad(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs)
    if ((*t).requires_grad()) return true;
  return false;
}

/// C (+)= A * B with one fixed accumulation order for every operand shape.
/// Eigen hands products with a unit outer dimension to its matrix-vector
/// kernels, which split the sum at the operands' alignment boundary; the
/// result then depends on heap addresses and reruns stop being bit-identical.
/// Proper GEMM packs into aligned scratch and has no such dependence.
template <bool Accumulate, class CM, class AE, class BE>
void product_into(CM C, const AE& A, const BE& B) {
  if (A.rows() == 1 || B.cols() == 1) {
    for (Eigen::Index r = 0; r < A.rows(); ++r)
      for (Eigen::Index c = 0; c < B.cols(); ++c) {
        real_t s = 0;
        for (Eigen::Index k = 0; k < A.cols(); ++k) s += A(r, k) * B(k, c);
        if constexpr (Accumulate)
          C(r, c) += s;
        else
          C(r, c) = s;
      }
  } else {
    if constexpr (Accumulate)
      C.noalias() += A * B;
    else
      C.noalias() = A * B;
  }
}

// im2col for square kernels with zero padding; rows = C*k*k, cols = Ho*Wo.
inline void im2col(const real_t* x, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
                   std::size_t pad, std::size_t Ho, std::size_t Wo, real_t* col) {
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t di = 0; di < k; ++di) {
      for (std::size_t dj = 0; dj < k; ++dj) {
        real_t* dst = col + ((c * k + di) * k + dj) * (Ho * Wo);
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + di) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) {
            std::fill(dst + oy * Wo, dst + (oy + 1) * Wo, real_t(0));
            continue;
          }
          const real_t* src = x + (c * H + iy) * W;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + dj) - static_cast<std::ptrdiff_t>(pad);
            dst[oy * Wo + ox] =
                (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) ? real_t(0) : src[ix];
          }
        }
      }
    }
  }
}

// Scatter-add transpose of im2col.
inline void col2im_add(const real_t* col, std::size_t C, std::size_t H, std::size_t W,
                       std::size_t k, std::size_t pad, std::size_t Ho, std::size_t Wo,
                       real_t* gx) {
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t di = 0; di < k; ++di) {
      for (std::size_t dj = 0; dj < k; ++dj) {
        const real_t* src = col + ((c * k + di) * k + dj) * (Ho * Wo);
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + di) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          real_t* dst = gx + (c * H + iy) * W;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + dj) - static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(W)) dst[ix] += src[oy * Wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// y = x W + b, broadcasting over all leading dims of x. x: [*, in], W: [in, out], b: [out].
inline Tensor affine(Tape* tape, const Tensor& x, const Tensor& W, const Tensor& b) {
  if (x.ndim() < 1 || W.ndim() != 2 || b.ndim() != 1)
    throw ShapeError("affine: expected x[*,in], W[in,out], b[out]");
  const std::size_t in = x.shape().back();
  const std::size_t out = W.dim(1);
  if (W.dim(0) != in || b.dim(0) != out)
    throw ShapeError("affine: inner dims mismatch, x " + shape_str(x.shape()) + " W " +
                     shape_str(W.shape()) + " b " + shape_str(b.shape()));
  const std::size_t rows = x.size() / in;

  Shape yshape(x.shape());
  yshape.back() = out;
  Tensor y = Tensor::zeros(yshape);

  CMapM X(x.data(), rows, in), Wm(W.data(), in, out);
  MapM Y(y.data(), rows, out);
  detail::product_into<false>(Y, X, Wm);
  CMapM bm(b.data(), 1, out);
  Y.rowwise() += bm.row(0);

  if (detail::want_grad(tape, {&x, &W, &b})) {
    y.set_requires_grad(true);
    Tensor xc = x, Wc = W, bc = b, yc = y;
    tape->record("affine", [xc, Wc, bc, yc, rows, in, out]() mutable {
      CMapM dY(yc.grad().data(), rows, out);
      if (xc.requires_grad()) {
        CMapM Wm(Wc.data(), in, out);
        MapM gX(xc.grad().data(), rows, in);
        detail::product_into<true>(gX, dY, Wm.transpose());
      }
      if (Wc.requires_grad()) {
        CMapM X(xc.data(), rows, in);
        MapM gW(Wc.grad().data(), in, out);
        detail::product_into<true>(gW, X.transpose(), dY);
      }
      if (bc.requires_grad()) {
        // Row-ascending accumulation; Eigen's partial redux groups terms by
        // the buffer's runtime alignment and is not rerun-stable.
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < out; ++c) bc.grad()[c] += yc.grad()[r * out + c];
      }
    });
  }
  return y;
}

/// y = x W (no bias). x: [*, in], W: [in, out].
inline Tensor matmul(Tape* tape, const Tensor& x, const Tensor& W) {
  if (x.ndim() < 1 || W.ndim() != 2) throw ShapeError("matmul: expected x[*,in], W[in,out]");
  const std::size_t in = x.shape().back();
  const std::size_t out = W.dim(1);
  if (W.dim(0) != in)
    throw ShapeError("matmul: inner dims mismatch, x " + shape_str(x.shape()) + " W " +
                     shape_str(W.shape()));
  const std::size_t rows = x.size() / in;

  Shape yshape(x.shape());
  yshape.back() = out;
  Tensor y = Tensor::zeros(yshape);
  CMapM X(x.data(), rows, in), Wm(W.data(), in, out);
  MapM Y(y.data(), rows, out);
  detail::product_into<false>(Y, X, Wm);

  if (detail::want_grad(tape, {&x, &W})) {
    y.set_requires_grad(true);
    Tensor xc = x, Wc = W, yc = y;
    tape->record("matmul", [xc, Wc, yc, rows, in, out]() mutable {
      CMapM dY(yc.grad().data(), rows, out);
      if (xc.requires_grad()) {
        CMapM Wm(Wc.data(), in, out);
        MapM gX(xc.grad().data(), rows, in);
        detail::product_into<true>(gX, dY, Wm.transpose());
      }
      if (Wc.requires_grad()) {
        CMapM X(xc.data(), rows, in);
        MapM gW(Wc.grad().data(), in, out);
        detail::product_into<true>(gW, X.transpose(), dY);
      }
    });
  }
  return y;
}

/// Cross-correlation with zero padding. x: [Cin,H,W], kernel: [Cout,Cin,k,k], bias: [Cout].
/// Odd k with padding k/2 preserves the spatial size.
inline Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& kernel, const Tensor& bias,
                     int padding) {
  if (x.ndim() != 3 || kernel.ndim() != 4 || bias.ndim() != 1)
    throw ShapeError("conv2d: expected x[Cin,H,W], kernel[Cout,Cin,k,k], bias[Cout]");
  const std::size_t Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t Cout = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != Cin)
    throw ShapeError("conv2d: channel mismatch, x has " + std::to_string(Cin) +
                     " kernel expects " + std::to_string(kernel.dim(1)));
  if (kernel.dim(3) != k || k % 2 == 0) throw ShapeError("conv2d: kernel must be square and odd");
  if (bias.dim(0) != Cout) throw ShapeError("conv2d: bias size mismatch");
  if (padding < 0) throw ShapeError("conv2d: negative padding");
  const std::size_t pad = static_cast<std::size_t>(padding);
  if (H + 2 * pad < k || W + 2 * pad < k) throw ShapeError("conv2d: kernel larger than input");
  const std::size_t Ho = H + 2 * pad - k + 1, Wo = W + 2 * pad - k + 1;

  const std::size_t krows = Cin * k * k;
  std::vector<real_t> col(krows * Ho * Wo);
  detail::im2col(x.data(), Cin, H, W, k, pad, Ho, Wo, col.data());

  Tensor y = Tensor::zeros({Cout, Ho, Wo});
  CMapM K(kernel.data(), Cout, krows), Xcol(col.data(), krows, Ho * Wo);
  MapM Y(y.data(), Cout, Ho * Wo);
  detail::product_into<false>(Y, K, Xcol);
  for (std::size_t co = 0; co < Cout; ++co) Y.row(co).array() += bias.at(co);

  if (detail::want_grad(tape, {&x, &kernel, &bias})) {
    y.set_requires_grad(true);
    Tensor xc = x, kc = kernel, bc = bias, yc = y;
    tape->record("conv2d", [xc, kc, bc, yc, Cin, H, W, Cout, k, pad, Ho, Wo, krows]() mutable {
      CMapM dY(yc.grad().data(), Cout, Ho * Wo);
      // im2col is recomputed here rather than saved; it is cheap next to the GEMMs.
      std::vector<real_t> col(krows * Ho * Wo);
      detail::im2col(xc.data(), Cin, H, W, k, pad, Ho, Wo, col.data());
      CMapM Xcol(col.data(), krows, Ho * Wo);
      if (kc.requires_grad()) {
        MapM gK(kc.grad().data(), Cout, krows);
        detail::product_into<true>(gK, dY, Xcol.transpose());
      }
      if (bc.requires_grad()) {
        // Summed by hand: Eigen's linear redux peels to the runtime alignment
        // boundary, so its accumulation order varies with the heap address and
        // breaks bit-exact reruns under AVX-512.
        for (std::size_t co = 0; co < Cout; ++co) {
          const real_t* row = yc.grad().data() + co * Ho * Wo;
          real_t s = 0;
          for (std::size_t i = 0; i < Ho * Wo; ++i) s += row[i];
          bc.grad()[co] += s;
        }
      }
      if (xc.requires_grad()) {
        CMapM K(kc.data(), Cout, krows);
        MatRM dcol(krows, Ho * Wo);
        detail::product_into<false>(MapM(dcol.data(), krows, Ho * Wo), K.transpose(), dY);
        detail::col2im_add(dcol.data(), Cin, H, W, k, pad, Ho, Wo, xc.grad().data());
      }
    });
  }
  return y;
}

/// Per-channel spatial pooling. Max routes gradient to the first maximal element.
inline Tensor pool2d(Tape* tape, const Tensor& x, Pool mode, int window, int stride) {
  if (x.ndim() != 3) throw ShapeError("pool2d: expected x[C,H,W]");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t w = static_cast<std::size_t>(window), s = static_cast<std::size_t>(stride);
  if (window <= 0 || stride <= 0 || w > H || w > W)
    throw ShapeError("pool2d: window " + std::to_string(window) + " does not fit input " +
                     shape_str(x.shape()));
  const std::size_t Ho = (H - w) / s + 1, Wo = (W - w) / s + 1;

  Tensor y = Tensor::zeros({C, Ho, Wo});
  std::vector<std::uint32_t> argmax(mode == Pool::Max ? C * Ho * Wo : 0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const std::size_t oidx = (c * Ho + oy) * Wo + ox;
        if (mode == Pool::Max) {
          real_t best = -std::numeric_limits<real_t>::infinity();
          std::uint32_t bi = 0;
          for (std::size_t di = 0; di < w; ++di)
            for (std::size_t dj = 0; dj < w; ++dj) {
              const std::size_t ii = (c * H + oy * s + di) * W + ox * s + dj;
              if (x.at(ii) > best) {
                best = x.at(ii);
                bi = static_cast<std::uint32_t>(ii);
              }
            }
          y.at(oidx) = best;
          argmax[oidx] = bi;
        } else {
          real_t acc = 0;
          for (std::size_t di = 0; di < w; ++di)
            for (std::size_t dj = 0; dj < w; ++dj)
              acc += x.at((c * H + oy * s + di) * W + ox * s + dj);
          y.at(oidx) = acc / static_cast<real_t>(w * w);
        }
      }
    }
  }

  if (detail::want_grad(tape, {&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    tape->record(mode == Pool::Max ? "pool2d_max" : "pool2d_mean",
                 [xc, yc, mode, argmax = std::move(argmax), C, H, W, w, s, Ho, Wo]() mutable {
                   auto& gx = xc.grad();
                   const auto& gy = yc.grad();
                   if (mode == Pool::Max) {
                     for (std::size_t o = 0; o < gy.size(); ++o) gx[argmax[o]] += gy[o];
                   } else {
                     const real_t inv = real_t(1) / static_cast<real_t>(w * w);
                     for (std::size_t c = 0; c < C; ++c)
                       for (std::size_t oy = 0; oy < Ho; ++oy)
                         for (std::size_t ox = 0; ox < Wo; ++ox) {
                           const real_t g = gy[(c * Ho + oy) * Wo + ox] * inv;
                           for (std::size_t di = 0; di < w; ++di)
                             for (std::size_t dj = 0; dj < w; ++dj)
                               gx[(c * H + oy * s + di) * W + ox * s + dj] += g;
                         }
                   }
                 });
  }
  return y;
}

/// Nearest-neighbor 2x upsampling: every cell becomes a 2x2 block.
inline Tensor upsample2x(Tape* tape, const Tensor& x) {
  if (x.ndim() != 3) throw ShapeError("upsample2x: expected x[C,H,W]");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor y = Tensor::zeros({C, 2 * H, 2 * W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const real_t v = x.at((c * H + i) * W + j);
        const std::size_t base = (c * 2 * H + 2 * i) * 2 * W + 2 * j;
        y.at(base) = v;
        y.at(base + 1) = v;
        y.at(base + 2 * W) = v;
        y.at(base + 2 * W + 1) = v;
      }

  if (detail::want_grad(tape, {&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    tape->record("upsample2x", [xc, yc, C, H, W]() mutable {
      auto& gx = xc.grad();
      const auto& gy = yc.grad();
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t j = 0; j < W; ++j) {
            const std::size_t base = (c * 2 * H + 2 * i) * 2 * W + 2 * j;
            gx[(c * H + i) * W + j] +=
                gy[base] + gy[base + 1] + gy[base + 2 * W] + gy[base + 2 * W + 1];
          }
    });
  }
  return y;
}

/// Per-element combine of two same-shape tensors. Max routes gradient to the
/// left operand on ties.
inline Tensor elementwise(Tape* tape, const Tensor& a, const Tensor& b, Elem mode) {
  if (!a.same_shape(b))
    throw ShapeError("elementwise: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor y = Tensor::zeros(a.shape());
  const std::size_t n = a.size();
  switch (mode) {
    case Elem::Mul:
      for (std::size_t i = 0; i < n; ++i) y.at(i) = a.at(i) * b.at(i);
      break;
    case Elem::Add:
      for (std::size_t i = 0; i < n; ++i) y.at(i) = a.at(i) + b.at(i);
      break;
    case Elem::Max:
      for (std::size_t i = 0; i < n; ++i) y.at(i) = a.at(i) >= b.at(i) ? a.at(i) : b.at(i);
      break;
  }

  if (detail::want_grad(tape, {&a, &b})) {
    y.set_requires_grad(true);
    Tensor ac = a, bc = b, yc = y;
    const char* kind = mode == Elem::Mul   ? "elementwise_mul"
                       : mode == Elem::Add ? "elementwise_add"
                                           : "elementwise_max";
    tape->record(kind, [ac, bc, yc, mode, n]() mutable {
      const auto& gy = yc.grad();
      const bool ga = ac.requires_grad(), gb = bc.requires_grad();
      switch (mode) {
        case Elem::Mul:
          if (ga)
            for (std::size_t i = 0; i < n; ++i) ac.grad()[i] += gy[i] * bc.at(i);
          if (gb)
            for (std::size_t i = 0; i < n; ++i) bc.grad()[i] += gy[i] * ac.at(i);
          break;
        case Elem::Add:
          if (ga)
            for (std::size_t i = 0; i < n; ++i) ac.grad()[i] += gy[i];
          if (gb)
            for (std::size_t i = 0; i < n; ++i) bc.grad()[i] += gy[i];
          break;
        case Elem::Max:
          for (std::size_t i = 0; i < n; ++i) {
            if (ac.at(i) >= bc.at(i)) {
              if (ga) ac.grad()[i] += gy[i];
            } else if (gb) {
              bc.grad()[i] += gy[i];
            }
          }
          break;
      }
    });
  }
  return y;
}

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  return elementwise(tape, a, b, Elem::Add);
}

/// Element-wise nonlinearity with analytic backward.
inline Tensor activation(Tape* tape, const Tensor& x, Act mode) {
  Tensor y = Tensor::zeros(x.shape());
  const std::size_t n = x.size();
  switch (mode) {
    case Act::Sigmoid:
      for (std::size_t i = 0; i < n; ++i) y.at(i) = real_t(1) / (real_t(1) + std::exp(-x.at(i)));
      break;
    case Act::Relu:
      for (std::size_t i = 0; i < n; ++i) y.at(i) = x.at(i) > 0 ? x.at(i) : real_t(0);
      break;
    case Act::Tanh:
      for (std::size_t i = 0; i < n; ++i) y.at(i) = std::tanh(x.at(i));
      break;
  }

  if (detail::want_grad(tape, {&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    const char* kind = mode == Act::Sigmoid ? "sigmoid" : mode == Act::Relu ? "relu" : "tanh";
    tape->record(kind, [xc, yc, mode, n]() mutable {
      auto& gx = xc.grad();
      const auto& gy = yc.grad();
      switch (mode) {
        case Act::Sigmoid:
          for (std::size_t i = 0; i < n; ++i) {
            const real_t s = yc.at(i);
            gx[i] += gy[i] * s * (real_t(1) - s);
          }
          break;
        case Act::Relu:
          for (std::size_t i = 0; i < n; ++i)
            if (xc.at(i) > 0) gx[i] += gy[i];
          break;
        case Act::Tanh:
          for (std::size_t i = 0; i < n; ++i) {
            const real_t t = yc.at(i);
            gx[i] += gy[i] * (real_t(1) - t * t);
          }
          break;
      }
    });
  }
  return y;
}

/// Row gather from an embedding table; backward scatter-adds into the rows.
inline Tensor embed_lookup(Tape* tape, const Tensor& table, const std::vector<int>& ids) {
  if (table.ndim() != 2) throw ShapeError("embed_lookup: table must be [vocab, dim]");
  const std::size_t V = table.dim(0), E = table.dim(1);
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= V)
      throw InputError("embed_lookup: token id " + std::to_string(id) + " outside vocab " +
                       std::to_string(V));
  Tensor y = Tensor::zeros({ids.size(), E});
  for (std::size_t r = 0; r < ids.size(); ++r)
    std::copy_n(table.data() + static_cast<std::size_t>(ids[r]) * E, E, y.data() + r * E);

  if (detail::want_grad(tape, {&table})) {
    y.set_requires_grad(true);
    Tensor tc = table, yc = y;
    tape->record("embed_lookup", [tc, yc, ids, E]() mutable {
      auto& gt = tc.grad();
      const auto& gy = yc.grad();
      for (std::size_t r = 0; r < ids.size(); ++r)
        for (std::size_t e = 0; e < E; ++e)
          gt[static_cast<std::size_t>(ids[r]) * E + e] += gy[r * E + e];
    });
  }
  return y;
}

/// Scalar sum of all elements.
inline Tensor sum_all(Tape* tape, const Tensor& x) {
  Tensor y = Tensor::zeros({1});
  real_t acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x.at(i);
  y.at(0) = acc;
  if (detail::want_grad(tape, {&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    tape->record("sum_all", [xc, yc]() mutable {
      const real_t g = yc.grad()[0];
      auto& gx = xc.grad();
      for (auto& v : gx) v += g;
    });
  }
  return y;
}

/// y = c * x for a constant scalar c.
inline Tensor scale(Tape* tape, const Tensor& x, real_t c) {
  Tensor y = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y.at(i) = c * x.at(i);
  if (detail::want_grad(tape, {&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    tape->record("scale", [xc, yc, c]() mutable {
      auto& gx = xc.grad();
      const auto& gy = yc.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += c * gy[i];
    });
  }
  return y;
}

/// Copying reshape; gradient passes straight through.
inline Tensor reshape(Tape* tape, const Tensor& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor y = Tensor::from(std::move(shape), x.value());
  if (detail::want_grad(tape, {&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    tape->record("reshape", [xc, yc]() mutable {
      auto& gx = xc.grad();
      const auto& gy = yc.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    });
  }
  return y;
}

/// [H,W,C] -> [C,H,W] permutation.
inline Tensor hwc_to_chw(Tape* tape, const Tensor& x) {
  if (x.ndim() != 3) throw ShapeError("hwc_to_chw: expected [H,W,C]");
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  Tensor y = Tensor::zeros({C, H, W});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t c = 0; c < C; ++c) y.at((c * H + i) * W + j) = x.at((i * W + j) * C + c);
  if (detail::want_grad(tape, {&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    tape->record("hwc_to_chw", [xc, yc, H, W, C]() mutable {
      auto& gx = xc.grad();
      const auto& gy = yc.grad();
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j)
          for (std::size_t c = 0; c < C; ++c)
            gx[(i * W + j) * C + c] += gy[(c * H + i) * W + j];
    });
  }
  return y;
}

/// [C,H,W] -> [H,W,C] permutation.
inline Tensor chw_to_hwc(Tape* tape, const Tensor& x) {
  if (x.ndim() != 3) throw ShapeError("chw_to_hwc: expected [C,H,W]");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor y = Tensor::zeros({H, W, C});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) y.at((i * W + j) * C + c) = x.at((c * H + i) * W + j);
  if (detail::want_grad(tape, {&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    tape->record("chw_to_hwc", [xc, yc, C, H, W]() mutable {
      auto& gx = xc.grad();
      const auto& gy = yc.grad();
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t j = 0; j < W; ++j)
            gx[(c * H + i) * W + j] += gy[(i * W + j) * C + c];
    });
  }
  return y;
}

/// Repeat a [C] or [1,C] vector into [rows, C]; backward sums over rows.
inline Tensor tile_rows(Tape* tape, const Tensor& v, std::size_t rows) {
  if (v.ndim() > 2 || (v.ndim() == 2 && v.dim(0) != 1))
    throw ShapeError("tile_rows: expected [C] or [1,C]");
  const std::size_t C = v.shape().back();
  Tensor y = Tensor::zeros({rows, C});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(v.data(), C, y.data() + r * C);
  if (detail::want_grad(tape, {&v})) {
    y.set_requires_grad(true);
    Tensor vc = v, yc = y;
    tape->record("tile_rows", [vc, yc, rows, C]() mutable {
      auto& gv = vc.grad();
      const auto& gy = yc.grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < C; ++c) gv[c] += gy[r * C + c];
    });
  }
  return y;
}

/// Mean over consecutive row groups: [L,d] -> [groups,d], L divisible by groups.
inline Tensor group_mean_rows(Tape* tape, const Tensor& x, std::size_t groups) {
  if (x.ndim() != 2) throw ShapeError("group_mean_rows: expected [L,d]");
  const std::size_t L = x.dim(0), d = x.dim(1);
  if (groups == 0 || L % groups != 0)
    throw ShapeError("group_mean_rows: " + std::to_string(L) + " rows not divisible into " +
                     std::to_string(groups) + " groups");
  const std::size_t g = L / groups;
  Tensor y = Tensor::zeros({groups, d});
  for (std::size_t n = 0; n < groups; ++n)
    for (std::size_t r = 0; r < g; ++r)
      for (std::size_t c = 0; c < d; ++c) y.at(n * d + c) += x.at((n * g + r) * d + c);
  const real_t inv = real_t(1) / static_cast<real_t>(g);
  for (std::size_t i = 0; i < y.size(); ++i) y.at(i) *= inv;

  if (detail::want_grad(tape, {&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    tape->record("group_mean_rows", [xc, yc, groups, g, d, inv]() mutable {
      auto& gx = xc.grad();
      const auto& gy = yc.grad();
      for (std::size_t n = 0; n < groups; ++n)
        for (std::size_t r = 0; r < g; ++r)
          for (std::size_t c = 0; c < d; ++c) gx[(n * g + r) * d + c] += gy[n * d + c] * inv;
    });
  }
  return y;
}

/// Candidate-moment feature map: out[i,j,:] = elementwise max of clips i..j for
/// i <= j, exactly zero elsewhere. Gradient routes to the earliest maximal clip.
inline Tensor range_max_map(Tape* tape, const Tensor& clips) {
  if (clips.ndim() != 2) throw ShapeError("range_max_map: expected clips[N,d]");
  const std::size_t N = clips.dim(0), d = clips.dim(1);
  Tensor y = Tensor::zeros({N, N, d});
  std::vector<std::uint32_t> argmax(N * N * d, 0);
  std::vector<real_t> cur(d);
  std::vector<std::uint32_t> curarg(d);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      cur[c] = clips.at(i * d + c);
      curarg[c] = static_cast<std::uint32_t>(i);
    }
    for (std::size_t j = i; j < N; ++j) {
      if (j > i) {
        for (std::size_t c = 0; c < d; ++c) {
          const real_t v = clips.at(j * d + c);
          if (v > cur[c]) {  // strict: ties keep the earlier clip
            cur[c] = v;
            curarg[c] = static_cast<std::uint32_t>(j);
          }
        }
      }
      const std::size_t base = (i * N + j) * d;
      for (std::size_t c = 0; c < d; ++c) {
        y.at(base + c) = cur[c];
        argmax[base + c] = curarg[c];
      }
    }
  }

  if (detail::want_grad(tape, {&clips})) {
    y.set_requires_grad(true);
    Tensor cc = clips, yc = y;
    tape->record("range_max_map", [cc, yc, argmax = std::move(argmax), N, d]() mutable {
      auto& gc = cc.grad();
      const auto& gy = yc.grad();
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = i; j < N; ++j) {
          const std::size_t base = (i * N + j) * d;
          for (std::size_t c = 0; c < d; ++c)
            gc[argmax[base + c] * d + c] += gy[base + c];
        }
    });
  }
  return y;
}

/// Masked binary cross-entropy, mean over mask-true cells. p is clamped to
/// [eps, 1-eps] inside this op only. An empty mask yields 0 and sets the flag.
inline Tensor bce_masked(Tape* tape, const Tensor& p, const Tensor& y, const Tensor& mask,
                         bool* empty_mask_warning = nullptr) {
  if (!p.same_shape(y) || !p.same_shape(mask))
    throw ShapeError("bce_masked: p, y, mask must share a shape");
  constexpr real_t eps = real_t(1e-7);
  const std::size_t n = p.size();
  std::size_t V = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (mask.at(i) > real_t(0.5)) ++V;
  if (empty_mask_warning) *empty_mask_warning = (V == 0);

  Tensor loss = Tensor::zeros({1});
  if (V > 0) {
    real_t acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask.at(i) <= real_t(0.5)) continue;
      const real_t pc = std::clamp(p.at(i), eps, real_t(1) - eps);
      acc += y.at(i) * std::log(pc) + (real_t(1) - y.at(i)) * std::log(real_t(1) - pc);
    }
    loss.at(0) = -acc / static_cast<real_t>(V);
  }

  if (V > 0 && detail::want_grad(tape, {&p})) {
    loss.set_requires_grad(true);
    Tensor pc_ = p, yc_ = y, mc_ = mask, lc = loss;
    tape->record("bce", [pc_, yc_, mc_, lc, V, n]() mutable {
      const real_t g = lc.grad()[0];
      const real_t invV = real_t(1) / static_cast<real_t>(V);
      auto& gp = pc_.grad();
      for (std::size_t i = 0; i < n; ++i) {
        if (mc_.at(i) <= real_t(0.5)) continue;
        const real_t pv = pc_.at(i);
        if (pv <= eps || pv >= real_t(1) - eps) continue;  // clamp region: zero slope
        gp[i] += g * invV * (-(yc_.at(i) / pv) + (real_t(1) - yc_.at(i)) / (real_t(1) - pv));
      }
    });
  }
  return loss;
}

}  // namespace pln::ops

#endif  // PLN_OPS_HPP
