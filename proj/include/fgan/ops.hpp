#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "fgan/tape.hpp"
#include "fgan/tensor.hpp"

namespace fgan {

namespace detail {

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using RowMatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Large scratch blocks (im2col) churn through the allocator once per batch;
// keeping freed blocks on the heap instead of returning pages to the kernel
// removes the page-fault tax.
inline void tune_allocator() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

template <typename S>
bool want_record(GradTape<S>* tape, std::initializer_list<const Tensor<S>*> inputs) {
  if (!tape) return false;
  for (const Tensor<S>* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise / structural
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> relu(GradTape<S>* tape, const Tensor<S>& x) {
  Tensor<S> out = Tensor<S>::from_array(x.shape(), x.values().max(S(0)),
                                        detail::want_record(tape, {&x}));
  if (out.requires_grad()) {
    Tensor<S> xi = x, o = out;
    tape->record([xi, o]() mutable {
      // subgradient at 0 is 0
      xi.accumulate_grad(((xi.values() > S(0)).template cast<S>() * o.grad()).eval());
    });
  }
  return out;
}

template <typename S>
Tensor<S> add(GradTape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                              shape_str(b.shape()));
  Tensor<S> out = Tensor<S>::from_array(a.shape(), a.values() + b.values(),
                                        detail::want_record(tape, {&a, &b}));
  if (out.requires_grad()) {
    Tensor<S> ai = a, bi = b, o = out;
    tape->record([ai, bi, o]() mutable {
      if (ai.requires_grad()) ai.accumulate_grad(o.grad());
      if (bi.requires_grad()) bi.accumulate_grad(o.grad());
    });
  }
  return out;
}

template <typename S>
Tensor<S> scale(GradTape<S>* tape, const Tensor<S>& x, S alpha) {
  detail::require(std::isfinite(static_cast<double>(alpha)), "scale: non-finite factor");
  Tensor<S> out =
      Tensor<S>::from_array(x.shape(), x.values() * alpha, detail::want_record(tape, {&x}));
  if (out.requires_grad()) {
    Tensor<S> xi = x, o = out;
    tape->record([xi, o, alpha]() mutable { xi.accumulate_grad((alpha * o.grad()).eval()); });
  }
  return out;
}

template <typename S>
Tensor<S> reshape(GradTape<S>* tape, const Tensor<S>& x, Shape shape) {
  detail::require(shape_size(shape) == x.size(), "reshape: element count mismatch");
  Tensor<S> out =
      Tensor<S>::from_array(std::move(shape), x.values(), detail::want_record(tape, {&x}));
  if (out.requires_grad()) {
    Tensor<S> xi = x, o = out;
    tape->record([xi, o]() mutable { xi.accumulate_grad(o.grad()); });
  }
  return out;
}

/// Concatenation along the last axis of rank-1 vectors ([Na]+[Nb] -> [Na+Nb])
/// or rank-2 batches ([B,Na]+[B,Nb] -> [B,Na+Nb]).
template <typename S>
Tensor<S> concat(GradTape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.rank() == b.rank() && (a.rank() == 1 || a.rank() == 2),
                  "concat: expects two rank-1 or two rank-2 tensors");
  const Eigen::Index rows = a.rank() == 2 ? a.dim(0) : 1;
  if (a.rank() == 2)
    detail::require(a.dim(0) == b.dim(0), "concat: leading dimension mismatch");
  const Eigen::Index na = a.dim(a.rank() - 1), nb = b.dim(b.rank() - 1);
  typename Tensor<S>::Array vals(rows * (na + nb));
  for (Eigen::Index r = 0; r < rows; ++r) {
    vals.segment(r * (na + nb), na) = a.values().segment(r * na, na);
    vals.segment(r * (na + nb) + na, nb) = b.values().segment(r * nb, nb);
  }
  Shape shape = a.rank() == 2 ? Shape{rows, na + nb} : Shape{na + nb};
  Tensor<S> out =
      Tensor<S>::from_array(std::move(shape), std::move(vals), detail::want_record(tape, {&a, &b}));
  if (out.requires_grad()) {
    Tensor<S> ai = a, bi = b, o = out;
    tape->record([ai, bi, o, rows, na, nb]() mutable {
      for (Eigen::Index r = 0; r < rows; ++r) {
        if (ai.requires_grad())
          ai.grad().segment(r * na, na) += o.grad().segment(r * (na + nb), na);
        if (bi.requires_grad())
          bi.grad().segment(r * nb, nb) += o.grad().segment(r * (na + nb) + na, nb);
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> sum_all(GradTape<S>* tape, const Tensor<S>& x) {
  Tensor<S> out = Tensor<S>::scalar(x.values().sum(), detail::want_record(tape, {&x}));
  if (out.requires_grad()) {
    Tensor<S> xi = x, o = out;
    tape->record([xi, o]() mutable {
      xi.grad() += o.grad()(0);
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean_all(GradTape<S>* tape, const Tensor<S>& x) {
  const S n = static_cast<S>(x.size());
  Tensor<S> out = Tensor<S>::scalar(x.values().sum() / n, detail::want_record(tape, {&x}));
  if (out.requires_grad()) {
    Tensor<S> xi = x, o = out;
    tape->record([xi, o, n]() mutable { xi.grad() += o.grad()(0) / n; });
  }
  return out;
}

/// Mean of squared differences over all elements.
template <typename S>
Tensor<S> mse(GradTape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.shape() == b.shape(), "mse: shape mismatch " + shape_str(a.shape()) + " vs " +
                                              shape_str(b.shape()));
  const S n = static_cast<S>(a.size());
  Tensor<S> out = Tensor<S>::scalar((a.values() - b.values()).square().sum() / n,
                                    detail::want_record(tape, {&a, &b}));
  if (out.requires_grad()) {
    Tensor<S> ai = a, bi = b, o = out;
    tape->record([ai, bi, o, n]() mutable {
      const auto diff = (ai.values() - bi.values()).eval();
      const S f = S(2) * o.grad()(0) / n;
      if (ai.requires_grad()) ai.accumulate_grad((f * diff).eval());
      if (bi.requires_grad()) bi.accumulate_grad((-f * diff).eval());
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// neural-network layers
// ---------------------------------------------------------------------------

namespace detail {

struct ConvDims {
  Eigen::Index batch, cin, h, w, cout, k, ho, wo;
  bool batched;
};

template <typename S>
ConvDims conv_dims(const Tensor<S>& input, const Tensor<S>& kernel, int stride, int padding) {
  require(kernel.rank() == 4, "conv2d: kernel must be [Cout,Cin,k,k]");
  require(input.rank() == 3 || input.rank() == 4, "conv2d: input must be [C,H,W] or [B,C,H,W]");
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(padding >= 0, "conv2d: padding must be >= 0");
  ConvDims d;
  d.batched = input.rank() == 4;
  d.batch = d.batched ? input.dim(0) : 1;
  d.cin = input.dim(d.batched ? 1 : 0);
  d.h = input.dim(d.batched ? 2 : 1);
  d.w = input.dim(d.batched ? 3 : 2);
  d.cout = kernel.dim(0);
  d.k = kernel.dim(2);
  require(kernel.dim(1) == d.cin, "conv2d: kernel channel count does not match input");
  require(kernel.dim(3) == d.k, "conv2d: kernel must be square");
  require(d.k % 2 == 1, "conv2d: kernel size must be odd");
  const Eigen::Index hn = d.h + 2 * padding - d.k;
  const Eigen::Index wn = d.w + 2 * padding - d.k;
  require(hn >= 0 && wn >= 0 && hn % stride == 0 && wn % stride == 0,
          "conv2d: non-integral output size");
  d.ho = hn / stride + 1;
  d.wo = wn / stride + 1;
  return d;
}

// Patch matrix with layout (Cin*k*k) x (B*Ho*Wo), row-major. Zero padding.
template <typename S>
void im2col(const S* in, const ConvDims& d, int stride, int padding, S* col) {
  const Eigen::Index sp = d.ho * d.wo;
  const Eigen::Index cols = d.batch * sp;
  for (Eigen::Index ci = 0; ci < d.cin; ++ci) {
    for (Eigen::Index ky = 0; ky < d.k; ++ky) {
      for (Eigen::Index kx = 0; kx < d.k; ++kx) {
        S* row = col + ((ci * d.k + ky) * d.k + kx) * cols;
        for (Eigen::Index b = 0; b < d.batch; ++b) {
          const S* plane = in + (b * d.cin + ci) * d.h * d.w;
          for (Eigen::Index oy = 0; oy < d.ho; ++oy) {
            S* dst = row + b * sp + oy * d.wo;
            const Eigen::Index iy = oy * stride + ky - padding;
            if (iy < 0 || iy >= d.h) {
              std::fill(dst, dst + d.wo, S(0));
              continue;
            }
            if (stride == 1) {
              const Eigen::Index off = kx - padding;
              const Eigen::Index lo = std::max<Eigen::Index>(0, -off);
              const Eigen::Index hi = std::min<Eigen::Index>(d.wo, d.w - off);
              if (lo > 0) std::fill(dst, dst + std::min(lo, d.wo), S(0));
              if (hi > lo)
                std::memcpy(dst + lo, plane + iy * d.w + lo + off,
                            static_cast<std::size_t>(hi - lo) * sizeof(S));
              if (hi < d.wo) std::fill(dst + std::max(hi, lo), dst + d.wo, S(0));
            } else {
              for (Eigen::Index ox = 0; ox < d.wo; ++ox) {
                const Eigen::Index ix = ox * stride + kx - padding;
                dst[ox] = (ix >= 0 && ix < d.w) ? plane[iy * d.w + ix] : S(0);
              }
            }
          }
        }
      }
    }
  }
}

// Scatter-add of a per-sample patch-gradient matrix (P x Ho*Wo, row-major)
// back onto one input sample's gradient.
template <typename S>
void col2im_add(const S* dcol, const ConvDims& d, int stride, int padding, S* din) {
  const Eigen::Index sp = d.ho * d.wo;
  for (Eigen::Index ci = 0; ci < d.cin; ++ci) {
    for (Eigen::Index ky = 0; ky < d.k; ++ky) {
      for (Eigen::Index kx = 0; kx < d.k; ++kx) {
        const S* row = dcol + ((ci * d.k + ky) * d.k + kx) * sp;
        S* plane = din + ci * d.h * d.w;
        for (Eigen::Index oy = 0; oy < d.ho; ++oy) {
          const Eigen::Index iy = oy * stride + ky - padding;
          if (iy < 0 || iy >= d.h) continue;
          const S* src = row + oy * d.wo;
          if (stride == 1) {
            const Eigen::Index off = kx - padding;
            const Eigen::Index lo = std::max<Eigen::Index>(0, -off);
            const Eigen::Index hi = std::min<Eigen::Index>(d.wo, d.w - off);
            S* drow = plane + iy * d.w + off;
            for (Eigen::Index ox = lo; ox < hi; ++ox) drow[ox] += src[ox];
          } else {
            for (Eigen::Index ox = 0; ox < d.wo; ++ox) {
              const Eigen::Index ix = ox * stride + kx - padding;
              if (ix >= 0 && ix < d.w) plane[iy * d.w + ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation. input [Cin,H,W] or [B,Cin,H,W], kernel
/// [Cout,Cin,k,k] with odd k; zero padding. Differentiable w.r.t. input and
/// kernel.
template <typename S>
Tensor<S> conv2d(GradTape<S>* tape, const Tensor<S>& input, const Tensor<S>& kernel,
                 int stride = 1, int padding = 0) {
  detail::tune_allocator();
  using detail::RowMatX;
  const detail::ConvDims d = detail::conv_dims(input, kernel, stride, padding);
  const Eigen::Index P = d.cin * d.k * d.k;
  const Eigen::Index sp = d.ho * d.wo;

  auto col = std::make_shared<typename Tensor<S>::Array>(P * d.batch * sp);
  detail::im2col(input.values().data(), d, stride, padding, col->data());

  typename Tensor<S>::Array vals(d.batch * d.cout * sp);
  Eigen::Map<const RowMatX<S>> K(kernel.values().data(), d.cout, P);
  using StridedRow =
      Eigen::Map<const RowMatX<S>, Eigen::Unaligned, Eigen::OuterStride<Eigen::Dynamic>>;
  for (Eigen::Index b = 0; b < d.batch; ++b) {
    StridedRow colb(col->data() + b * sp, P, sp, Eigen::OuterStride<>(d.batch * sp));
    // (sp x Cout) column-major block == row-major [Cout][sp] slab of the output
    Eigen::Map<detail::MatX<S>> outb(vals.data() + b * d.cout * sp, sp, d.cout);
    outb.noalias() = colb.transpose() * K.transpose();
  }

  Shape oshape = d.batched ? Shape{d.batch, d.cout, d.ho, d.wo} : Shape{d.cout, d.ho, d.wo};
  Tensor<S> out = Tensor<S>::from_array(std::move(oshape), std::move(vals),
                                        detail::want_record(tape, {&input, &kernel}));
  if (out.requires_grad()) {
    Tensor<S> in = input, kr = kernel, o = out;
    tape->record([in, kr, o, col, d, stride, padding, P, sp]() mutable {
      using StridedRowM =
          Eigen::Map<const RowMatX<S>, Eigen::Unaligned, Eigen::OuterStride<Eigen::Dynamic>>;
      Eigen::Map<const RowMatX<S>> K(kr.values().data(), d.cout, P);
      if (kr.requires_grad()) kr.ensure_grad();
      if (in.requires_grad()) in.ensure_grad();
      typename Tensor<S>::Array dcol;
      if (in.requires_grad()) dcol.resize(P * sp);
      for (Eigen::Index b = 0; b < d.batch; ++b) {
        Eigen::Map<const detail::MatX<S>> doutb(o.grad().data() + b * d.cout * sp, sp, d.cout);
        StridedRowM colb(col->data() + b * sp, P, sp, Eigen::OuterStride<>(d.batch * sp));
        if (kr.requires_grad()) {
          Eigen::Map<RowMatX<S>> dK(kr.grad().data(), d.cout, P);
          dK.noalias() += doutb.transpose() * colb.transpose();
        }
        if (in.requires_grad()) {
          Eigen::Map<RowMatX<S>> dcolb(dcol.data(), P, sp);
          dcolb.noalias() = K.transpose() * doutb.transpose();
          detail::col2im_add(dcol.data(), d, stride, padding,
                             in.grad().data() + b * d.cin * d.h * d.w);
        }
      }
    });
  }
  return out;
}

/// Adds a per-channel bias to [C,H,W] or [B,C,H,W] activations.
template <typename S>
Tensor<S> bias_add(GradTape<S>* tape, const Tensor<S>& x, const Tensor<S>& bias) {
  detail::require(x.rank() == 3 || x.rank() == 4, "bias_add: input must be rank 3 or 4");
  detail::require(bias.rank() == 1, "bias_add: bias must be rank 1");
  const Eigen::Index c = x.dim(x.rank() - 3);
  const Eigen::Index plane = x.dim(x.rank() - 2) * x.dim(x.rank() - 1);
  const Eigen::Index batch = x.size() / (c * plane);
  detail::require(bias.dim(0) == c, "bias_add: channel count mismatch");
  typename Tensor<S>::Array vals = x.values();
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index ci = 0; ci < c; ++ci)
      vals.segment((b * c + ci) * plane, plane) += bias.values()(ci);
  Tensor<S> out = Tensor<S>::from_array(x.shape(), std::move(vals),
                                        detail::want_record(tape, {&x, &bias}));
  if (out.requires_grad()) {
    Tensor<S> xi = x, bi = bias, o = out;
    tape->record([xi, bi, o, batch, c, plane]() mutable {
      if (xi.requires_grad()) xi.accumulate_grad(o.grad());
      if (bi.requires_grad()) {
        bi.ensure_grad();
        for (Eigen::Index b = 0; b < batch; ++b)
          for (Eigen::Index ci = 0; ci < c; ++ci)
            bi.grad()(ci) += o.grad().segment((b * c + ci) * plane, plane).sum();
      }
    });
  }
  return out;
}

/// weight [M,N] * input [N] + bias [M]; batched form maps [B,N] -> [B,M].
template <typename S>
Tensor<S> linear(GradTape<S>* tape, const Tensor<S>& input, const Tensor<S>& weight,
                 const Tensor<S>& bias) {
  using detail::MatX;
  using detail::RowMatX;
  detail::require(weight.rank() == 2, "linear: weight must be [M,N]");
  detail::require(input.rank() == 1 || input.rank() == 2, "linear: input must be [N] or [B,N]");
  const Eigen::Index m = weight.dim(0), n = weight.dim(1);
  const Eigen::Index batch = input.rank() == 2 ? input.dim(0) : 1;
  detail::require(input.dim(input.rank() - 1) == n, "linear: input length does not match weight");
  detail::require(bias.rank() == 1 && bias.dim(0) == m, "linear: bias length does not match weight");

  Eigen::Map<const RowMatX<S>> W(weight.values().data(), m, n);
  Eigen::Map<const MatX<S>> X(input.values().data(), n, batch);  // row-major [B,N] == (N x B)
  Eigen::Map<const detail::VecX<S>> bv(bias.values().data(), m);
  typename Tensor<S>::Array vals(batch * m);
  Eigen::Map<MatX<S>> Y(vals.data(), m, batch);
  Y.noalias() = W * X;
  Y.colwise() += bv;

  Shape oshape = input.rank() == 2 ? Shape{batch, m} : Shape{m};
  Tensor<S> out = Tensor<S>::from_array(std::move(oshape), std::move(vals),
                                        detail::want_record(tape, {&input, &weight, &bias}));
  if (out.requires_grad()) {
    Tensor<S> xi = input, wi = weight, bi = bias, o = out;
    tape->record([xi, wi, bi, o, m, n, batch]() mutable {
      Eigen::Map<const MatX<S>> dY(o.grad().data(), m, batch);
      if (xi.requires_grad()) {
        xi.ensure_grad();
        Eigen::Map<const RowMatX<S>> W(wi.values().data(), m, n);
        Eigen::Map<MatX<S>> dX(xi.grad().data(), n, batch);
        dX.noalias() += W.transpose() * dY;
      }
      if (wi.requires_grad()) {
        wi.ensure_grad();
        Eigen::Map<const MatX<S>> X(xi.values().data(), n, batch);
        Eigen::Map<RowMatX<S>> dW(wi.grad().data(), m, n);
        dW.noalias() += dY * X.transpose();
      }
      if (bi.requires_grad()) {
        bi.ensure_grad();
        Eigen::Map<detail::VecX<S>> db(bi.grad().data(), m);
        db.noalias() += dY.rowwise().sum();
      }
    });
  }
  return out;
}

/// 2x2 non-overlapping max pooling on [C,H,W] or [B,C,H,W] with even H, W.
/// The gradient routes to the first maximal element in row-major window
/// order, which keeps the backward pass deterministic under ties.
template <typename S>
Tensor<S> maxpool2(GradTape<S>* tape, const Tensor<S>& x) {
  detail::require(x.rank() == 3 || x.rank() == 4, "maxpool2: input must be rank 3 or 4");
  const bool batched = x.rank() == 4;
  const Eigen::Index batch = batched ? x.dim(0) : 1;
  const Eigen::Index c = x.dim(batched ? 1 : 0);
  const Eigen::Index h = x.dim(batched ? 2 : 1);
  const Eigen::Index w = x.dim(batched ? 3 : 2);
  detail::require(h % 2 == 0 && w % 2 == 0, "maxpool2: spatial dimensions must be even");
  const Eigen::Index ho = h / 2, wo = w / 2;

  typename Tensor<S>::Array vals(batch * c * ho * wo);
  auto argmax = std::make_shared<std::vector<Eigen::Index>>(
      static_cast<std::size_t>(batch * c * ho * wo));
  const S* in = x.values().data();
  Eigen::Index oi = 0;
  for (Eigen::Index bc = 0; bc < batch * c; ++bc) {
    const S* plane = in + bc * h * w;
    const Eigen::Index base = bc * h * w;
    for (Eigen::Index oy = 0; oy < ho; ++oy) {
      for (Eigen::Index ox = 0; ox < wo; ++ox, ++oi) {
        const Eigen::Index y = 2 * oy, xx = 2 * ox;
        Eigen::Index best = y * w + xx;
        S bv = plane[best];
        const Eigen::Index cand[3] = {y * w + xx + 1, (y + 1) * w + xx, (y + 1) * w + xx + 1};
        for (Eigen::Index idx : cand) {
          if (plane[idx] > bv) {  // strict: first maximal element wins
            bv = plane[idx];
            best = idx;
          }
        }
        vals(oi) = bv;
        (*argmax)[static_cast<std::size_t>(oi)] = base + best;
      }
    }
  }

  Shape oshape = batched ? Shape{batch, c, ho, wo} : Shape{c, ho, wo};
  Tensor<S> out =
      Tensor<S>::from_array(std::move(oshape), std::move(vals), detail::want_record(tape, {&x}));
  if (out.requires_grad()) {
    Tensor<S> xi = x, o = out;
    tape->record([xi, o, argmax]() mutable {
      xi.ensure_grad();
      auto& g = xi.grad();
      const auto& og = o.grad();
      for (Eigen::Index i = 0; i < og.size(); ++i)
        g((*argmax)[static_cast<std::size_t>(i)]) += og(i);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void softmax_row(const S* logits, Eigen::Index k, S* probs, S& loss, int label) {
  S m = logits[0];
  for (Eigen::Index i = 1; i < k; ++i) m = std::max(m, logits[i]);
  S sum = S(0);
  for (Eigen::Index i = 0; i < k; ++i) {
    probs[i] = std::exp(logits[i] - m);
    sum += probs[i];
  }
  for (Eigen::Index i = 0; i < k; ++i) probs[i] /= sum;
  loss = std::log(sum) + m - logits[label];
}

template <typename S>
S stable_sigmoid(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

}  // namespace detail

/// -log softmax(logits)[label], computed with max subtraction. Accepts a
/// single [K] row or a [B,K] batch with one label per row (loss per row).
template <typename S>
Tensor<S> softmax_cross_entropy(GradTape<S>* tape, const Tensor<S>& logits,
                                const std::vector<int>& labels) {
  detail::require(logits.rank() == 1 || logits.rank() == 2,
                  "softmax_cross_entropy: logits must be [K] or [B,K]");
  const Eigen::Index batch = logits.rank() == 2 ? logits.dim(0) : 1;
  const Eigen::Index k = logits.dim(logits.rank() - 1);
  detail::require(k >= 2, "softmax_cross_entropy: need at least two classes");
  detail::require(static_cast<Eigen::Index>(labels.size()) == batch,
                  "softmax_cross_entropy: one label per row required");
  for (int l : labels)
    detail::require(l >= 0 && l < k, "softmax_cross_entropy: label out of range");

  auto probs = std::make_shared<typename Tensor<S>::Array>(batch * k);
  typename Tensor<S>::Array losses(batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    S loss;
    detail::softmax_row(logits.values().data() + b * k, k, probs->data() + b * k, loss,
                        labels[static_cast<std::size_t>(b)]);
    losses(b) = loss;
  }

  Tensor<S> out =
      logits.rank() == 2
          ? Tensor<S>::from_array(Shape{batch}, std::move(losses),
                                  detail::want_record(tape, {&logits}))
          : Tensor<S>::from_array(Shape{}, std::move(losses), detail::want_record(tape, {&logits}));
  if (out.requires_grad()) {
    Tensor<S> li = logits, o = out;
    std::vector<int> ls = labels;
    tape->record([li, o, probs, ls, batch, k]() mutable {
      li.ensure_grad();
      for (Eigen::Index b = 0; b < batch; ++b) {
        const S g = o.grad()(b);
        auto row = li.grad().segment(b * k, k);
        row += g * probs->segment(b * k, k);
        row(ls[static_cast<std::size_t>(b)]) -= g;
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> softmax_cross_entropy(GradTape<S>* tape, const Tensor<S>& logits, int label) {
  detail::require(logits.rank() == 1, "softmax_cross_entropy: single-label form expects [K]");
  return softmax_cross_entropy(tape, logits, std::vector<int>{label});
}

/// Numerically stable -[t log sigma(x) + (1-t) log(1-sigma(x))], applied
/// elementwise with one shared binary target.
template <typename S>
Tensor<S> bce_with_logits(GradTape<S>* tape, const Tensor<S>& logits, int target) {
  detail::require(target == 0 || target == 1, "bce_with_logits: target must be 0 or 1");
  const S t = static_cast<S>(target);
  typename Tensor<S>::Array vals(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const S x = logits.values()(i);
    vals(i) = std::max(x, S(0)) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  Tensor<S> out = Tensor<S>::from_array(logits.shape(), std::move(vals),
                                        detail::want_record(tape, {&logits}));
  if (out.requires_grad()) {
    Tensor<S> li = logits, o = out;
    tape->record([li, o, t]() mutable {
      li.ensure_grad();
      for (Eigen::Index i = 0; i < li.size(); ++i)
        li.grad()(i) += o.grad()(i) * (detail::stable_sigmoid(li.values()(i)) - t);
    });
  }
  return out;
}

}  // namespace fgan
