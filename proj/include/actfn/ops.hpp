#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "actfn/rng.hpp"
#include "actfn/tensor.hpp"

namespace actfn {

enum class Mode { train, eval };

enum class EwOp { add, sub, mul, div };

namespace detail {

template <typename Scalar>
inline void ensure_finite(const ArrayX<Scalar>& a, const char* op) {
  if (!a.allFinite()) throw std::runtime_error(std::string(op) + ": non-finite result");
}

/// Trailing-dimension broadcast: b must equal a, be a suffix of a's shape,
/// or be a single element. Anything else is a hard error.
template <typename Scalar>
inline bool broadcast_ok(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() == b.shape()) return true;
  if (b.size() == 1) return true;
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (bs.size() > as.size()) return false;
  for (std::size_t i = 0; i < bs.size(); ++i) {
    if (bs[bs.size() - 1 - i] != as[as.size() - 1 - i]) return false;
  }
  return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> elementwise(EwOp op, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  check(a.defined() && b.defined(), "elementwise: undefined operand");
  if (!detail::broadcast_ok(a, b)) {
    throw std::invalid_argument("elementwise: shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()) + " (only trailing-dimension broadcast of b is allowed)");
  }
  const Index n = a.size();
  const Index m = b.size();
  ArrayX<Scalar> out(n);
  const auto& av = a.value();
  const auto& bv = b.value();
  auto apply = [op](Scalar x, Scalar y) -> Scalar {
    switch (op) {
      case EwOp::add: return x + y;
      case EwOp::sub: return x - y;
      case EwOp::mul: return x * y;
      case EwOp::div: return x / y;
    }
    return Scalar(0);
  };
  if (m == n) {
    switch (op) {
      case EwOp::add: out = av + bv; break;
      case EwOp::sub: out = av - bv; break;
      case EwOp::mul: out = av * bv; break;
      case EwOp::div: out = av / bv; break;
    }
  } else {
    for (Index i = 0; i < n; ++i) out[i] = apply(av[i], bv[i % m]);
  }
  detail::ensure_finite(out, "elementwise");

  auto result = Tensor<Scalar>::from(a.shape(), std::move(out));
  if (detail::tracking<Scalar>({&a, &b})) {
    result.node()->requires_grad = true;
    auto an = a.node();
    auto bn = b.node();
    auto on = result.node();
    Tape<Scalar>::active()->record([op, an, bn, on]() {
      if (on->grad.size() == 0) return;
      const auto& g = on->grad;
      const auto& av = an->value;
      const auto& bv = bn->value;
      const Index n = av.size();
      const Index m = bv.size();
      if (an->requires_grad) {
        ArrayX<Scalar> da(n);
        switch (op) {
          case EwOp::add:
          case EwOp::sub: da = g; break;
          case EwOp::mul:
            if (m == n) da = g * bv;
            else for (Index i = 0; i < n; ++i) da[i] = g[i] * bv[i % m];
            break;
          case EwOp::div:
            if (m == n) da = g / bv;
            else for (Index i = 0; i < n; ++i) da[i] = g[i] / bv[i % m];
            break;
        }
        detail::accumulate(an, da);
      }
      if (bn->requires_grad) {
        ArrayX<Scalar> db = ArrayX<Scalar>::Zero(m);
        for (Index i = 0; i < n; ++i) {
          const Index j = i % m;
          switch (op) {
            case EwOp::add: db[j] += g[i]; break;
            case EwOp::sub: db[j] -= g[i]; break;
            case EwOp::mul: db[j] += g[i] * av[i]; break;
            case EwOp::div: db[j] -= g[i] * av[i] / (bv[j] * bv[j]); break;
          }
        }
        detail::accumulate(bn, db);
      }
    });
  }
  return result;
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return elementwise(EwOp::add, a, b); }
template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return elementwise(EwOp::sub, a, b); }
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return elementwise(EwOp::mul, a, b); }
template <typename Scalar>
Tensor<Scalar> div(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return elementwise(EwOp::div, a, b); }

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return mul(a, b); }

/// out = c * x for a plain scalar c.
template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar c) {
  ArrayX<Scalar> out = x.value() * c;
  detail::ensure_finite(out, "scale");
  auto result = Tensor<Scalar>::from(x.shape(), std::move(out));
  if (detail::tracking<Scalar>({&x})) {
    result.node()->requires_grad = true;
    auto xn = x.node();
    auto on = result.node();
    Tape<Scalar>::active()->record([c, xn, on]() {
      if (on->grad.size() == 0 || !xn->requires_grad) return;
      detail::accumulate(xn, ArrayX<Scalar>(on->grad * c));
    });
  }
  return result;
}

template <typename Scalar>
Tensor<Scalar> neg(const Tensor<Scalar>& x) { return scale(x, Scalar(-1)); }

// ---------------------------------------------------------------------------
// Reductions and shape ops
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  auto result = Tensor<Scalar>::scalar(x.value().sum());
  detail::ensure_finite(result.value(), "sum");
  if (detail::tracking<Scalar>({&x})) {
    result.node()->requires_grad = true;
    auto xn = x.node();
    auto on = result.node();
    Tape<Scalar>::active()->record([xn, on]() {
      if (on->grad.size() == 0 || !xn->requires_grad) return;
      detail::accumulate(xn, ArrayX<Scalar>(ArrayX<Scalar>::Constant(xn->value.size(), on->grad[0])));
    });
  }
  return result;
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  const Scalar inv = Scalar(1) / static_cast<Scalar>(x.size());
  auto result = Tensor<Scalar>::scalar(x.value().sum() * inv);
  detail::ensure_finite(result.value(), "mean");
  if (detail::tracking<Scalar>({&x})) {
    result.node()->requires_grad = true;
    auto xn = x.node();
    auto on = result.node();
    Tape<Scalar>::active()->record([xn, on, inv]() {
      if (on->grad.size() == 0 || !xn->requires_grad) return;
      detail::accumulate(xn, ArrayX<Scalar>(ArrayX<Scalar>::Constant(xn->value.size(), on->grad[0] * inv)));
    });
  }
  return result;
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape new_shape) {
  check(numel(new_shape) == x.size(),
        "reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(new_shape));
  auto result = Tensor<Scalar>::from(std::move(new_shape), ArrayX<Scalar>(x.value()));
  if (detail::tracking<Scalar>({&x})) {
    result.node()->requires_grad = true;
    auto xn = x.node();
    auto on = result.node();
    Tape<Scalar>::active()->record([xn, on]() {
      if (on->grad.size() == 0 || !xn->requires_grad) return;
      detail::accumulate(xn, on->grad);
    });
  }
  return result;
}

/// Collapse all trailing axes: (N, ...) -> (N, prod(...)).
template <typename Scalar>
Tensor<Scalar> flatten(const Tensor<Scalar>& x) {
  check(x.rank() >= 2, "flatten: need at least 2 axes");
  return reshape(x, Shape{x.dim(0), x.size() / x.dim(0)});
}

/// Concatenate two tensors along `axis`; all other extents must agree.
template <typename Scalar>
Tensor<Scalar> concat(const Tensor<Scalar>& a, const Tensor<Scalar>& b, std::size_t axis) {
  check(a.rank() == b.rank(), "concat: rank mismatch");
  check(axis < a.rank(), "concat: axis out of range");
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis) {
      check(a.dim(i) == b.dim(i), "concat: shapes " + shape_string(a.shape()) + " and " +
                                      shape_string(b.shape()) + " differ off-axis");
    }
  }
  Shape out_shape = a.shape();
  out_shape[axis] += b.dim(axis);

  Index inner = 1;
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  Index outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  const Index a_block = a.dim(axis) * inner;
  const Index b_block = b.dim(axis) * inner;

  ArrayX<Scalar> out(a.size() + b.size());
  for (Index o = 0; o < outer; ++o) {
    out.segment(o * (a_block + b_block), a_block) = a.value().segment(o * a_block, a_block);
    out.segment(o * (a_block + b_block) + a_block, b_block) = b.value().segment(o * b_block, b_block);
  }

  auto result = Tensor<Scalar>::from(std::move(out_shape), std::move(out));
  if (detail::tracking<Scalar>({&a, &b})) {
    result.node()->requires_grad = true;
    auto an = a.node();
    auto bn = b.node();
    auto on = result.node();
    Tape<Scalar>::active()->record([an, bn, on, outer, a_block, b_block]() {
      if (on->grad.size() == 0) return;
      const auto& g = on->grad;
      if (an->requires_grad) {
        ArrayX<Scalar> da(an->value.size());
        for (Index o = 0; o < outer; ++o) {
          da.segment(o * a_block, a_block) = g.segment(o * (a_block + b_block), a_block);
        }
        detail::accumulate(an, da);
      }
      if (bn->requires_grad) {
        ArrayX<Scalar> db(bn->value.size());
        for (Index o = 0; o < outer; ++o) {
          db.segment(o * b_block, b_block) = g.segment(o * (a_block + b_block) + a_block, b_block);
        }
        detail::accumulate(bn, db);
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// conv2d: NCHW cross-correlation via im2col + GEMM
// ---------------------------------------------------------------------------

namespace detail {

struct ConvDims {
  Index n, c, h, w;        // input
  Index f, kh, kw;         // kernel
  Index sh, sw, ph, pw;    // stride / zero padding
  Index oh, ow;            // output
  Index ckk() const { return c * kh * kw; }
};

template <typename Scalar>
inline void im2col(const ArrayX<Scalar>& input, const ConvDims& d, Index batch,
                   Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& col) {
  // col(r, oh*OW+ow) with r = (c*KH + i)*KW + j
  for (Index c = 0; c < d.c; ++c) {
    const Index in_base = (batch * d.c + c) * d.h * d.w;
    for (Index i = 0; i < d.kh; ++i) {
      for (Index j = 0; j < d.kw; ++j) {
        const Index r = (c * d.kh + i) * d.kw + j;
        for (Index oh = 0; oh < d.oh; ++oh) {
          const Index h = oh * d.sh - d.ph + i;
          const bool h_ok = h >= 0 && h < d.h;
          Scalar* dst = col.data() + r + oh * d.ow * col.rows();
          for (Index ow = 0; ow < d.ow; ++ow) {
            const Index w = ow * d.sw - d.pw + j;
            Scalar v = Scalar(0);
            if (h_ok && w >= 0 && w < d.w) v = input[in_base + h * d.w + w];
            *dst = v;
            dst += col.rows();
          }
        }
      }
    }
  }
}

template <typename Scalar>
inline void col2im_add(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& col, const ConvDims& d,
                       Index batch, ArrayX<Scalar>& dinput) {
  for (Index c = 0; c < d.c; ++c) {
    const Index in_base = (batch * d.c + c) * d.h * d.w;
    for (Index i = 0; i < d.kh; ++i) {
      for (Index j = 0; j < d.kw; ++j) {
        const Index r = (c * d.kh + i) * d.kw + j;
        for (Index oh = 0; oh < d.oh; ++oh) {
          const Index h = oh * d.sh - d.ph + i;
          if (h < 0 || h >= d.h) continue;
          const Scalar* src = col.data() + r + oh * d.ow * col.rows();
          for (Index ow = 0; ow < d.ow; ++ow) {
            const Index w = ow * d.sw - d.pw + j;
            if (w >= 0 && w < d.w) dinput[in_base + h * d.w + w] += *src;
            src += col.rows();
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel, const Tensor<Scalar>& bias,
                      std::pair<Index, Index> stride = {1, 1}, std::pair<Index, Index> padding = {0, 0}) {
  check(input.rank() == 4, "conv2d: input must be (N,C,H,W), got " + shape_string(input.shape()));
  check(kernel.rank() == 4, "conv2d: kernel must be (F,C,kh,kw), got " + shape_string(kernel.shape()));
  check(bias.rank() == 1 && bias.dim(0) == kernel.dim(0), "conv2d: bias must be (F)");
  check(input.dim(1) == kernel.dim(1),
        "conv2d: channel mismatch, input " + shape_string(input.shape()) + " vs kernel " + shape_string(kernel.shape()));
  check(stride.first > 0 && stride.second > 0, "conv2d: stride must be positive");
  check(padding.first >= 0 && padding.second >= 0, "conv2d: padding must be non-negative");

  detail::ConvDims d;
  d.n = input.dim(0);
  d.c = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  d.f = kernel.dim(0);
  d.kh = kernel.dim(2);
  d.kw = kernel.dim(3);
  d.sh = stride.first;
  d.sw = stride.second;
  d.ph = padding.first;
  d.pw = padding.second;
  check(d.kh <= d.h + 2 * d.ph && d.kw <= d.w + 2 * d.pw,
        "conv2d: kernel " + shape_string(kernel.shape()) + " larger than padded input " + shape_string(input.shape()));
  d.oh = (d.h + 2 * d.ph - d.kh) / d.sh + 1;
  d.ow = (d.w + 2 * d.pw - d.kw) / d.sw + 1;

  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Eigen::Map<const MatrixRM<Scalar>> kmat(kernel.value().data(), d.f, d.ckk());
  Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> bvec(bias.value().data(), d.f);

  ArrayX<Scalar> out(d.n * d.f * d.oh * d.ow);
  Mat col(d.ckk(), d.oh * d.ow);
  for (Index n = 0; n < d.n; ++n) {
    detail::im2col(input.value(), d, n, col);
    Eigen::Map<MatrixRM<Scalar>> omat(out.data() + n * d.f * d.oh * d.ow, d.f, d.oh * d.ow);
    omat.noalias() = kmat * col;
    omat.colwise() += bvec;
  }
  detail::ensure_finite(out, "conv2d");

  auto result = Tensor<Scalar>::from(Shape{d.n, d.f, d.oh, d.ow}, std::move(out));
  if (detail::tracking<Scalar>({&input, &kernel, &bias})) {
    result.node()->requires_grad = true;
    auto in_n = input.node();
    auto k_n = kernel.node();
    auto b_n = bias.node();
    auto o_n = result.node();
    Tape<Scalar>::active()->record([d, in_n, k_n, b_n, o_n]() {
      if (o_n->grad.size() == 0) return;
      using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
      Eigen::Map<const MatrixRM<Scalar>> kmat(k_n->value.data(), d.f, d.ckk());
      Mat col(d.ckk(), d.oh * d.ow);
      Mat dkmat = Mat::Zero(d.f, d.ckk());
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dbias = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(d.f);
      ArrayX<Scalar> dinput;
      if (in_n->requires_grad) dinput = ArrayX<Scalar>::Zero(in_n->value.size());
      for (Index n = 0; n < d.n; ++n) {
        Eigen::Map<const MatrixRM<Scalar>> gmat(o_n->grad.data() + n * d.f * d.oh * d.ow, d.f, d.oh * d.ow);
        if (k_n->requires_grad || in_n->requires_grad) {
          if (k_n->requires_grad) {
            detail::im2col(in_n->value, d, n, col);
            dkmat.noalias() += gmat * col.transpose();
          }
          if (in_n->requires_grad) {
            Mat dcol(d.ckk(), d.oh * d.ow);
            dcol.noalias() = kmat.transpose() * gmat;
            detail::col2im_add(dcol, d, n, dinput);
          }
        }
        if (b_n->requires_grad) dbias += gmat.rowwise().sum();
      }
      if (k_n->requires_grad) {
        // dkmat is column-major (F x CKK); kernel layout is row-major, so remap
        ArrayX<Scalar> dk(k_n->value.size());
        Eigen::Map<MatrixRM<Scalar>>(dk.data(), d.f, d.ckk()) = dkmat;
        detail::accumulate(k_n, dk);
      }
      if (b_n->requires_grad) {
        detail::accumulate(b_n, ArrayX<Scalar>(dbias.array()));
      }
      if (in_n->requires_grad) detail::accumulate(in_n, dinput);
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// avg_pool2d
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> avg_pool2d(const Tensor<Scalar>& input, std::pair<Index, Index> window,
                          std::pair<Index, Index> stride = {0, 0}) {
  check(input.rank() == 4, "avg_pool2d: input must be (N,C,H,W)");
  const Index wh = window.first, ww = window.second;
  check(wh > 0 && ww > 0, "avg_pool2d: window must be positive");
  Index sh = stride.first, sw = stride.second;
  if (sh == 0) sh = wh;  // default stride = window
  if (sw == 0) sw = ww;
  const Index N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  check(wh <= H && ww <= W, "avg_pool2d: window " + std::to_string(wh) + "x" + std::to_string(ww) +
                                " exceeds input " + shape_string(input.shape()));
  const Index OH = (H - wh) / sh + 1;
  const Index OW = (W - ww) / sw + 1;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(wh * ww);

  ArrayX<Scalar> out(N * C * OH * OW);
  const auto& in = input.value();
  for (Index nc = 0; nc < N * C; ++nc) {
    const Index ibase = nc * H * W;
    const Index obase = nc * OH * OW;
    for (Index oh = 0; oh < OH; ++oh) {
      for (Index ow = 0; ow < OW; ++ow) {
        Scalar acc = Scalar(0);
        for (Index i = 0; i < wh; ++i) {
          const Index h = oh * sh + i;
          for (Index j = 0; j < ww; ++j) acc += in[ibase + h * W + ow * sw + j];
        }
        out[obase + oh * OW + ow] = acc * inv;
      }
    }
  }
  detail::ensure_finite(out, "avg_pool2d");

  auto result = Tensor<Scalar>::from(Shape{N, C, OH, OW}, std::move(out));
  if (detail::tracking<Scalar>({&input})) {
    result.node()->requires_grad = true;
    auto in_n = input.node();
    auto o_n = result.node();
    Tape<Scalar>::active()->record([in_n, o_n, N, C, H, W, OH, OW, wh, ww, sh, sw, inv]() {
      if (o_n->grad.size() == 0 || !in_n->requires_grad) return;
      ArrayX<Scalar> din = ArrayX<Scalar>::Zero(in_n->value.size());
      const auto& g = o_n->grad;
      for (Index nc = 0; nc < N * C; ++nc) {
        const Index ibase = nc * H * W;
        const Index obase = nc * OH * OW;
        for (Index oh = 0; oh < OH; ++oh) {
          for (Index ow = 0; ow < OW; ++ow) {
            const Scalar go = g[obase + oh * OW + ow] * inv;
            for (Index i = 0; i < wh; ++i) {
              const Index h = oh * sh + i;
              for (Index j = 0; j < ww; ++j) din[ibase + h * W + ow * sw + j] += go;
            }
          }
        }
      }
      detail::accumulate(in_n, din);
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// dense (affine map on the trailing feature axis)
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias) {
  check(input.rank() == 2, "dense: input must be (N,D), got " + shape_string(input.shape()));
  check(weight.rank() == 2, "dense: weight must be (D,K)");
  check(input.dim(1) == weight.dim(0),
        "dense: dimension mismatch " + shape_string(input.shape()) + " x " + shape_string(weight.shape()));
  check(bias.rank() == 1 && bias.dim(0) == weight.dim(1), "dense: bias must be (K)");
  const Index N = input.dim(0), D = input.dim(1), K = weight.dim(1);

  Eigen::Map<const MatrixRM<Scalar>> in(input.value().data(), N, D);
  Eigen::Map<const MatrixRM<Scalar>> w(weight.value().data(), D, K);
  Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> b(bias.value().data(), K);

  ArrayX<Scalar> out(N * K);
  Eigen::Map<MatrixRM<Scalar>> omat(out.data(), N, K);
  omat.noalias() = in * w;
  omat.rowwise() += b;
  detail::ensure_finite(out, "dense");

  auto result = Tensor<Scalar>::from(Shape{N, K}, std::move(out));
  if (detail::tracking<Scalar>({&input, &weight, &bias})) {
    result.node()->requires_grad = true;
    auto in_n = input.node();
    auto w_n = weight.node();
    auto b_n = bias.node();
    auto o_n = result.node();
    Tape<Scalar>::active()->record([in_n, w_n, b_n, o_n, N, D, K]() {
      if (o_n->grad.size() == 0) return;
      Eigen::Map<const MatrixRM<Scalar>> g(o_n->grad.data(), N, K);
      if (in_n->requires_grad) {
        Eigen::Map<const MatrixRM<Scalar>> w(w_n->value.data(), D, K);
        ArrayX<Scalar> din(N * D);
        Eigen::Map<MatrixRM<Scalar>>(din.data(), N, D).noalias() = g * w.transpose();
        detail::accumulate(in_n, din);
      }
      if (w_n->requires_grad) {
        Eigen::Map<const MatrixRM<Scalar>> in(in_n->value.data(), N, D);
        ArrayX<Scalar> dw(D * K);
        Eigen::Map<MatrixRM<Scalar>>(dw.data(), D, K).noalias() = in.transpose() * g;
        detail::accumulate(w_n, dw);
      }
      if (b_n->requires_grad) {
        ArrayX<Scalar> db(K);
        Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(db.data(), K) = g.colwise().sum();
        detail::accumulate(b_n, db);
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// batch_norm over the channel axis of (N,C,H,W)
// ---------------------------------------------------------------------------

template <typename Scalar>
struct BatchNormState {
  ArrayX<Scalar> running_mean;
  ArrayX<Scalar> running_var;
  bool initialized = false;
};

template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& input, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          BatchNormState<Scalar>& state, Mode mode, Scalar momentum = Scalar(0.1),
                          Scalar epsilon = Scalar(1e-5)) {
  check(input.rank() == 4, "batch_norm: input must be (N,C,H,W)");
  const Index N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  check(gamma.rank() == 1 && gamma.dim(0) == C, "batch_norm: gamma must be (C)");
  check(beta.rank() == 1 && beta.dim(0) == C, "batch_norm: beta must be (C)");
  check(epsilon > Scalar(0), "batch_norm: epsilon must be positive");
  const Index HW = H * W;
  const Index m = N * HW;

  ArrayX<Scalar> mean_c(C), var_c(C);
  if (mode == Mode::train) {
    for (Index c = 0; c < C; ++c) {
      Scalar s = 0, s2 = 0;
      for (Index n = 0; n < N; ++n) {
        auto seg = input.value().segment((n * C + c) * HW, HW);
        s += seg.sum();
        s2 += seg.square().sum();
      }
      const Scalar mu = s / static_cast<Scalar>(m);
      mean_c[c] = mu;
      var_c[c] = s2 / static_cast<Scalar>(m) - mu * mu;
      if (var_c[c] < Scalar(0)) var_c[c] = Scalar(0);  // guard rounding
    }
    if (!state.initialized) {
      state.running_mean = mean_c;
      // store the unbiased estimate, matching common framework convention
      state.running_var = m > 1 ? ArrayX<Scalar>(var_c * (static_cast<Scalar>(m) / static_cast<Scalar>(m - 1)))
                                : var_c;
      state.initialized = true;
    } else {
      state.running_mean = (Scalar(1) - momentum) * state.running_mean + momentum * mean_c;
      ArrayX<Scalar> unbiased = m > 1 ? ArrayX<Scalar>(var_c * (static_cast<Scalar>(m) / static_cast<Scalar>(m - 1)))
                                      : var_c;
      state.running_var = (Scalar(1) - momentum) * state.running_var + momentum * unbiased;
    }
  } else {
    if (!state.initialized) {
      throw std::runtime_error("batch_norm: eval mode requested before any train-mode step initialized running stats");
    }
    mean_c = state.running_mean;
    var_c = state.running_var;
  }

  ArrayX<Scalar> inv_std = (var_c + epsilon).sqrt().inverse();
  ArrayX<Scalar> xhat(input.size());
  ArrayX<Scalar> out(input.size());
  for (Index n = 0; n < N; ++n) {
    for (Index c = 0; c < C; ++c) {
      const Index off = (n * C + c) * HW;
      auto seg = input.value().segment(off, HW);
      xhat.segment(off, HW) = (seg - mean_c[c]) * inv_std[c];
      out.segment(off, HW) = xhat.segment(off, HW) * gamma.value()[c] + beta.value()[c];
    }
  }
  detail::ensure_finite(out, "batch_norm");

  auto result = Tensor<Scalar>::from(input.shape(), std::move(out));
  if (detail::tracking<Scalar>({&input, &gamma, &beta})) {
    result.node()->requires_grad = true;
    auto in_n = input.node();
    auto g_n = gamma.node();
    auto b_n = beta.node();
    auto o_n = result.node();
    const bool train_mode = (mode == Mode::train);
    Tape<Scalar>::active()->record([in_n, g_n, b_n, o_n, xhat = std::move(xhat), inv_std = std::move(inv_std), N, C,
                                    HW, m, train_mode]() {
      if (o_n->grad.size() == 0) return;
      const auto& dy = o_n->grad;
      ArrayX<Scalar> dgamma = ArrayX<Scalar>::Zero(C);
      ArrayX<Scalar> dbeta = ArrayX<Scalar>::Zero(C);
      for (Index n = 0; n < N; ++n) {
        for (Index c = 0; c < C; ++c) {
          const Index off = (n * C + c) * HW;
          dgamma[c] += (dy.segment(off, HW) * xhat.segment(off, HW)).sum();
          dbeta[c] += dy.segment(off, HW).sum();
        }
      }
      if (in_n->requires_grad) {
        ArrayX<Scalar> din(in_n->value.size());
        const Scalar inv_m = Scalar(1) / static_cast<Scalar>(m);
        for (Index n = 0; n < N; ++n) {
          for (Index c = 0; c < C; ++c) {
            const Index off = (n * C + c) * HW;
            const Scalar k = g_n->value[c] * inv_std[c];
            if (train_mode) {
              din.segment(off, HW) =
                  k * (dy.segment(off, HW) - inv_m * dbeta[c] - xhat.segment(off, HW) * (inv_m * dgamma[c]));
            } else {
              din.segment(off, HW) = k * dy.segment(off, HW);
            }
          }
        }
        detail::accumulate(in_n, din);
      }
      if (g_n->requires_grad) detail::accumulate(g_n, dgamma);
      if (b_n->requires_grad) detail::accumulate(b_n, dbeta);
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& input, double rate, Mode mode, Rng* rng) {
  check(rate >= 0.0 && rate < 1.0, "dropout: rate must lie in [0, 1)");
  if (mode == Mode::eval || rate == 0.0) return input;  // identity by contract
  check(rng != nullptr, "dropout: train mode with rate > 0 needs an rng");

  const Scalar keep_scale = Scalar(1.0 / (1.0 - rate));
  ArrayX<Scalar> mask(input.size());
  for (Index i = 0; i < mask.size(); ++i) {
    mask[i] = rng->uniform() < rate ? Scalar(0) : keep_scale;
  }
  ArrayX<Scalar> out = input.value() * mask;

  auto result = Tensor<Scalar>::from(input.shape(), std::move(out));
  if (detail::tracking<Scalar>({&input})) {
    result.node()->requires_grad = true;
    auto in_n = input.node();
    auto o_n = result.node();
    Tape<Scalar>::active()->record([in_n, o_n, mask = std::move(mask)]() {
      if (o_n->grad.size() == 0 || !in_n->requires_grad) return;
      detail::accumulate(in_n, ArrayX<Scalar>(o_n->grad * mask));
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// softmax and softmax cross-entropy
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  check(logits.rank() == 2, "softmax: input must be (N,K)");
  const Index N = logits.dim(0), K = logits.dim(1);
  ArrayX<Scalar> out(N * K);
  for (Index n = 0; n < N; ++n) {
    auto row = logits.value().segment(n * K, K);
    const Scalar mx = row.maxCoeff();
    ArrayX<Scalar> e = (row - mx).exp();
    out.segment(n * K, K) = e / e.sum();
  }
  detail::ensure_finite(out, "softmax");

  auto result = Tensor<Scalar>::from(logits.shape(), std::move(out));
  if (detail::tracking<Scalar>({&logits})) {
    result.node()->requires_grad = true;
    auto in_n = logits.node();
    auto o_n = result.node();
    Tape<Scalar>::active()->record([in_n, o_n, N, K]() {
      if (o_n->grad.size() == 0 || !in_n->requires_grad) return;
      ArrayX<Scalar> din(N * K);
      for (Index n = 0; n < N; ++n) {
        auto p = o_n->value.segment(n * K, K);
        auto g = o_n->grad.segment(n * K, K);
        const Scalar dot = (p * g).sum();
        din.segment(n * K, K) = p * (g - dot);
      }
      detail::accumulate(in_n, din);
    });
  }
  return result;
}

/// Mean cross-entropy of max-shifted softmax over integer class labels.
/// Gradient toward logits is (softmax - onehot) / N.
template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels) {
  check(logits.rank() == 2, "softmax_cross_entropy: logits must be (N,K)");
  const Index N = logits.dim(0), K = logits.dim(1);
  check(static_cast<Index>(labels.size()) == N, "softmax_cross_entropy: label count mismatch");
  for (int y : labels) check(y >= 0 && y < K, "softmax_cross_entropy: label " + std::to_string(y) + " out of range");

  ArrayX<Scalar> probs(N * K);
  Scalar loss = 0;
  for (Index n = 0; n < N; ++n) {
    auto row = logits.value().segment(n * K, K);
    const Scalar mx = row.maxCoeff();
    ArrayX<Scalar> shifted = row - mx;
    ArrayX<Scalar> e = shifted.exp();
    const Scalar z = e.sum();
    probs.segment(n * K, K) = e / z;
    loss += std::log(z) - shifted[labels[static_cast<std::size_t>(n)]];
  }
  loss /= static_cast<Scalar>(N);

  auto result = Tensor<Scalar>::scalar(loss);
  detail::ensure_finite(result.value(), "softmax_cross_entropy");
  if (detail::tracking<Scalar>({&logits})) {
    result.node()->requires_grad = true;
    auto in_n = logits.node();
    auto o_n = result.node();
    std::vector<int> ycopy(labels.begin(), labels.end());
    Tape<Scalar>::active()->record([in_n, o_n, probs = std::move(probs), ycopy = std::move(ycopy), N, K]() {
      if (o_n->grad.size() == 0 || !in_n->requires_grad) return;
      const Scalar up = o_n->grad[0] / static_cast<Scalar>(N);
      ArrayX<Scalar> din = probs * up;
      for (Index n = 0; n < N; ++n) din[n * K + ycopy[static_cast<std::size_t>(n)]] -= up;
      detail::accumulate(in_n, din);
    });
  }
  return result;
}

/// Row-wise argmax; ties resolve to the lowest index. No gradient.
template <typename Scalar>
std::vector<int> argmax_rows(const Tensor<Scalar>& x) {
  check(x.rank() == 2, "argmax_rows: input must be (N,K)");
  const Index N = x.dim(0), K = x.dim(1);
  std::vector<int> out(static_cast<std::size_t>(N));
  for (Index n = 0; n < N; ++n) {
    Index best = 0;
    for (Index k = 1; k < K; ++k) {
      if (x.value()[n * K + k] > x.value()[n * K + best]) best = k;
    }
    out[static_cast<std::size_t>(n)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace actfn
