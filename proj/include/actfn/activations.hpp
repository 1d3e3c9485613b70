#pragma once

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "actfn/ops.hpp"
#include "actfn/tensor.hpp"

namespace actfn {

// Kinds in equation order; `maf` is the parameterized leaky family.
enum class ActivationKind { relu, sigmoid, swish, tanh, elu, abs, square, maf };

namespace detail {

inline std::string format_alpha(double alpha) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", alpha);
  // %g is lossy above 6 significant digits; fall back to a round-trippable form
  if (std::stod(buf) != alpha) std::snprintf(buf, sizeof buf, "%.17g", alpha);
  return buf;
}

}  // namespace detail

struct ActivationSpec {
  ActivationKind kind = ActivationKind::relu;
  double alpha = 0.0;  // ELU scale or MAF negative-side slope; unused otherwise

  ActivationSpec() = default;
  explicit ActivationSpec(ActivationKind k) : kind(k) {
    if (k == ActivationKind::elu) alpha = 1.0;
  }
  ActivationSpec(ActivationKind k, double a) : kind(k), alpha(a) { validate(); }

  void validate() const {
    if (kind == ActivationKind::elu && !(alpha > 0.0)) {
      throw std::invalid_argument("elu: alpha must be positive, got " + detail::format_alpha(alpha));
    }
    if (!std::isfinite(alpha)) throw std::invalid_argument("activation: alpha must be finite");
  }

  bool parametric() const { return kind == ActivationKind::elu || kind == ActivationKind::maf; }

  std::string name() const {
    switch (kind) {
      case ActivationKind::relu: return "relu";
      case ActivationKind::sigmoid: return "sigmoid";
      case ActivationKind::swish: return "swish";
      case ActivationKind::tanh: return "tanh";
      case ActivationKind::elu: return "elu";
      case ActivationKind::abs: return "abs";
      case ActivationKind::square: return "square";
      case ActivationKind::maf: return "maf:" + detail::format_alpha(alpha);
    }
    return "?";
  }

  /// Registry spellings: relu, elu, swish, sigmoid, tanh, square, abs, maf:<alpha>.
  static ActivationSpec parse(std::string_view name) {
    if (name == "relu") return ActivationSpec(ActivationKind::relu);
    if (name == "sigmoid") return ActivationSpec(ActivationKind::sigmoid);
    if (name == "swish") return ActivationSpec(ActivationKind::swish);
    if (name == "tanh") return ActivationSpec(ActivationKind::tanh);
    if (name == "elu") return ActivationSpec(ActivationKind::elu);
    if (name == "abs") return ActivationSpec(ActivationKind::abs);
    if (name == "square") return ActivationSpec(ActivationKind::square);
    if (name.rfind("maf:", 0) == 0) {
      const std::string arg(name.substr(4));
      std::size_t used = 0;
      double a = 0;
      try {
        a = std::stod(arg, &used);
      } catch (const std::exception&) {
        throw std::invalid_argument("maf: cannot parse alpha from '" + arg + "'");
      }
      if (used != arg.size()) throw std::invalid_argument("maf: trailing junk in alpha '" + arg + "'");
      return ActivationSpec(ActivationKind::maf, a);
    }
    throw std::invalid_argument("unknown activation '" + std::string(name) +
                                "' (expected relu, elu, swish, sigmoid, tanh, square, abs, or maf:<alpha>)");
  }

  /// The seven fixed functions, in equation order; maf is excluded (parameterized).
  static std::vector<ActivationSpec> named_seven() {
    return {ActivationSpec(ActivationKind::relu),   ActivationSpec(ActivationKind::sigmoid),
            ActivationSpec(ActivationKind::swish),  ActivationSpec(ActivationKind::tanh),
            ActivationSpec(ActivationKind::elu),    ActivationSpec(ActivationKind::abs),
            ActivationSpec(ActivationKind::square)};
  }
};

// ---------------------------------------------------------------------------
// Scalar forward / derivative
// ---------------------------------------------------------------------------

namespace detail {

template <typename Scalar>
inline Scalar sigmoid_stable(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

}  // namespace detail

template <typename Scalar>
Scalar act_scalar(const ActivationSpec& spec, Scalar x) {
  const Scalar a = static_cast<Scalar>(spec.alpha);
  switch (spec.kind) {
    case ActivationKind::relu: return x > Scalar(0) ? x : Scalar(0);
    case ActivationKind::sigmoid: return detail::sigmoid_stable(x);
    case ActivationKind::swish: return x * detail::sigmoid_stable(x);
    case ActivationKind::tanh: return std::tanh(x);
    case ActivationKind::elu: return x > Scalar(0) ? x : a * std::expm1(x);
    case ActivationKind::abs: return std::abs(x);
    case ActivationKind::square: return x * x;
    case ActivationKind::maf: return x >= Scalar(0) ? x : a * x;
  }
  return Scalar(0);
}

/// Closed-form f'(x). At kinks (x == 0) the positive-branch slope is used.
template <typename Scalar>
Scalar act_deriv_scalar(const ActivationSpec& spec, Scalar x) {
  const Scalar a = static_cast<Scalar>(spec.alpha);
  switch (spec.kind) {
    case ActivationKind::relu: return x >= Scalar(0) ? Scalar(1) : Scalar(0);
    case ActivationKind::sigmoid: {
      const Scalar s = detail::sigmoid_stable(x);
      return s * (Scalar(1) - s);
    }
    case ActivationKind::swish: {
      const Scalar s = detail::sigmoid_stable(x);
      return s + x * s * (Scalar(1) - s);
    }
    case ActivationKind::tanh: {
      const Scalar t = std::tanh(x);
      return Scalar(1) - t * t;
    }
    case ActivationKind::elu: return x >= Scalar(0) ? Scalar(1) : a * std::exp(x);
    case ActivationKind::abs: return x >= Scalar(0) ? Scalar(1) : Scalar(-1);
    case ActivationKind::maf: return x >= Scalar(0) ? Scalar(1) : a;
    case ActivationKind::square: return Scalar(2) * x;
  }
  return Scalar(0);
}

// ---------------------------------------------------------------------------
// Tensor ops
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> act_forward(const ActivationSpec& spec, const Tensor<Scalar>& x) {
  check(x.defined(), "act_forward: undefined input");
  if (!x.value().allFinite()) throw std::runtime_error("act_forward: non-finite input");
  ArrayX<Scalar> out(x.size());
  for (Index i = 0; i < out.size(); ++i) out[i] = act_scalar(spec, x.value()[i]);
  detail::ensure_finite(out, "act_forward");

  auto result = Tensor<Scalar>::from(x.shape(), std::move(out));
  if (detail::tracking<Scalar>({&x})) {
    result.node()->requires_grad = true;
    auto xn = x.node();
    auto on = result.node();
    Tape<Scalar>::active()->record([spec, xn, on]() {
      if (on->grad.size() == 0 || !xn->requires_grad) return;
      ArrayX<Scalar> din(xn->value.size());
      for (Index i = 0; i < din.size(); ++i) {
        din[i] = on->grad[i] * act_deriv_scalar(spec, xn->value[i]);
      }
      detail::accumulate(xn, din);
    });
  }
  return result;
}

/// Standalone VJP: upstream · f'(x), elementwise. Pure; does not touch the tape.
template <typename Scalar>
Tensor<Scalar> act_backward(const ActivationSpec& spec, const Tensor<Scalar>& x, const Tensor<Scalar>& upstream) {
  check(x.defined() && upstream.defined(), "act_backward: undefined input");
  check(x.shape() == upstream.shape(), "act_backward: shape mismatch " + shape_string(x.shape()) + " vs " +
                                           shape_string(upstream.shape()));
  ArrayX<Scalar> out(x.size());
  for (Index i = 0; i < out.size(); ++i) {
    out[i] = upstream.value()[i] * act_deriv_scalar(spec, x.value()[i]);
  }
  detail::ensure_finite(out, "act_backward");
  return Tensor<Scalar>::from(x.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Property metadata and empirical checking
// ---------------------------------------------------------------------------

struct ActivationProperties {
  bool parametric = false;
  bool monotonic = false;
  bool smooth = false;
  bool bounded = false;
  bool symmetric = false;

  bool operator==(const ActivationProperties&) const = default;
};

/// The declared property-table row for each function. The maf row is derived
/// from alpha (its special cases collapse onto relu/abs accordingly).
inline ActivationProperties declared_properties(const ActivationSpec& spec) {
  switch (spec.kind) {
    case ActivationKind::relu: return {false, true, false, false, false};
    case ActivationKind::sigmoid: return {false, true, true, true, false};
    case ActivationKind::swish: return {false, false, true, false, false};
    case ActivationKind::tanh: return {false, true, true, true, true};
    case ActivationKind::elu: return {true, true, true, false, false};
    case ActivationKind::abs: return {false, true, false, false, true};
    case ActivationKind::square: return {false, false, true, false, true};
    case ActivationKind::maf:
      return {true, true, spec.alpha == 1.0, false, spec.alpha == 1.0 || spec.alpha == -1.0};
  }
  return {};
}

struct SampleGrid {
  double lo = -20.0;
  double hi = 20.0;
  Index points = 20001;
};

/// Empirically evaluates the property predicates on a dense symmetric grid.
///
/// monotonic uses a piecewise reading: the sign of f' may flip across a
/// derivative discontinuity (a kink), but not within a smooth stretch. That is
/// the reading under which the declared table marks |x| monotonic while
/// x*sigmoid(x) and x^2 are not.
inline ActivationProperties check_properties(const ActivationSpec& spec, const SampleGrid& grid = {}) {
  if (!std::isfinite(grid.lo) || !std::isfinite(grid.hi) || grid.hi <= 0 || grid.lo != -grid.hi) {
    throw std::invalid_argument("check_properties: grid must be symmetric about 0");
  }
  if (grid.points < 1001) {
    throw std::invalid_argument("check_properties: degenerate grid (need >= 1001 points)");
  }
  const Index n = grid.points;
  const double dx = (grid.hi - grid.lo) / static_cast<double>(n - 1);

  std::vector<double> f(static_cast<std::size_t>(n));
  double fmax = 0.0;        // max |f| over the whole grid
  double fmax_inner = 0.0;  // max |f| over the inner half [lo/2, hi/2]
  for (Index i = 0; i < n; ++i) {
    const double x = grid.lo + dx * static_cast<double>(i);
    const double v = act_scalar(spec, x);
    f[static_cast<std::size_t>(i)] = v;
    fmax = std::max(fmax, std::abs(v));
    if (std::abs(x) <= grid.hi / 2 + dx / 2) fmax_inner = std::max(fmax_inner, std::abs(v));
  }

  ActivationProperties p;
  p.parametric = spec.parametric();

  // symmetric: even or odd to tight tolerance
  const double sym_tol = 1e-9 * std::max(1.0, fmax);
  double even_err = 0.0, odd_err = 0.0;
  for (Index i = 0; i < n / 2; ++i) {
    const double a = f[static_cast<std::size_t>(i)];
    const double b = f[static_cast<std::size_t>(n - 1 - i)];
    even_err = std::max(even_err, std::abs(a - b));
    odd_err = std::max(odd_err, std::abs(a + b));
  }
  p.symmetric = even_err < sym_tol || odd_err < sym_tol;

  // bounded: growing the domain twofold must not grow the range appreciably
  p.bounded = fmax <= 1.05 * fmax_inner + 1e-12;

  // smooth: no jump in the discrete derivative anywhere
  const double kink_threshold = 0.02;
  std::vector<double> slope(static_cast<std::size_t>(n - 1));
  for (Index i = 0; i + 1 < n; ++i) {
    slope[static_cast<std::size_t>(i)] = (f[static_cast<std::size_t>(i + 1)] - f[static_cast<std::size_t>(i)]) / dx;
  }
  std::vector<Index> kinks;  // slope index where a discontinuity starts
  for (std::size_t i = 0; i + 1 < slope.size(); ++i) {
    if (std::abs(slope[i + 1] - slope[i]) > kink_threshold) kinks.push_back(static_cast<Index>(i));
  }
  p.smooth = kinks.empty();

  // monotonic: slope sign constant between kinks (flips across kinks allowed)
  const double slope_zero = 1e-12 * std::max(1.0, fmax);
  p.monotonic = true;
  std::size_t seg_begin = 0;
  kinks.push_back(static_cast<Index>(slope.size()));  // sentinel: final segment end
  for (Index kink : kinks) {
    const std::size_t seg_end = static_cast<std::size_t>(kink);  // exclusive; skip the kink pair itself
    bool any_up = false, any_down = false;
    for (std::size_t i = seg_begin; i < seg_end; ++i) {
      if (slope[i] > slope_zero) any_up = true;
      if (slope[i] < -slope_zero) any_down = true;
    }
    if (any_up && any_down) {
      p.monotonic = false;
      break;
    }
    seg_begin = static_cast<std::size_t>(kink) + 2;  // resume after the discontinuity
  }
  return p;
}

}  // namespace actfn
