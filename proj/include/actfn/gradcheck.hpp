#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "actfn/activations.hpp"
#include "actfn/network.hpp"
#include "actfn/ops.hpp"
#include "actfn/rng.hpp"
#include "actfn/tensor.hpp"

namespace actfn {

struct GradCheckReport {
  std::string name;
  double worst_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

inline double grad_rel_err(double ad, double fd) {
  return std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1.0});
}

/// Central finite difference vs a claimed derivative for a scalar function.
/// `exclude_radius` skips sample points within that distance of 0 (kinks);
/// `one_sided_stencil` shrinks h so the stencil never straddles 0.
template <typename F, typename D>
GradCheckReport gradcheck_scalar(std::string name, F&& f, D&& df, double lo, double hi, Index points, double tol,
                                 double exclude_radius, bool one_sided_stencil, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (Index i = 0; i < points; ++i) {
    const double x = rng.uniform(lo, hi);
    if (x == 0.0 || std::abs(x) < exclude_radius) continue;
    double h = 1e-5 * std::max(1.0, std::abs(x));
    if (one_sided_stencil) h = std::min(h, std::abs(x) / 2);
    const double fd = (f(x + h) - f(x - h)) / (2 * h);
    worst = std::max(worst, grad_rel_err(df(x), fd));
  }
  return {std::move(name), worst, tol, worst < tol};
}

/// Kinked kinds get a looser tolerance, a kink exclusion zone, and a stencil
/// kept on one side of 0. elu is C^1 but not C^2 at 0, so it only needs the
/// one-sided stencil.
inline GradCheckReport gradcheck_activation(const ActivationSpec& spec, Index points = 10000,
                                            std::uint64_t seed = 0x9e3779b97f4a7c15ull) {
  const bool kinked = spec.kind == ActivationKind::relu || spec.kind == ActivationKind::abs ||
                      spec.kind == ActivationKind::maf;
  const bool one_sided = kinked || spec.kind == ActivationKind::elu;
  const double tol = kinked ? 1e-4 : 1e-6;
  const double exclude = kinked ? 1e-6 : 0.0;
  return gradcheck_scalar(
      "act " + spec.name(), [&spec](double x) { return act_scalar(spec, x); },
      [&spec](double x) { return act_deriv_scalar(spec, x); }, -10.0, 10.0, points, tol, exclude, one_sided, seed);
}

/// Checks d(make_loss)/d(input) for every element of every listed input.
/// make_loss must be a pure function of the input values (reseed any rng it
/// uses internally) and is evaluated off-tape for the finite differences.
template <typename MakeLoss>
GradCheckReport gradcheck_tensors(std::string name, const std::vector<Tensor<double>*>& inputs, MakeLoss&& make_loss,
                                  double tol) {
  std::vector<ArrayX<double>> ad;
  {
    Tape<double> tape;
    Tensor<double> loss = make_loss();
    tape.backward(loss);
    for (auto* t : inputs) {
      ad.push_back(t->has_grad() ? t->grad() : ArrayX<double>(ArrayX<double>::Zero(t->size())));
      t->zero_grad();
    }
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& v = inputs[k]->raw_value();
    for (Index j = 0; j < v.size(); ++j) {
      const double orig = v[j];
      const double h = 1e-5 * std::max(1.0, std::abs(orig));
      v[j] = orig + h;
      const double lp = make_loss().item();
      v[j] = orig - h;
      const double lm = make_loss().item();
      v[j] = orig;
      worst = std::max(worst, grad_rel_err(ad[k][j], (lp - lm) / (2 * h)));
    }
  }
  return {std::move(name), worst, tol, worst < tol};
}

inline Tensor<double> random_uniform_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0,
                                            bool requires_grad = true) {
  ArrayX<double> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(lo, hi);
  return Tensor<double>::from(std::move(shape), std::move(v), requires_grad);
}

namespace detail {

/// Values bounded away from 0, for safe division.
inline Tensor<double> random_signed_tensor(Shape shape, Rng& rng) {
  ArrayX<double> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(0.5, 2.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
  return Tensor<double>::from(std::move(shape), std::move(v), true);
}

inline NetworkConfig micro_config(const ActivationSpec& act) {
  NetworkConfig cfg;
  cfg.channels = 3;
  cfg.timepoints = 12;
  cfg.activation = act;
  cfg.dropout_rate = 0.25;
  cfg.temporal_kernel = 3;
  cfg.branch_filters = 2;
  cfg.deep_filters = 3;
  cfg.pool_width = 2;
  return cfg;
}

}  // namespace detail

/// The default-scope suite: every activation kind (maf at its sweep values),
/// every layer op, and a micro instantiation of each architecture.
inline std::vector<GradCheckReport> gradcheck_suite(std::uint64_t master_seed = 1618) {
  SeedSequence seeds(master_seed);
  std::vector<GradCheckReport> out;

  std::vector<ActivationSpec> acts = ActivationSpec::named_seven();
  for (double a : {-2.0, -1.0, 0.0, 2.0}) acts.emplace_back(ActivationKind::maf, a);
  for (const auto& spec : acts) {
    out.push_back(gradcheck_activation(spec, 10000, seeds.with("act").with(spec.name()).seed()));
  }

  auto proj_loss = [](const Tensor<double>& t, const Tensor<double>& w) { return sum(mul(t, w)); };

  {  // elementwise, same shape
    Rng rng(seeds.with("ew").rng());
    auto a = random_uniform_tensor({3, 4}, rng);
    auto b = detail::random_signed_tensor({3, 4}, rng);
    auto w = random_uniform_tensor({3, 4}, rng, 0.5, 1.5, false);
    for (auto [op, name] : {std::pair{EwOp::add, "add"}, {EwOp::sub, "sub"}, {EwOp::mul, "mul"}, {EwOp::div, "div"}}) {
      out.push_back(gradcheck_tensors(
          name, {&a, &b}, [&, op] { return proj_loss(elementwise(op, a, b), w); }, 1e-6));
    }
  }
  {  // elementwise with trailing broadcast
    Rng rng(seeds.with("ew-bcast").rng());
    auto a = random_uniform_tensor({2, 3, 4}, rng);
    auto b = detail::random_signed_tensor({4}, rng);
    auto w = random_uniform_tensor({2, 3, 4}, rng, 0.5, 1.5, false);
    out.push_back(gradcheck_tensors(
        "add (broadcast)", {&a, &b}, [&] { return proj_loss(add(a, b), w); }, 1e-6));
    out.push_back(gradcheck_tensors(
        "mul (broadcast)", {&a, &b}, [&] { return proj_loss(mul(a, b), w); }, 1e-6));
    out.push_back(gradcheck_tensors(
        "div (broadcast)", {&a, &b}, [&] { return proj_loss(div(a, b), w); }, 1e-6));
  }
  {
    Rng rng(seeds.with("scale").rng());
    auto a = random_uniform_tensor({3, 4}, rng);
    auto w = random_uniform_tensor({3, 4}, rng, 0.5, 1.5, false);
    out.push_back(gradcheck_tensors(
        "scale", {&a}, [&] { return proj_loss(scale(a, 1.7), w); }, 1e-6));
  }
  {
    Rng rng(seeds.with("reduce").rng());
    auto a = random_uniform_tensor({3, 5}, rng);
    out.push_back(gradcheck_tensors(
        "sum", {&a}, [&] { return sum(a); }, 1e-6));
    out.push_back(gradcheck_tensors(
        "mean", {&a}, [&] { return mean(a); }, 1e-6));
  }
  {
    Rng rng(seeds.with("reshape").rng());
    auto a = random_uniform_tensor({2, 3, 4}, rng);
    auto w = random_uniform_tensor({6, 4}, rng, 0.5, 1.5, false);
    out.push_back(gradcheck_tensors(
        "reshape", {&a}, [&] { return proj_loss(reshape(a, {6, 4}), w); }, 1e-6));
    auto wf = random_uniform_tensor({2, 12}, rng, 0.5, 1.5, false);
    out.push_back(gradcheck_tensors(
        "flatten", {&a}, [&] { return proj_loss(flatten(a), wf); }, 1e-6));
  }
  {
    Rng rng(seeds.with("concat").rng());
    auto a = random_uniform_tensor({2, 3}, rng);
    auto b = random_uniform_tensor({2, 3}, rng);
    auto w0 = random_uniform_tensor({4, 3}, rng, 0.5, 1.5, false);
    auto w1 = random_uniform_tensor({2, 6}, rng, 0.5, 1.5, false);
    out.push_back(gradcheck_tensors(
        "concat (axis 0)", {&a, &b}, [&] { return proj_loss(concat(a, b, 0), w0); }, 1e-6));
    out.push_back(gradcheck_tensors(
        "concat (axis 1)", {&a, &b}, [&] { return proj_loss(concat(a, b, 1), w1); }, 1e-6));
  }
  {
    Rng rng(seeds.with("conv").rng());
    auto x = random_uniform_tensor({2, 2, 4, 6}, rng);
    auto k = random_uniform_tensor({3, 2, 2, 3}, rng, -1.0, 1.0);
    auto b = random_uniform_tensor({3}, rng, -0.5, 0.5);
    auto w = random_uniform_tensor({2, 3, 3, 4}, rng, 0.5, 1.5, false);
    out.push_back(gradcheck_tensors(
        "conv2d", {&x, &k, &b}, [&] { return proj_loss(conv2d(x, k, b), w); }, 1e-5));
    auto wp = random_uniform_tensor({2, 3, 3, 3}, rng, 0.5, 1.5, false);
    out.push_back(gradcheck_tensors(
        "conv2d (stride 2, pad 1)", {&x, &k, &b},
        [&] { return proj_loss(conv2d(x, k, b, {2, 2}, {1, 1}), wp); }, 1e-5));
  }
  {
    Rng rng(seeds.with("pool").rng());
    auto x = random_uniform_tensor({2, 3, 4, 6}, rng);
    auto w = random_uniform_tensor({2, 3, 2, 2}, rng, 0.5, 1.5, false);
    out.push_back(gradcheck_tensors(
        "avg_pool2d", {&x}, [&] { return proj_loss(avg_pool2d(x, {2, 3}), w); }, 1e-6));
  }
  {
    Rng rng(seeds.with("dense").rng());
    auto x = random_uniform_tensor({3, 5}, rng);
    auto wgt = random_uniform_tensor({5, 4}, rng, -1.0, 1.0);
    auto b = random_uniform_tensor({4}, rng, -0.5, 0.5);
    auto w = random_uniform_tensor({3, 4}, rng, 0.5, 1.5, false);
    out.push_back(gradcheck_tensors(
        "dense", {&x, &wgt, &b}, [&] { return proj_loss(dense(x, wgt, b), w); }, 1e-6));
  }
  {
    Rng rng(seeds.with("bn").rng());
    auto x = random_uniform_tensor({3, 2, 2, 4}, rng);
    auto gamma = random_uniform_tensor({2}, rng, 0.5, 1.5);
    auto beta = random_uniform_tensor({2}, rng, -0.5, 0.5);
    auto w = random_uniform_tensor({3, 2, 2, 4}, rng, 0.5, 1.5, false);
    BatchNormState<double> state;
    out.push_back(gradcheck_tensors(
        "batch_norm (train)", {&x, &gamma, &beta},
        [&] { return proj_loss(batch_norm(x, gamma, beta, state, Mode::train), w); }, 1e-4));
    out.push_back(gradcheck_tensors(
        "batch_norm (eval)", {&x, &gamma, &beta},
        [&] { return proj_loss(batch_norm(x, gamma, beta, state, Mode::eval), w); }, 1e-6));
  }
  {
    Rng rng(seeds.with("dropout").rng());
    auto x = random_uniform_tensor({3, 4, 2, 2}, rng);
    auto w = random_uniform_tensor({3, 4, 2, 2}, rng, 0.5, 1.5, false);
    const std::uint64_t mask_seed = seeds.with("dropout-mask").seed();
    out.push_back(gradcheck_tensors(
        "dropout", {&x},
        [&] {
          Rng mask_rng(mask_seed);
          return proj_loss(dropout(x, 0.3, Mode::train, &mask_rng), w);
        },
        1e-6));
  }
  {
    Rng rng(seeds.with("softmax").rng());
    auto x = random_uniform_tensor({3, 4}, rng);
    auto w = random_uniform_tensor({3, 4}, rng, 0.5, 1.5, false);
    out.push_back(gradcheck_tensors(
        "softmax", {&x}, [&] { return proj_loss(softmax(x), w); }, 1e-6));
    auto logits = random_uniform_tensor({4, 3}, rng);
    std::vector<int> labels{0, 2, 1, 1};
    out.push_back(gradcheck_tensors(
        "softmax_cross_entropy", {&logits},
        [&] { return softmax_cross_entropy(logits, std::span<const int>(labels)); }, 1e-6));
  }
  {
    Rng rng(seeds.with("act-op").rng());
    auto x = random_uniform_tensor({3, 4}, rng);
    auto w = random_uniform_tensor({3, 4}, rng, 0.5, 1.5, false);
    out.push_back(gradcheck_tensors(
        "act_forward (swish)", {&x},
        [&] { return proj_loss(act_forward(ActivationSpec(ActivationKind::swish), x), w); }, 1e-6));
  }

  // whole networks on a 2-trial micro batch; smooth activation so finite
  // differences never step across an activation kink
  for (const std::string& arch : architecture_names()) {
    NetworkConfig cfg = detail::micro_config(ActivationSpec(ActivationKind::swish));
    Rng init_rng(seeds.with("net-init").with(arch).rng());
    auto net = build_network<double>(arch, cfg, init_rng);
    Rng data_rng(seeds.with("net-data").with(arch).rng());
    auto x = random_uniform_tensor({2, 1, cfg.channels, cfg.timepoints}, data_rng, -1.0, 1.0, false);
    std::vector<int> labels{0, 1};
    const std::uint64_t drop_seed = seeds.with("net-dropout").with(arch).seed();
    out.push_back(gradcheck_tensors(
        "network " + arch, net.parameters(),
        [&] {
          Rng drop_rng(drop_seed);
          return softmax_cross_entropy(net.forward_logits(x, Mode::train, &drop_rng),
                                       std::span<const int>(labels));
        },
        1e-3));
  }
  return out;
}

}  // namespace actfn
