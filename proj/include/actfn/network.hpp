#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "actfn/activations.hpp"
#include "actfn/ops.hpp"
#include "actfn/rng.hpp"
#include "actfn/tensor.hpp"

namespace actfn {

enum class LayerKind { conv, batchnorm, activation, avgpool, dropout, dense, flatten, concat };

struct LayerSpec {
  LayerKind kind = LayerKind::activation;
  Index filters = 0, kh = 0, kw = 0;  // conv
  Index wh = 0, ww = 0;               // avgpool window (stride = window)
  double rate = 0.0;                  // dropout
  Index units = 0;                    // dense

  static LayerSpec conv(Index filters, Index kh, Index kw) {
    LayerSpec s;
    s.kind = LayerKind::conv;
    s.filters = filters;
    s.kh = kh;
    s.kw = kw;
    return s;
  }
  static LayerSpec batchnorm() { return {LayerKind::batchnorm}; }
  static LayerSpec activation() { return {LayerKind::activation}; }
  static LayerSpec avgpool(Index wh, Index ww) {
    LayerSpec s;
    s.kind = LayerKind::avgpool;
    s.wh = wh;
    s.ww = ww;
    return s;
  }
  static LayerSpec dropout(double rate) {
    LayerSpec s;
    s.kind = LayerKind::dropout;
    s.rate = rate;
    return s;
  }
  static LayerSpec dense(Index units) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.units = units;
    return s;
  }
  static LayerSpec flatten() { return {LayerKind::flatten}; }
  static LayerSpec concat() { return {LayerKind::concat}; }
};

struct NetworkConfig {
  std::string arch = "fnirsnet";
  Index channels = 28;
  Index timepoints = 150;
  Index classes = 2;
  ActivationSpec activation{};
  double dropout_rate = 0.5;
  std::optional<bool> batch_norm;  // unset -> architecture default
  Index temporal_kernel = 11;
  Index branch_filters = 8;
  Index deep_filters = 16;
  Index pool_width = 5;
};

template <typename Scalar>
struct NetworkSnapshot {
  std::vector<ArrayX<Scalar>> params;
  std::vector<BatchNormState<Scalar>> bn_states;
};

template <typename Scalar>
class Network {
 public:
  struct Layer {
    LayerSpec spec;
    Tensor<Scalar> weight, bias;   // conv / dense
    Tensor<Scalar> gamma, beta;    // batchnorm
    BatchNormState<Scalar> bn;
  };

  Network(NetworkConfig cfg, std::vector<LayerSpec> branch_a, std::vector<LayerSpec> branch_b,
          std::vector<LayerSpec> trunk, Rng& init_rng)
      : cfg_(std::move(cfg)) {
    check(cfg_.channels >= 1 && cfg_.timepoints >= 1, cfg_.arch + ": input extents must be positive");
    check(cfg_.classes >= 2, cfg_.arch + ": need at least two classes");
    check((branch_a.empty()) == (branch_b.empty()), cfg_.arch + ": branches must both exist or both be empty");

    const Shape input{1, 1, cfg_.channels, cfg_.timepoints};
    Shape sa = input, sb = input;
    for (const auto& s : branch_a) branch_a_.push_back(materialize(s, sa, init_rng));
    for (const auto& s : branch_b) branch_b_.push_back(materialize(s, sb, init_rng));
    Shape st = input;
    if (!branch_a_.empty()) {
      check(!trunk.empty() && trunk.front().kind == LayerKind::concat,
            cfg_.arch + ": dual-branch trunk must begin with a merge");
      check(sa.size() == 4 && sb.size() == 4 && sa[2] == sb[2] && sa[3] == sb[3],
            cfg_.arch + ": branch outputs " + shape_string(sa) + " and " + shape_string(sb) + " cannot merge");
      st = Shape{1, sa[1] + sb[1], sa[2], sa[3]};
      trunk.erase(trunk.begin());
      trunk_.push_back(Layer{LayerSpec::concat(), {}, {}, {}, {}, {}});
    }
    for (const auto& s : trunk) trunk_.push_back(materialize(s, st, init_rng));
    check(st.size() == 2 && st[1] == cfg_.classes, cfg_.arch + ": network must end in a dense layer over classes");
    output_shape_ = st;
  }

  const NetworkConfig& config() const { return cfg_; }
  const std::string& name() const { return cfg_.arch; }

  /// Logits (pre-softmax); the training loss consumes these directly.
  Tensor<Scalar> forward_logits(const Tensor<Scalar>& x, Mode mode, Rng* dropout_rng = nullptr) {
    check(x.rank() == 4 && x.dim(1) == 1 && x.dim(2) == cfg_.channels && x.dim(3) == cfg_.timepoints,
          cfg_.arch + ": expected input (N,1," + std::to_string(cfg_.channels) + "," +
              std::to_string(cfg_.timepoints) + "), got " + shape_string(x.shape()));
    if (branch_a_.empty()) return run(trunk_, x, {}, mode, dropout_rng);
    Tensor<Scalar> ya = run(branch_a_, x, {}, mode, dropout_rng);
    Tensor<Scalar> yb = run(branch_b_, x, {}, mode, dropout_rng);
    return run(trunk_, x, std::pair{ya, yb}, mode, dropout_rng);
  }

  /// Class probabilities (softmax over logits).
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, Rng* dropout_rng = nullptr) {
    return softmax(forward_logits(x, mode, dropout_rng));
  }

  std::vector<Tensor<Scalar>*> parameters() {
    std::vector<Tensor<Scalar>*> out;
    for (auto* group : {&branch_a_, &branch_b_, &trunk_}) {
      for (auto& layer : *group) {
        if (layer.spec.kind == LayerKind::conv || layer.spec.kind == LayerKind::dense) {
          out.push_back(&layer.weight);
          out.push_back(&layer.bias);
        } else if (layer.spec.kind == LayerKind::batchnorm) {
          out.push_back(&layer.gamma);
          out.push_back(&layer.beta);
        }
      }
    }
    return out;
  }

  Index parameter_count() {
    Index n = 0;
    for (auto* p : parameters()) n += p->size();
    return n;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  /// Flat layer listing (branch A, branch B, then trunk) for introspection.
  std::vector<LayerSpec> layer_specs() const {
    std::vector<LayerSpec> out;
    for (const auto* group : {&branch_a_, &branch_b_, &trunk_}) {
      for (const auto& layer : *group) out.push_back(layer.spec);
    }
    return out;
  }

  /// One entry per activation slot; uniformity means they are all equal.
  std::vector<ActivationSpec> activation_specs() const {
    std::vector<ActivationSpec> out;
    for (const auto* group : {&branch_a_, &branch_b_, &trunk_}) {
      for (const auto& layer : *group) {
        if (layer.spec.kind == LayerKind::activation) out.push_back(cfg_.activation);
      }
    }
    return out;
  }

  NetworkSnapshot<Scalar> snapshot() {
    NetworkSnapshot<Scalar> snap;
    for (auto* p : parameters()) snap.params.push_back(p->value());
    for (auto* group : {&branch_a_, &branch_b_, &trunk_}) {
      for (auto& layer : *group) {
        if (layer.spec.kind == LayerKind::batchnorm) snap.bn_states.push_back(layer.bn);
      }
    }
    return snap;
  }

  void restore(const NetworkSnapshot<Scalar>& snap) {
    auto params = parameters();
    check(snap.params.size() == params.size(), cfg_.arch + ": snapshot parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      check(snap.params[i].size() == params[i]->size(), cfg_.arch + ": snapshot tensor size mismatch");
      params[i]->raw_value() = snap.params[i];
    }
    std::size_t bi = 0;
    for (auto* group : {&branch_a_, &branch_b_, &trunk_}) {
      for (auto& layer : *group) {
        if (layer.spec.kind == LayerKind::batchnorm) {
          check(bi < snap.bn_states.size(), cfg_.arch + ": snapshot batch-norm state mismatch");
          layer.bn = snap.bn_states[bi++];
        }
      }
    }
    check(bi == snap.bn_states.size(), cfg_.arch + ": snapshot batch-norm state mismatch");
  }

  const Shape& output_shape() const { return output_shape_; }

 private:
  Layer materialize(const LayerSpec& s, Shape& shape, Rng& rng) {
    Layer layer;
    layer.spec = s;
    switch (s.kind) {
      case LayerKind::conv: {
        check(shape.size() == 4, cfg_.arch + ": conv needs a 4-D stage, have " + shape_string(shape));
        const Index c = shape[1], h = shape[2], w = shape[3];
        check(s.kh <= h && s.kw <= w, cfg_.arch + ": conv kernel " + std::to_string(s.kh) + "x" +
                                          std::to_string(s.kw) + " exceeds stage " + shape_string(shape));
        const Index fan_in = c * s.kh * s.kw;
        layer.weight = he_uniform(Shape{s.filters, c, s.kh, s.kw}, fan_in, rng);
        layer.bias = Tensor<Scalar>::zeros(Shape{s.filters}, true);
        shape = Shape{shape[0], s.filters, h - s.kh + 1, w - s.kw + 1};
        break;
      }
      case LayerKind::batchnorm: {
        check(shape.size() == 4, cfg_.arch + ": batchnorm needs a 4-D stage");
        layer.gamma = Tensor<Scalar>::ones(Shape{shape[1]}, true);
        layer.beta = Tensor<Scalar>::zeros(Shape{shape[1]}, true);
        break;
      }
      case LayerKind::activation:
        break;
      case LayerKind::avgpool: {
        check(shape.size() == 4, cfg_.arch + ": avgpool needs a 4-D stage");
        check(s.wh <= shape[2] && s.ww <= shape[3],
              cfg_.arch + ": pool window exceeds stage " + shape_string(shape));
        shape = Shape{shape[0], shape[1], (shape[2] - s.wh) / s.wh + 1, (shape[3] - s.ww) / s.ww + 1};
        break;
      }
      case LayerKind::dropout:
        break;
      case LayerKind::flatten: {
        check(shape.size() >= 2, cfg_.arch + ": flatten needs at least 2 axes");
        Index features = 1;
        for (std::size_t i = 1; i < shape.size(); ++i) features *= shape[i];
        shape = Shape{shape[0], features};
        break;
      }
      case LayerKind::dense: {
        check(shape.size() == 2, cfg_.arch + ": dense needs a flattened stage, have " + shape_string(shape));
        layer.weight = he_uniform(Shape{shape[1], s.units}, shape[1], rng);
        layer.bias = Tensor<Scalar>::zeros(Shape{s.units}, true);
        shape = Shape{shape[0], s.units};
        break;
      }
      case LayerKind::concat:
        throw std::invalid_argument(cfg_.arch + ": merge marker only allowed at trunk head");
    }
    return layer;
  }

  Tensor<Scalar> he_uniform(Shape shape, Index fan_in, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    ArrayX<Scalar> v(numel(shape));
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(rng.uniform(-limit, limit));
    return Tensor<Scalar>::from(std::move(shape), std::move(v), true);
  }

  Tensor<Scalar> run(std::vector<Layer>& layers, const Tensor<Scalar>& x,
                     std::optional<std::pair<Tensor<Scalar>, Tensor<Scalar>>> merge, Mode mode, Rng* dropout_rng) {
    Tensor<Scalar> h = x;
    for (auto& layer : layers) {
      switch (layer.spec.kind) {
        case LayerKind::conv: h = conv2d(h, layer.weight, layer.bias); break;
        case LayerKind::batchnorm: h = batch_norm(h, layer.gamma, layer.beta, layer.bn, mode); break;
        case LayerKind::activation: h = act_forward(cfg_.activation, h); break;
        case LayerKind::avgpool: h = avg_pool2d(h, {layer.spec.wh, layer.spec.ww}); break;
        case LayerKind::dropout: h = dropout(h, layer.spec.rate, mode, dropout_rng); break;
        case LayerKind::flatten: h = flatten(h); break;
        case LayerKind::dense: h = dense(h, layer.weight, layer.bias); break;
        case LayerKind::concat:
          check(merge.has_value(), cfg_.arch + ": merge marker without branch outputs");
          h = concat(merge->first, merge->second, 1);
          break;
      }
    }
    return h;
  }

  NetworkConfig cfg_;
  std::vector<Layer> branch_a_, branch_b_, trunk_;
  Shape output_shape_;
};

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

namespace detail {

/// conv -> (bn) -> act -> dropout block; batch norm, when enabled, normalizes
/// every activation input, and dropout regularizes every block's features.
inline void conv_block(std::vector<LayerSpec>& out, Index filters, Index kh, Index kw, bool bn, double drop) {
  out.push_back(LayerSpec::conv(filters, kh, kw));
  if (bn) out.push_back(LayerSpec::batchnorm());
  out.push_back(LayerSpec::activation());
  if (drop > 0) out.push_back(LayerSpec::dropout(drop));
}

inline void classifier_tail(std::vector<LayerSpec>& out, const NetworkConfig& cfg) {
  out.push_back(LayerSpec::avgpool(1, cfg.pool_width));
  out.push_back(LayerSpec::dropout(cfg.dropout_rate));
  out.push_back(LayerSpec::flatten());
  out.push_back(LayerSpec::dense(cfg.classes));
}

template <typename Scalar>
Network<Scalar> build_dual_branch(NetworkConfig cfg, bool bn_default, Rng& rng) {
  const bool bn = cfg.batch_norm.value_or(bn_default);
  const Index f = cfg.branch_filters;
  std::vector<LayerSpec> a, b, t;
  // branch A: collapse the channel axis first, then model time
  detail::conv_block(a, f, cfg.channels, 1, bn, 0.0);
  detail::conv_block(a, f, 1, cfg.temporal_kernel, bn, 0.0);
  // branch B: time first, channels second
  detail::conv_block(b, f, 1, cfg.temporal_kernel, bn, 0.0);
  detail::conv_block(b, f, cfg.channels, 1, bn, 0.0);
  t.push_back(LayerSpec::concat());
  detail::conv_block(t, cfg.deep_filters, 1, cfg.temporal_kernel, bn, 0.5 * cfg.dropout_rate);
  detail::classifier_tail(t, cfg);
  return Network<Scalar>(std::move(cfg), std::move(a), std::move(b), std::move(t), rng);
}

}  // namespace detail

/// Dual-branch spatio-temporal design: spatial-then-temporal and
/// temporal-then-spatial branches, concatenated features, one fusion block.
template <typename Scalar>
Network<Scalar> build_fnirsnet(NetworkConfig cfg, Rng& rng) {
  cfg.arch = "fnirsnet";
  return detail::build_dual_branch<Scalar>(std::move(cfg), /*bn_default=*/false, rng);
}

/// Same dual-branch topology with batch norm in front of every activation.
template <typename Scalar>
Network<Scalar> build_absolutenet(NetworkConfig cfg, Rng& rng) {
  cfg.arch = "absolutenet";
  return detail::build_dual_branch<Scalar>(std::move(cfg), /*bn_default=*/true, rng);
}

/// Single branch: spatial aggregation (CxX then 1x1 mix), then two temporal
/// modeling layers.
template <typename Scalar>
Network<Scalar> build_mdnn(NetworkConfig cfg, Rng& rng) {
  cfg.arch = "mdnn";
  const bool bn = cfg.batch_norm.value_or(false);
  std::vector<LayerSpec> t;
  detail::conv_block(t, cfg.branch_filters, cfg.channels, 1, bn, 0.5 * cfg.dropout_rate);
  detail::conv_block(t, cfg.deep_filters, 1, 1, bn, 0.5 * cfg.dropout_rate);
  detail::conv_block(t, cfg.deep_filters, 1, cfg.temporal_kernel, bn, 0.5 * cfg.dropout_rate);
  detail::conv_block(t, cfg.deep_filters, 1, cfg.temporal_kernel, bn, 0.5 * cfg.dropout_rate);
  detail::classifier_tail(t, cfg);
  return Network<Scalar>(std::move(cfg), {}, {}, std::move(t), rng);
}

/// One temporal-spatial convolution block with a single activation slot.
template <typename Scalar>
Network<Scalar> build_shallowconvnet(NetworkConfig cfg, Rng& rng) {
  cfg.arch = "shallowconvnet";
  const bool bn = cfg.batch_norm.value_or(true);
  std::vector<LayerSpec> t;
  t.push_back(LayerSpec::conv(cfg.branch_filters, 1, cfg.temporal_kernel));
  t.push_back(LayerSpec::conv(cfg.branch_filters, cfg.channels, 1));
  if (bn) t.push_back(LayerSpec::batchnorm());
  t.push_back(LayerSpec::activation());
  if (cfg.dropout_rate > 0) t.push_back(LayerSpec::dropout(0.5 * cfg.dropout_rate));
  detail::classifier_tail(t, cfg);
  return Network<Scalar>(std::move(cfg), {}, {}, std::move(t), rng);
}

inline const std::vector<std::string>& architecture_names() {
  static const std::vector<std::string> names{"fnirsnet", "absolutenet", "mdnn", "shallowconvnet"};
  return names;
}

template <typename Scalar>
Network<Scalar> build_network(const std::string& arch, NetworkConfig cfg, Rng& rng) {
  cfg.arch = arch;
  if (arch == "fnirsnet") return build_fnirsnet<Scalar>(std::move(cfg), rng);
  if (arch == "absolutenet") return build_absolutenet<Scalar>(std::move(cfg), rng);
  if (arch == "mdnn") return build_mdnn<Scalar>(std::move(cfg), rng);
  if (arch == "shallowconvnet") return build_shallowconvnet<Scalar>(std::move(cfg), rng);
  throw std::invalid_argument("unknown architecture '" + arch +
                              "' (expected fnirsnet, absolutenet, mdnn, or shallowconvnet)");
}

}  // namespace actfn
