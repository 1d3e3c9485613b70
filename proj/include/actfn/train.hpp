#pragma once
// Experimental protocol: Adam, stratified 5-fold cross-validation with
// 60/20/20 splits, best-validation-loss model selection, a fixed-length
// refit on train+val, and confusion-count metrics.

#include <actfn/dataset.hpp>
#include <actfn/network.hpp>
#include <actfn/ops.hpp>
#include <actfn/rng.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace actfn {

struct TrainConfig {
    double learning_rate = 9e-4;
    int batch_size = 16;
    int select_epochs = 200;  // phase 1: pick the epoch with the lowest val loss
    int refit_epochs = 100;   // phase 2: continue from that snapshot on train+val
    int folds = 5;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const {
        if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
        if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
        if (folds < 2) throw std::invalid_argument("folds must be at least 2");
        if (select_epochs < 1 || refit_epochs < 0)
            throw std::invalid_argument("epoch counts out of range");
        if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0))
            throw std::invalid_argument("optimizer constants out of range");
    }
};

template <typename Scalar>
struct AdamState {
    std::vector<Eigen::Array<Scalar, Eigen::Dynamic, 1>> m, v;
    long steps = 0;
};

// One bias-corrected Adam update over the parameter list. Parameters without
// an accumulated gradient are treated as having gradient zero (their moments
// decay). Moment buffers are allocated on first use and must keep matching
// the parameter shapes afterwards.
template <typename Scalar>
void adam_step(const std::vector<Tensor<Scalar>*>& params, AdamState<Scalar>& state,
               const TrainConfig& cfg) {
    if (state.m.empty()) {
        state.m.reserve(params.size());
        state.v.reserve(params.size());
        for (const Tensor<Scalar>* p : params) {
            state.m.emplace_back(Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(p->size()));
            state.v.emplace_back(Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(p->size()));
        }
    }
    if (state.m.size() != params.size())
        throw std::invalid_argument("adam_step: optimizer state does not match parameter list");
    ++state.steps;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.steps));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.steps));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<Scalar>& p = *params[i];
        if (state.m[i].size() != p.size())
            throw std::invalid_argument("adam_step: moment shape does not match parameter");
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (p.has_grad()) {
            const auto& g = p.grad();
            m = Scalar(cfg.beta1) * m + Scalar(1.0 - cfg.beta1) * g;
            v = Scalar(cfg.beta2) * v + Scalar(1.0 - cfg.beta2) * g.square();
        } else {
            m *= Scalar(cfg.beta1);
            v *= Scalar(cfg.beta2);
        }
        p.raw_value() -= (Scalar(cfg.learning_rate) * (m / Scalar(bc1))) /
                         ((v / Scalar(bc2)).sqrt() + Scalar(cfg.epsilon));
    }
}

struct FoldSplit {
    std::vector<Index> train, val, test;
};

// Label-stratified k-fold partitions. Each class's shuffled index list is cut
// into k test chunks; the remainder is reshuffled per fold and split 75/25
// into train/val, giving the 60/20/20 layout overall.
template <typename Scalar>
std::vector<FoldSplit> make_folds(const TrialSet<Scalar>& trials, int folds, std::uint64_t seed) {
    trials.validate();
    if (folds < 2) throw std::invalid_argument("make_folds: folds must be at least 2");
    if (trials.size() < static_cast<Index>(folds) * 2)
        throw std::invalid_argument("make_folds: too few trials for " + std::to_string(folds) +
                                    " folds");
    std::vector<Index> by_class[2];
    for (Index i = 0; i < trials.size(); ++i)
        by_class[trials.labels[static_cast<std::size_t>(i)]].push_back(i);
    for (int c = 0; c < 2; ++c) {
        if (static_cast<Index>(by_class[c].size()) < folds)
            throw std::invalid_argument("make_folds: class " + std::to_string(c) +
                                        " has fewer trials than folds");
        Rng rng(SeedSequence(seed).with("folds").with(static_cast<std::uint64_t>(c)).seed());
        rng.shuffle(by_class[c]);
    }

    std::vector<FoldSplit> out(static_cast<std::size_t>(folds));
    for (int k = 0; k < folds; ++k) {
        FoldSplit& f = out[static_cast<std::size_t>(k)];
        for (int c = 0; c < 2; ++c) {
            const auto& cls = by_class[c];
            const std::size_t n = cls.size();
            const std::size_t lo = n * static_cast<std::size_t>(k) / static_cast<std::size_t>(folds);
            const std::size_t hi =
                n * static_cast<std::size_t>(k + 1) / static_cast<std::size_t>(folds);
            f.test.insert(f.test.end(), cls.begin() + static_cast<std::ptrdiff_t>(lo),
                          cls.begin() + static_cast<std::ptrdiff_t>(hi));
            std::vector<Index> rest;
            rest.reserve(n - (hi - lo));
            rest.insert(rest.end(), cls.begin(), cls.begin() + static_cast<std::ptrdiff_t>(lo));
            rest.insert(rest.end(), cls.begin() + static_cast<std::ptrdiff_t>(hi), cls.end());
            Rng rng(SeedSequence(seed)
                        .with("trainval")
                        .with(static_cast<std::uint64_t>(k))
                        .with(static_cast<std::uint64_t>(c))
                        .seed());
            rng.shuffle(rest);
            const std::size_t ntrain = rest.size() * 3 / 4;
            f.train.insert(f.train.end(), rest.begin(),
                           rest.begin() + static_cast<std::ptrdiff_t>(ntrain));
            f.val.insert(f.val.end(), rest.begin() + static_cast<std::ptrdiff_t>(ntrain),
                         rest.end());
        }
    }
    return out;
}

struct ConfusionCounts {
    std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
    std::int64_t total() const { return tp + tn + fp + fn; }
};

// Percentages; a metric whose reference class is empty is reported as absent
// rather than silently zero.
struct Metrics {
    double accuracy_pct = 0.0;
    std::optional<double> sensitivity_pct, specificity_pct;
};

inline Metrics metrics(const ConfusionCounts& c) {
    if (c.tp < 0 || c.tn < 0 || c.fp < 0 || c.fn < 0)
        throw std::invalid_argument("metrics: negative confusion count");
    if (c.total() == 0) throw std::invalid_argument("metrics: empty confusion matrix");
    Metrics m;
    m.accuracy_pct = 100.0 * static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    if (c.tp + c.fn > 0)
        m.sensitivity_pct = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    if (c.tn + c.fp > 0)
        m.specificity_pct = 100.0 * static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
    return m;
}

struct FoldResult {
    ConfusionCounts confusion;      // on the fold's test split
    double train_accuracy_pct = 0;  // on the phase-2 training data (train+val)
    int selected_epoch = 0;         // 1-based phase-1 epoch with minimum val loss
    double seconds = 0;             // wall clock for the whole fold
};

namespace detail {

inline std::size_t argmin_earliest(const std::vector<double>& xs) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < xs.size(); ++i)
        if (xs[i] < xs[best]) best = i;
    return best;
}

template <typename Scalar>
Tensor<Scalar> batch_tensor(const TrialSet<Scalar>& set, const std::vector<Index>& order,
                            std::size_t lo, std::size_t hi, std::vector<int>& labels_out) {
    const Index c = set.channels(), t = set.timepoints(), stride = c * t;
    const Index b = static_cast<Index>(hi - lo);
    Eigen::Array<Scalar, Eigen::Dynamic, 1> buf(b * stride);
    labels_out.clear();
    for (std::size_t i = lo; i < hi; ++i) {
        const Index k = order[i];
        buf.segment(static_cast<Index>(i - lo) * stride, stride) =
            set.data.value().segment(k * stride, stride);
        labels_out.push_back(set.labels[static_cast<std::size_t>(k)]);
    }
    return Tensor<Scalar>::from({b, 1, c, t}, std::move(buf));
}

template <typename Scalar>
std::vector<Index> iota_indices(const TrialSet<Scalar>& set) {
    std::vector<Index> idx(static_cast<std::size_t>(set.size()));
    std::iota(idx.begin(), idx.end(), Index{0});
    return idx;
}

// Mean cross-entropy over a whole split in eval mode (no recording).
template <typename Scalar>
double eval_loss(Network<Scalar>& net, const TrialSet<Scalar>& set, int batch_size) {
    const auto idx = iota_indices(set);
    std::vector<int> labels;
    double acc = 0.0;
    for (std::size_t lo = 0; lo < idx.size(); lo += static_cast<std::size_t>(batch_size)) {
        const std::size_t hi = std::min(idx.size(), lo + static_cast<std::size_t>(batch_size));
        auto x = batch_tensor(set, idx, lo, hi, labels);
        auto loss = softmax_cross_entropy(net.forward_logits(x, Mode::eval), labels);
        acc += loss.item() * static_cast<double>(hi - lo);
    }
    return acc / static_cast<double>(set.size());
}

template <typename Scalar>
ConfusionCounts eval_confusion(Network<Scalar>& net, const TrialSet<Scalar>& set, int batch_size) {
    const auto idx = iota_indices(set);
    std::vector<int> labels;
    ConfusionCounts c;
    for (std::size_t lo = 0; lo < idx.size(); lo += static_cast<std::size_t>(batch_size)) {
        const std::size_t hi = std::min(idx.size(), lo + static_cast<std::size_t>(batch_size));
        auto x = batch_tensor(set, idx, lo, hi, labels);
        auto pred = argmax_rows(net.forward_logits(x, Mode::eval));
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (labels[i] == 1)
                (pred[i] == 1 ? c.tp : c.fn) += 1;
            else
                (pred[i] == 0 ? c.tn : c.fp) += 1;
        }
    }
    return c;
}

// One epoch of shuffled mini-batch SGD; returns the sample-weighted mean loss.
template <typename Scalar>
double train_epoch(Network<Scalar>& net, const TrialSet<Scalar>& set, AdamState<Scalar>& opt,
                   const TrainConfig& cfg, Rng& rng, const char* phase, int epoch) {
    auto order = iota_indices(set);
    rng.shuffle(order);
    std::vector<int> labels;
    double acc = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
        auto x = batch_tensor(set, order, lo, hi, labels);
        net.zero_grad();
        Tape<Scalar> tape;
        auto loss = softmax_cross_entropy(net.forward_logits(x, Mode::train, &rng), labels);
        const double l = loss.item();
        if (!std::isfinite(l))
            throw std::runtime_error(std::string("train_protocol: non-finite loss in ") + phase +
                                     " epoch " + std::to_string(epoch));
        tape.backward(loss);
        adam_step(net.parameters(), opt, cfg);
        acc += l * static_cast<double>(hi - lo);
    }
    return acc / static_cast<double>(set.size());
}

}  // namespace detail

// Optional peek into the protocol; every hook may be left empty.
template <typename Scalar>
struct TrainObserver {
    std::function<void(const Network<Scalar>&, int, double, double)> on_select_epoch;
    std::function<void(const Network<Scalar>&)> on_refit_start;
    std::function<void(const Network<Scalar>&, int, double)> on_refit_epoch;
};

// Two-phase protocol on pre-standardized splits:
//   phase 1: up to select_epochs epochs on the train split, snapshotting
//            parameters at the epoch of minimum validation loss (ties break
//            to the earliest epoch);
//   phase 2: restore that snapshot, train refit_epochs more on train+val
//            with a fresh optimizer, then evaluate once on the test split.
// Non-finite losses abort the fold with a diagnostic.
template <typename Scalar>
FoldResult train_protocol(Network<Scalar>& net, const TrialSet<Scalar>& train_split,
                          const TrialSet<Scalar>& val_split, const TrialSet<Scalar>& test_split,
                          const TrainConfig& cfg, Rng& rng,
                          const TrainObserver<Scalar>* obs = nullptr) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();

    AdamState<Scalar> opt;
    NetworkSnapshot<Scalar> best;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    for (int epoch = 1; epoch <= cfg.select_epochs; ++epoch) {
        const double tl = detail::train_epoch(net, train_split, opt, cfg, rng, "selection", epoch);
        const double vl = detail::eval_loss(net, val_split, cfg.batch_size);
        if (!std::isfinite(vl))
            throw std::runtime_error("train_protocol: non-finite validation loss at epoch " +
                                     std::to_string(epoch));
        if (vl < best_val) {
            best_val = vl;
            best_epoch = epoch;
            best = net.snapshot();
        }
        if (obs && obs->on_select_epoch) obs->on_select_epoch(net, epoch, tl, vl);
    }

    net.restore(best);
    if (obs && obs->on_refit_start) obs->on_refit_start(net);
    const TrialSet<Scalar> combined = TrialSet<Scalar>::concat(train_split, val_split);
    AdamState<Scalar> opt2;
    for (int epoch = 1; epoch <= cfg.refit_epochs; ++epoch) {
        const double tl = detail::train_epoch(net, combined, opt2, cfg, rng, "refit", epoch);
        if (obs && obs->on_refit_epoch) obs->on_refit_epoch(net, epoch, tl);
    }

    FoldResult r;
    r.confusion = detail::eval_confusion(net, test_split, cfg.batch_size);
    const ConfusionCounts tc = detail::eval_confusion(net, combined, cfg.batch_size);
    r.train_accuracy_pct = metrics(tc).accuracy_pct;
    r.selected_epoch = best_epoch;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

}  // namespace actfn
