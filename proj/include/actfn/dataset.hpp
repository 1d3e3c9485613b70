#pragma once
// Trial-level dataset handling: epoching, class balancing, per-split
// standardization, the synthetic hemodynamic generator, and the FNIRSET
// on-disk format (JSON header + float32 little-endian binary).

#include <actfn/rng.hpp>
#include <actfn/signal.hpp>
#include <actfn/tensor.hpp>

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace actfn {

// Labels: deviant = 1, standard = 0. subject/run tags ride along per trial;
// the synthetic generator fills them with deterministic cyclic values.
template <typename Scalar>
struct TrialSet {
    Tensor<Scalar> data;  // (trials, channels, timepoints)
    std::vector<int> labels;
    std::vector<int> subject_ids;
    std::vector<int> run_ids;

    Index size() const { return data.defined() ? data.dim(0) : 0; }
    Index channels() const { return data.dim(1); }
    Index timepoints() const { return data.dim(2); }

    void validate() const {
        if (!data.defined() || data.rank() != 3)
            throw std::invalid_argument("TrialSet: data must be (trials, channels, timepoints)");
        const std::size_t n = static_cast<std::size_t>(data.dim(0));
        if (labels.size() != n || subject_ids.size() != n || run_ids.size() != n)
            throw std::invalid_argument("TrialSet: per-trial metadata size mismatch");
        for (int l : labels)
            if (l != 0 && l != 1)
                throw std::invalid_argument("TrialSet: labels must be 0 (standard) or 1 (deviant)");
    }

    Index count_label(int label) const {
        return static_cast<Index>(std::count(labels.begin(), labels.end(), label));
    }

    TrialSet subset(const std::vector<Index>& idx) const {
        validate();
        const Index c = channels(), t = timepoints(), stride = c * t;
        Eigen::Array<Scalar, Eigen::Dynamic, 1> out(static_cast<Index>(idx.size()) * stride);
        TrialSet r;
        r.labels.reserve(idx.size());
        r.subject_ids.reserve(idx.size());
        r.run_ids.reserve(idx.size());
        Index row = 0;
        for (Index i : idx) {
            if (i < 0 || i >= size()) throw std::out_of_range("TrialSet::subset: index out of range");
            out.segment(row * stride, stride) = data.value().segment(i * stride, stride);
            r.labels.push_back(labels[static_cast<std::size_t>(i)]);
            r.subject_ids.push_back(subject_ids[static_cast<std::size_t>(i)]);
            r.run_ids.push_back(run_ids[static_cast<std::size_t>(i)]);
            ++row;
        }
        r.data = Tensor<Scalar>::from({static_cast<Index>(idx.size()), c, t}, std::move(out));
        return r;
    }

    static TrialSet concat(const TrialSet& a, const TrialSet& b) {
        a.validate();
        b.validate();
        if (a.channels() != b.channels() || a.timepoints() != b.timepoints())
            throw std::invalid_argument("TrialSet::concat: trial shapes differ");
        Eigen::Array<Scalar, Eigen::Dynamic, 1> out(a.data.size() + b.data.size());
        out << a.data.value(), b.data.value();
        TrialSet r;
        r.data = Tensor<Scalar>::from({a.size() + b.size(), a.channels(), a.timepoints()},
                                      std::move(out));
        auto join = [](const std::vector<int>& x, const std::vector<int>& y) {
            std::vector<int> v = x;
            v.insert(v.end(), y.begin(), y.end());
            return v;
        };
        r.labels = join(a.labels, b.labels);
        r.subject_ids = join(a.subject_ids, b.subject_ids);
        r.run_ids = join(a.run_ids, b.run_ids);
        return r;
    }
};

// One trial per stimulus onset: the (channels, epoch_samples) window starting
// at the onset sample. A window running past the recording is an error, never
// a silent truncation; overlapping windows are fine.
template <typename Scalar>
TrialSet<Scalar> epoch(const Tensor<Scalar>& signal, const std::vector<Index>& onsets,
                       const std::vector<int>& onset_labels, const RecordingMeta& meta,
                       int subject_id = 0, int run_id = 0) {
    detail::require_rank2(signal, "epoch");
    if (onsets.size() != onset_labels.size())
        throw std::invalid_argument("epoch: one label per onset required");
    const Index c = signal.dim(0), total = signal.dim(1);
    const Index w = meta.epoch_samples();
    const Index n = static_cast<Index>(onsets.size());

    Eigen::Array<Scalar, Eigen::Dynamic, 1> out(n * c * w);
    detail::ConstRowMajorMap<Scalar> in(signal.value().data(), c, total);
    for (Index k = 0; k < n; ++k) {
        const Index on = onsets[static_cast<std::size_t>(k)];
        if (on < 0 || on + w > total)
            throw std::invalid_argument("epoch: onset " + std::to_string(on) +
                                        " does not leave a full window in the recording");
        for (Index i = 0; i < c; ++i)
            for (Index j = 0; j < w; ++j) out[(k * c + i) * w + j] = in(i, on + j);
    }
    TrialSet<Scalar> r;
    r.data = Tensor<Scalar>::from({n, c, w}, std::move(out));
    r.labels = onset_labels;
    r.subject_ids.assign(static_cast<std::size_t>(n), subject_id);
    r.run_ids.assign(static_cast<std::size_t>(n), run_id);
    r.validate();
    return r;
}

// Uniformly subsample the majority class (without replacement) down to the
// minority count, then shuffle the trial order. Already-balanced input keeps
// its trial multiset and only gets reordered.
template <typename Scalar>
TrialSet<Scalar> balance(const TrialSet<Scalar>& trials, Rng& rng) {
    trials.validate();
    std::vector<Index> by_class[2];
    for (Index i = 0; i < trials.size(); ++i)
        by_class[trials.labels[static_cast<std::size_t>(i)]].push_back(i);
    if (by_class[0].empty() || by_class[1].empty())
        throw std::invalid_argument("balance: a class has no trials");
    const std::size_t keep = std::min(by_class[0].size(), by_class[1].size());

    std::vector<Index> chosen;
    for (auto& cls : by_class) {
        if (cls.size() > keep) {
            rng.shuffle(cls);
            cls.resize(keep);
        }
        chosen.insert(chosen.end(), cls.begin(), cls.end());
    }
    rng.shuffle(chosen);
    return trials.subset(chosen);
}

template <typename Scalar>
struct ChannelStats {
    std::vector<Scalar> mean, stddev;
};

// Per-channel moments over every trial and timepoint of the given split.
template <typename Scalar>
ChannelStats<Scalar> channel_stats(const TrialSet<Scalar>& split) {
    split.validate();
    const Index n = split.size(), c = split.channels(), t = split.timepoints();
    if (n < 2) throw std::invalid_argument("channel_stats: need at least 2 trials");
    ChannelStats<Scalar> s;
    s.mean.assign(static_cast<std::size_t>(c), Scalar(0));
    s.stddev.assign(static_cast<std::size_t>(c), Scalar(0));
    const auto& v = split.data.value();
    for (Index i = 0; i < c; ++i) {
        double acc = 0.0;
        for (Index k = 0; k < n; ++k)
            for (Index j = 0; j < t; ++j) acc += static_cast<double>(v[(k * c + i) * t + j]);
        const double mu = acc / static_cast<double>(n * t);
        double var = 0.0;
        for (Index k = 0; k < n; ++k)
            for (Index j = 0; j < t; ++j) {
                double d = static_cast<double>(v[(k * c + i) * t + j]) - mu;
                var += d * d;
            }
        var /= static_cast<double>(n * t);
        const double sd = std::sqrt(var);
        if (sd <= 1e-12 * (1.0 + std::abs(mu)))
            throw std::invalid_argument("standardize: channel " + std::to_string(i) +
                                        " has zero variance");
        s.mean[static_cast<std::size_t>(i)] = static_cast<Scalar>(mu);
        s.stddev[static_cast<std::size_t>(i)] = static_cast<Scalar>(sd);
    }
    return s;
}

// z-score each channel using statistics from this split alone. Splits are
// standardized independently; nothing is shared across train/val/test.
template <typename Scalar>
TrialSet<Scalar> standardize(const TrialSet<Scalar>& split) {
    const ChannelStats<Scalar> s = channel_stats(split);
    const Index n = split.size(), c = split.channels(), t = split.timepoints();
    Eigen::Array<Scalar, Eigen::Dynamic, 1> out(split.data.size());
    const auto& v = split.data.value();
    for (Index k = 0; k < n; ++k)
        for (Index i = 0; i < c; ++i) {
            const Scalar mu = s.mean[static_cast<std::size_t>(i)];
            const Scalar sd = s.stddev[static_cast<std::size_t>(i)];
            for (Index j = 0; j < t; ++j) {
                const Index f = (k * c + i) * t + j;
                out[f] = (v[f] - mu) / sd;
            }
        }
    TrialSet<Scalar> r = split;
    r.data = Tensor<Scalar>::from(split.data.shape(), std::move(out));
    return r;
}

namespace detail {

// Canonical double-gamma hemodynamic response sampled on the epoch grid,
// peak near 6 s with an undershoot near 12 s, normalized to peak 1.
inline std::vector<double> hrf_curve(const RecordingMeta& meta) {
    const Index t = meta.epoch_samples();
    const double a1 = 7.0, b1 = 1.0, a2 = 13.0, b2 = 1.0, ratio = 1.0 / 6.0;
    auto gamma_pdf = [](double x, double a, double b) {
        if (x <= 0.0) return 0.0;
        return std::exp((a - 1.0) * std::log(x) - x / b - std::lgamma(a) - a * std::log(b));
    };
    std::vector<double> h(static_cast<std::size_t>(t));
    double peak = 0.0;
    for (Index i = 0; i < t; ++i) {
        double sec = static_cast<double>(i) / meta.target_rate_hz;
        h[static_cast<std::size_t>(i)] = gamma_pdf(sec, a1, b1) - ratio * gamma_pdf(sec, a2, b2);
        peak = std::max(peak, std::abs(h[static_cast<std::size_t>(i)]));
    }
    for (double& v : h) v /= peak;
    return h;
}

}  // namespace detail

// Synthetic oddball trials. Each trial is the canonical hemodynamic response
// on the HbO2 channels (rows [0, C/2)) with an inverted, smaller copy on the
// HbR channels (rows [C/2, C)), scaled per class:
//   standard amplitude A, deviant amplitude A * (1 + class_effect), with a
// fixed base gain A = 4 chosen so that at the default noise_sigma the
// deviant/standard contrast survives per-channel standardization (which
// erases the absolute scale and leaves only the signal-to-noise ratio).
// Noise is 1/f-shaped (cumulative-summed white noise rescaled to noise_sigma)
// and amplitudes get N(1, 0.2^2) jitter; both are skipped entirely at
// noise_sigma = 0 so the noiseless set is exactly separable. Labels
// alternate 0,1 so any prefix stays balanced. Bit-reproducible for a given
// rng state.
template <typename Scalar = double>
TrialSet<Scalar> synth_generate(Index n_trials, double class_effect, double noise_sigma, Rng& rng,
                                const RecordingMeta& meta = {}) {
    meta.validate();
    if (n_trials <= 0 || n_trials % 2 != 0)
        throw std::invalid_argument("synth_generate: n_trials must be positive and even");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
        throw std::invalid_argument("synth_generate: noise_sigma must be >= 0");
    if (!std::isfinite(class_effect) || class_effect <= -1.0)
        throw std::invalid_argument("synth_generate: class_effect must be finite and > -1");
    if (meta.channel_count % 2 != 0)
        throw std::invalid_argument("synth_generate: channel_count must be even (HbO2+HbR)");

    const Index c = meta.channel_count, t = meta.epoch_samples(), pairs = c / 2;
    const std::vector<double> h = detail::hrf_curve(meta);
    // fixed per-pair gain profile; keeps channels distinguishable without
    // affecting class separability
    std::vector<double> gain(static_cast<std::size_t>(pairs));
    for (Index p = 0; p < pairs; ++p)
        gain[static_cast<std::size_t>(p)] =
            1.0 + 0.2 * std::cos(2.0 * std::numbers::pi * static_cast<double>(p) /
                                 static_cast<double>(pairs));

    TrialSet<Scalar> r;
    Eigen::Array<Scalar, Eigen::Dynamic, 1> out(n_trials * c * t);
    r.labels.resize(static_cast<std::size_t>(n_trials));
    r.subject_ids.resize(static_cast<std::size_t>(n_trials));
    r.run_ids.resize(static_cast<std::size_t>(n_trials));
    std::vector<double> noise(static_cast<std::size_t>(t));

    for (Index k = 0; k < n_trials; ++k) {
        const int label = static_cast<int>(k % 2);
        r.labels[static_cast<std::size_t>(k)] = label;
        r.subject_ids[static_cast<std::size_t>(k)] = static_cast<int>(k % 10);
        r.run_ids[static_cast<std::size_t>(k)] = static_cast<int>(k % 3);

        double amp = 4.0 * ((label == 1) ? 1.0 + class_effect : 1.0);
        if (noise_sigma > 0.0) amp *= 1.0 + 0.2 * rng.normal();

        for (Index i = 0; i < c; ++i) {
            const Index p = i % pairs;
            const double species = (i < pairs) ? 1.0 : -0.4;  // HbO2 vs inverted HbR
            const double a = amp * species * gain[static_cast<std::size_t>(p)];
            Scalar* row = out.data() + (k * c + i) * t;
            for (Index j = 0; j < t; ++j)
                row[j] = static_cast<Scalar>(a * h[static_cast<std::size_t>(j)]);
            if (noise_sigma > 0.0) {
                double acc = 0.0, mean = 0.0;
                for (Index j = 0; j < t; ++j) {
                    acc += rng.normal();
                    noise[static_cast<std::size_t>(j)] = acc;
                    mean += acc;
                }
                mean /= static_cast<double>(t);
                double var = 0.0;
                for (double& v : noise) {
                    v -= mean;
                    var += v * v;
                }
                double sd = std::sqrt(var / static_cast<double>(t));
                if (sd > 0.0)
                    for (Index j = 0; j < t; ++j)
                        row[j] += static_cast<Scalar>(noise_sigma *
                                                      noise[static_cast<std::size_t>(j)] / sd);
            }
        }
    }
    r.data = Tensor<Scalar>::from({n_trials, c, t}, std::move(out));
    return r;
}

enum class SynthPreset { paper, small };

inline SynthPreset parse_preset(const std::string& name) {
    if (name == "paper") return SynthPreset::paper;
    if (name == "small") return SynthPreset::small;
    throw std::invalid_argument("unknown preset '" + name + "' (expected paper or small)");
}

inline Index preset_trials(SynthPreset p) {
    return p == SynthPreset::paper ? 1836 : 200;
}

template <typename Scalar = double>
TrialSet<Scalar> synth_preset(SynthPreset p, double class_effect, double noise_sigma, Rng& rng,
                              const RecordingMeta& meta = {}) {
    return synth_generate<Scalar>(preset_trials(p), class_effect, noise_sigma, rng, meta);
}

// Amplitude-threshold artifact rejection. Off by default in every pipeline;
// opt in explicitly where needed.
template <typename Scalar>
TrialSet<Scalar> reject_amplitude_artifacts(const TrialSet<Scalar>& trials, double threshold) {
    trials.validate();
    if (!(threshold > 0.0))
        throw std::invalid_argument("reject_amplitude_artifacts: threshold must be positive");
    const Index c = trials.channels(), t = trials.timepoints(), stride = c * t;
    std::vector<Index> keep;
    for (Index k = 0; k < trials.size(); ++k) {
        Scalar peak = trials.data.value().segment(k * stride, stride).abs().maxCoeff();
        if (static_cast<double>(peak) <= threshold) keep.push_back(k);
    }
    if (keep.empty())
        throw std::runtime_error("reject_amplitude_artifacts: every trial was rejected");
    return trials.subset(keep);
}

// ---- FNIRSET on-disk format -------------------------------------------------
// <base>.json: {"magic":"FNIRSET","version":1,"trials":N,"channels":C,
//               "timepoints":T,"labels":[...],"subjects":[...],"runs":[...]}
// <base>.bin:  N*C*T float32 little-endian values, row-major (trial, channel, time).

static_assert(std::endian::native == std::endian::little,
              "FNIRSET writer assumes a little-endian host");

template <typename Scalar>
void save_fnirset(const TrialSet<Scalar>& set, const std::string& base_path) {
    set.validate();
    nlohmann::json header{{"magic", "FNIRSET"},
                          {"version", 1},
                          {"trials", set.size()},
                          {"channels", set.channels()},
                          {"timepoints", set.timepoints()},
                          {"labels", set.labels},
                          {"subjects", set.subject_ids},
                          {"runs", set.run_ids}};
    {
        std::ofstream jf(base_path + ".json");
        if (!jf) throw std::runtime_error("save_fnirset: cannot write " + base_path + ".json");
        jf << header.dump(2) << '\n';
    }
    std::ofstream bf(base_path + ".bin", std::ios::binary);
    if (!bf) throw std::runtime_error("save_fnirset: cannot write " + base_path + ".bin");
    const auto& v = set.data.value();
    std::vector<float> buf(static_cast<std::size_t>(v.size()));
    for (Index i = 0; i < v.size(); ++i)
        buf[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
    bf.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!bf) throw std::runtime_error("save_fnirset: short write to " + base_path + ".bin");
}

template <typename Scalar = double>
TrialSet<Scalar> load_fnirset(const std::string& base_path) {
    std::ifstream jf(base_path + ".json");
    if (!jf) throw std::runtime_error("load_fnirset: cannot open " + base_path + ".json");
    nlohmann::json header;
    try {
        jf >> header;
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("load_fnirset: malformed header: " + std::string(e.what()));
    }
    if (header.value("magic", "") != "FNIRSET")
        throw std::runtime_error("load_fnirset: bad magic in " + base_path + ".json");
    if (header.value("version", 0) != 1)
        throw std::runtime_error("load_fnirset: unsupported version");
    const Index n = header.at("trials").get<Index>();
    const Index c = header.at("channels").get<Index>();
    const Index t = header.at("timepoints").get<Index>();
    if (n <= 0 || c <= 0 || t <= 0) throw std::runtime_error("load_fnirset: bad dimensions");

    TrialSet<Scalar> set;
    set.labels = header.at("labels").get<std::vector<int>>();
    set.subject_ids = header.at("subjects").get<std::vector<int>>();
    set.run_ids = header.at("runs").get<std::vector<int>>();
    if (set.labels.size() != static_cast<std::size_t>(n) ||
        set.subject_ids.size() != static_cast<std::size_t>(n) ||
        set.run_ids.size() != static_cast<std::size_t>(n))
        throw std::runtime_error("load_fnirset: metadata arrays do not match trial count");

    std::ifstream bf(base_path + ".bin", std::ios::binary | std::ios::ate);
    if (!bf) throw std::runtime_error("load_fnirset: cannot open " + base_path + ".bin");
    const auto bytes = static_cast<std::uint64_t>(bf.tellg());
    const std::uint64_t want =
        static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(c) *
        static_cast<std::uint64_t>(t) * sizeof(float);
    if (bytes != want)
        throw std::runtime_error("load_fnirset: binary holds " + std::to_string(bytes) +
                                 " bytes but the header declares " + std::to_string(want));
    bf.seekg(0);
    std::vector<float> buf(static_cast<std::size_t>(n * c * t));
    bf.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(want));
    if (!bf) throw std::runtime_error("load_fnirset: short read from " + base_path + ".bin");

    Eigen::Array<Scalar, Eigen::Dynamic, 1> v(n * c * t);
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(buf[static_cast<std::size_t>(i)]);
    set.data = Tensor<Scalar>::from({n, c, t}, std::move(v));
    set.validate();
    return set;
}

}  // namespace actfn
