#pragma once
// Raw-signal conditioning for hemodynamic recordings: optical-density
// conversion, zero-phase Butterworth bandpass, modified Beer-Lambert
// inversion, and linear resampling. All ops take (channels, timepoints)
// tensors and are pure functions of their inputs.

#include <actfn/tensor.hpp>

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace actfn {

struct RecordingMeta {
    double sampling_rate_hz = 7.8125;  // raw acquisition rate
    int channel_count = 28;            // 14 optode pairs -> 28 after HbO2/HbR split
    double epoch_seconds = 15.0;       // post-stimulus window
    double target_rate_hz = 10.0;      // rate after resampling

    // Samples per epoch on the target grid. epoch_seconds * target_rate_hz
    // must land on an integer (150 for the defaults).
    Index epoch_samples() const {
        validate();
        double s = epoch_seconds * target_rate_hz;
        return static_cast<Index>(std::llround(s));
    }

    void validate() const {
        if (!(sampling_rate_hz > 0.0) || !(target_rate_hz > 0.0))
            throw std::invalid_argument("RecordingMeta: sampling rates must be positive");
        if (channel_count <= 0)
            throw std::invalid_argument("RecordingMeta: channel_count must be positive");
        if (!(epoch_seconds > 0.0))
            throw std::invalid_argument("RecordingMeta: epoch_seconds must be positive");
        double s = epoch_seconds * target_rate_hz;
        if (std::abs(s - std::llround(s)) > 1e-9 || std::llround(s) < 1)
            throw std::invalid_argument(
                "RecordingMeta: epoch_seconds * target_rate_hz must be a positive integer");
    }
};

namespace detail {

template <typename Scalar>
using RowMajorMap =
    Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename Scalar>
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename Scalar>
void require_rank2(const Tensor<Scalar>& x, const char* op) {
    if (!x.defined() || x.rank() != 2)
        throw std::invalid_argument(std::string(op) + ": expected a (channels, timepoints) tensor");
}

}  // namespace detail

// OD = -log10(I / I0), with I0 the per-channel temporal mean of the raw
// intensity unless an explicit baseline is supplied.
template <typename Scalar>
Tensor<Scalar> intensity_to_od(const Tensor<Scalar>& raw, const std::vector<Scalar>& baseline) {
    detail::require_rank2(raw, "intensity_to_od");
    const Index c = raw.dim(0), t = raw.dim(1);
    if (static_cast<Index>(baseline.size()) != c)
        throw std::invalid_argument("intensity_to_od: baseline size does not match channel count");
    detail::ConstRowMajorMap<Scalar> in(raw.value().data(), c, t);
    Eigen::Array<Scalar, Eigen::Dynamic, 1> out(c * t);
    detail::RowMajorMap<Scalar> o(out.data(), c, t);
    for (Index i = 0; i < c; ++i) {
        if (!(baseline[static_cast<std::size_t>(i)] > Scalar(0)))
            throw std::invalid_argument("intensity_to_od: non-positive baseline at channel " +
                                        std::to_string(i));
        for (Index j = 0; j < t; ++j) {
            Scalar v = in(i, j);
            if (!(v > Scalar(0)))
                throw std::invalid_argument("intensity_to_od: non-positive intensity at channel " +
                                            std::to_string(i));
            o(i, j) = -std::log10(v / baseline[static_cast<std::size_t>(i)]);
        }
    }
    return Tensor<Scalar>::from(raw.shape(), std::move(out));
}

template <typename Scalar>
Tensor<Scalar> intensity_to_od(const Tensor<Scalar>& raw) {
    detail::require_rank2(raw, "intensity_to_od");
    const Index c = raw.dim(0), t = raw.dim(1);
    detail::ConstRowMajorMap<Scalar> in(raw.value().data(), c, t);
    std::vector<Scalar> baseline(static_cast<std::size_t>(c));
    for (Index i = 0; i < c; ++i) baseline[static_cast<std::size_t>(i)] = in.row(i).mean();
    return intensity_to_od(raw, baseline);
}

namespace detail {

// Order-4 Butterworth bandpass (order-2 lowpass prototype through the
// standard s -> (s^2 + w0^2)/(B s) transform), discretized by the bilinear
// transform with edge prewarping. Expressed as direct-form b/a taps; order 4
// in double precision is comfortably stable even for very narrow bands.
struct BandpassCoeffs {
    std::array<double, 5> b{}, a{};  // a[0] == 1
};

inline BandpassCoeffs butter_bandpass4(double low_hz, double high_hz, double rate_hz) {
    using cd = std::complex<double>;
    const double fs2 = 2.0 * rate_hz;
    const double wl = fs2 * std::tan(std::numbers::pi * low_hz / rate_hz);
    const double wh = fs2 * std::tan(std::numbers::pi * high_hz / rate_hz);
    const double w0 = std::sqrt(wl * wh);
    const double bw = wh - wl;

    // order-2 Butterworth lowpass prototype poles
    const cd proto[2] = {std::polar(1.0, 3.0 * std::numbers::pi / 4.0), std::polar(1.0, 5.0 * std::numbers::pi / 4.0)};
    std::vector<cd> zpoles;
    for (const cd& p : proto) {
        cd t = 0.5 * bw * p;
        cd disc = std::sqrt(t * t - cd(w0 * w0));
        for (cd s : {t + disc, t - disc}) zpoles.push_back((fs2 + s) / (fs2 - s));
    }
    for (const cd& z : zpoles)
        if (!(std::abs(z) < 1.0))
            throw std::runtime_error("bandpass: filter design produced an unstable pole");

    // coefficients of prod(1 - r z^-1) in ascending powers of z^-1
    auto poly = [](const std::vector<cd>& roots) {
        std::vector<cd> c{1.0};
        for (const cd& r : roots) {
            c.push_back(0.0);
            for (std::size_t i = c.size() - 1; i > 0; --i) c[i] -= r * c[i - 1];
        }
        return c;
    };
    // bandpass zeros: two at z=1 (from s=0), two at z=-1 (from s=inf)
    std::vector<cd> num = poly({cd(1.0), cd(1.0), cd(-1.0), cd(-1.0)});
    std::vector<cd> den = poly(zpoles);

    auto eval = [](const std::vector<cd>& c, cd z) {
        cd acc = 0.0, zp = 1.0;
        for (const cd& ck : c) {
            acc += ck * zp;
            zp /= z;
        }
        return acc;
    };
    // unit gain at the (prewarped) center frequency; z0 lies on the unit circle
    cd z0 = (cd(fs2) + cd(0.0, w0)) / (cd(fs2) - cd(0.0, w0));
    double g = 1.0 / std::abs(eval(num, z0) / eval(den, z0));

    BandpassCoeffs f;
    for (int i = 0; i < 5; ++i) {
        f.b[static_cast<std::size_t>(i)] = g * num[static_cast<std::size_t>(i)].real();
        f.a[static_cast<std::size_t>(i)] = den[static_cast<std::size_t>(i)].real();
    }
    return f;
}

// Steady-state filter state for a step of unit amplitude (direct-form II
// transposed), so that forward/backward passes start without a DC transient.
inline std::array<double, 4> steady_state_zi(const BandpassCoeffs& f) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    // subtract the transposed companion matrix of a
    for (int i = 0; i < 4; ++i) m(i, 0) += f.a[static_cast<std::size_t>(i + 1)];
    for (int i = 0; i < 3; ++i) m(i, i + 1) -= 1.0;
    Eigen::Vector4d rhs;
    for (int i = 0; i < 4; ++i)
        rhs(i) = f.b[static_cast<std::size_t>(i + 1)] -
                 f.a[static_cast<std::size_t>(i + 1)] * f.b[0];
    Eigen::Vector4d zi = m.colPivHouseholderQr().solve(rhs);
    return {zi(0), zi(1), zi(2), zi(3)};
}

inline void lfilter_inplace(const BandpassCoeffs& f, std::vector<double>& x,
                            std::array<double, 4> z) {
    for (double& v : x) {
        double y = f.b[0] * v + z[0];
        z[0] = f.b[1] * v - f.a[1] * y + z[1];
        z[1] = f.b[2] * v - f.a[2] * y + z[2];
        z[2] = f.b[3] * v - f.a[3] * y + z[3];
        z[3] = f.b[4] * v - f.a[4] * y;
        v = y;
    }
}

// Zero-phase filtering: odd-reflection padding at both ends, steady-state
// initial conditions scaled to the first sample, forward pass, then the same
// in reverse. Squares the magnitude response and cancels the phase.
inline void filtfilt_inplace(const BandpassCoeffs& f, std::vector<double>& x) {
    const std::size_t n = x.size();
    const std::size_t pad = std::min<std::size_t>(n - 1, 15);
    std::vector<double> ext;
    ext.reserve(n + 2 * pad);
    for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x.front() - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x.back() - x[n - 1 - i]);

    const std::array<double, 4> zi = steady_state_zi(f);
    auto scaled = [&zi](double v) {
        std::array<double, 4> z = zi;
        for (double& s : z) s *= v;
        return z;
    };
    lfilter_inplace(f, ext, scaled(ext.front()));
    std::reverse(ext.begin(), ext.end());
    lfilter_inplace(f, ext, scaled(ext.front()));
    std::reverse(ext.begin(), ext.end());
    std::copy(ext.begin() + static_cast<std::ptrdiff_t>(pad),
              ext.begin() + static_cast<std::ptrdiff_t>(pad + n), x.begin());
}

}  // namespace detail

// Zero-phase (forward-backward) order-4 Butterworth bandpass, applied per
// channel. Each channel is demeaned first: the mean is pure DC, which the
// band rejects anyway, and removing it up front avoids exciting the very
// slow low-edge transient.
template <typename Scalar>
Tensor<Scalar> bandpass(const Tensor<Scalar>& signal, double low_hz, double high_hz,
                        double rate_hz) {
    detail::require_rank2(signal, "bandpass");
    if (!(rate_hz > 0.0) || !(low_hz > 0.0) || !(low_hz < high_hz) || !(high_hz < rate_hz / 2.0))
        throw std::invalid_argument("bandpass: band edges must satisfy 0 < low < high < rate/2");
    const Index c = signal.dim(0), t = signal.dim(1);
    if (t < 2) throw std::invalid_argument("bandpass: signal too short to filter");

    const detail::BandpassCoeffs f = detail::butter_bandpass4(low_hz, high_hz, rate_hz);
    detail::ConstRowMajorMap<Scalar> in(signal.value().data(), c, t);
    Eigen::Array<Scalar, Eigen::Dynamic, 1> out(c * t);
    detail::RowMajorMap<Scalar> o(out.data(), c, t);
    std::vector<double> ch(static_cast<std::size_t>(t));
    for (Index i = 0; i < c; ++i) {
        double mean = 0.0;
        for (Index j = 0; j < t; ++j) mean += static_cast<double>(in(i, j));
        mean /= static_cast<double>(t);
        for (Index j = 0; j < t; ++j)
            ch[static_cast<std::size_t>(j)] = static_cast<double>(in(i, j)) - mean;
        detail::filtfilt_inplace(f, ch);
        for (Index j = 0; j < t; ++j) o(i, j) = static_cast<Scalar>(ch[static_cast<std::size_t>(j)]);
    }
    return Tensor<Scalar>::from(signal.shape(), std::move(out));
}

// Modified Beer-Lambert model constants. Extinction rows are wavelengths,
// columns are species (HbO2, HbR); defaults are literature-typical values
// for a ~760 nm / ~850 nm pair in 1/(mM*cm), with DPF 6.0 at both
// wavelengths and a 3 cm source-detector separation.
struct MbllParams {
    Eigen::Matrix2d extinction;
    double dpf_wl1 = 6.0;
    double dpf_wl2 = 6.0;
    double distance_cm = 3.0;

    MbllParams() { extinction << 1.4866, 3.8437, 2.5264, 1.7986; }

    // dOD = model() * concentration, per optode pair
    Eigen::Matrix2d model() const {
        Eigen::Matrix2d m;
        m.row(0) = extinction.row(0) * dpf_wl1 * distance_cm;
        m.row(1) = extinction.row(1) * dpf_wl2 * distance_cm;
        return m;
    }
};

namespace detail {

inline Eigen::Matrix2d mbll_inverse(const MbllParams& p) {
    Eigen::Matrix2d m = p.model();
    double scale = m.cwiseAbs().maxCoeff();
    if (std::abs(m.determinant()) <= 1e-12 * std::max(1.0, scale * scale))
        throw std::invalid_argument("mbll: extinction model is singular");
    return m.inverse();
}

}  // namespace detail

// Optical density -> concentration changes. Input rows are blocked by
// wavelength: rows [0, P) carry wavelength 1 for pairs 0..P-1, rows [P, 2P)
// carry wavelength 2 for the same pairs. Output rows are blocked by species:
// [0, P) HbO2, [P, 2P) HbR. 14 pairs therefore become 14+14 = 28 channels.
template <typename Scalar>
Tensor<Scalar> mbll(const Tensor<Scalar>& od, const MbllParams& params = {}) {
    detail::require_rank2(od, "mbll");
    const Index rows = od.dim(0), t = od.dim(1);
    if (rows < 2 || rows % 2 != 0)
        throw std::invalid_argument("mbll: need an even channel count (two wavelengths per pair)");
    const Index pairs = rows / 2;
    const Eigen::Matrix2d inv = detail::mbll_inverse(params);

    detail::ConstRowMajorMap<Scalar> in(od.value().data(), rows, t);
    Eigen::Array<Scalar, Eigen::Dynamic, 1> out(rows * t);
    detail::RowMajorMap<Scalar> o(out.data(), rows, t);
    for (Index p = 0; p < pairs; ++p) {
        for (Index j = 0; j < t; ++j) {
            const double d1 = static_cast<double>(in(p, j));
            const double d2 = static_cast<double>(in(p + pairs, j));
            o(p, j) = static_cast<Scalar>(inv(0, 0) * d1 + inv(0, 1) * d2);          // HbO2
            o(p + pairs, j) = static_cast<Scalar>(inv(1, 0) * d1 + inv(1, 1) * d2);  // HbR
        }
    }
    return Tensor<Scalar>::from(od.shape(), std::move(out));
}

// Forward model for tests and synthesis: concentrations (HbO2/HbR blocked
// rows) -> optical densities (wavelength-blocked rows).
template <typename Scalar>
Tensor<Scalar> mbll_forward(const Tensor<Scalar>& conc, const MbllParams& params = {}) {
    detail::require_rank2(conc, "mbll_forward");
    const Index rows = conc.dim(0), t = conc.dim(1);
    if (rows < 2 || rows % 2 != 0)
        throw std::invalid_argument("mbll_forward: need an even channel count");
    const Index pairs = rows / 2;
    const Eigen::Matrix2d m = params.model();

    detail::ConstRowMajorMap<Scalar> in(conc.value().data(), rows, t);
    Eigen::Array<Scalar, Eigen::Dynamic, 1> out(rows * t);
    detail::RowMajorMap<Scalar> o(out.data(), rows, t);
    for (Index p = 0; p < pairs; ++p) {
        for (Index j = 0; j < t; ++j) {
            const double hbo = static_cast<double>(in(p, j));
            const double hbr = static_cast<double>(in(p + pairs, j));
            o(p, j) = static_cast<Scalar>(m(0, 0) * hbo + m(0, 1) * hbr);
            o(p + pairs, j) = static_cast<Scalar>(m(1, 0) * hbo + m(1, 1) * hbr);
        }
    }
    return Tensor<Scalar>::from(conc.shape(), std::move(out));
}

// Linear-interpolation resampling onto a uniform grid at to_hz. The output
// length is round(n * to/from); the final output sample may extrapolate the
// last input segment by strictly less than one input sample, which keeps
// affine signals exact.
template <typename Scalar>
Tensor<Scalar> resample(const Tensor<Scalar>& signal, double from_hz, double to_hz) {
    detail::require_rank2(signal, "resample");
    if (!(from_hz > 0.0) || !(to_hz > 0.0))
        throw std::invalid_argument("resample: rates must be positive");
    const Index c = signal.dim(0), t = signal.dim(1);
    if (from_hz == to_hz) return Tensor<Scalar>::from(signal.shape(), signal.value());

    const Index n_out = static_cast<Index>(std::llround(static_cast<double>(t) * to_hz / from_hz));
    if (n_out < 1) throw std::invalid_argument("resample: output grid would be empty");
    if (t < 2) throw std::invalid_argument("resample: need at least 2 samples to interpolate");

    const double step = from_hz / to_hz;  // input samples per output sample
    if (static_cast<double>(n_out - 1) * step > static_cast<double>(t - 1) + 1.0 + 1e-9)
        throw std::invalid_argument("resample: output grid extends past the recording");

    detail::ConstRowMajorMap<Scalar> in(signal.value().data(), c, t);
    Eigen::Array<Scalar, Eigen::Dynamic, 1> out(c * n_out);
    detail::RowMajorMap<Scalar> o(out.data(), c, n_out);
    for (Index j = 0; j < n_out; ++j) {
        const double pos = static_cast<double>(j) * step;
        Index k = static_cast<Index>(std::floor(pos));
        if (k > t - 2) k = t - 2;  // extrapolate the last segment (tail < 1 sample)
        const double frac = pos - static_cast<double>(k);
        for (Index i = 0; i < c; ++i)
            o(i, j) = static_cast<Scalar>((1.0 - frac) * static_cast<double>(in(i, k)) +
                                          frac * static_cast<double>(in(i, k + 1)));
    }
    return Tensor<Scalar>::from({c, n_out}, std::move(out));
}

}  // namespace actfn
