#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <actfn/rng.hpp>
#include <actfn/signal.hpp>

#include <cmath>
#include <numbers>
#include <vector>

using actfn::Index;
using actfn::Tensor;

namespace {

constexpr double kPi = std::numbers::pi;

Tensor<double> sine_channel(double freq_hz, double rate_hz, Index n, double amp = 1.0,
                            double offset = 0.0) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i)
        v[static_cast<std::size_t>(i)] =
            offset + amp * std::sin(2.0 * kPi * freq_hz * static_cast<double>(i) / rate_hz);
    return Tensor<double>::from({1, n}, v);
}

// amplitude of a near-sinusoid over a central window, via sqrt(2) * rms
double central_amplitude(const Tensor<double>& x, Index lo, Index hi) {
    double acc = 0.0;
    for (Index i = lo; i < hi; ++i) acc += x.at({0, i}) * x.at({0, i});
    return std::sqrt(2.0 * acc / static_cast<double>(hi - lo));
}

}  // namespace

TEST_CASE("recording metadata") {
    actfn::RecordingMeta meta;
    CHECK(meta.sampling_rate_hz == doctest::Approx(7.8125));
    CHECK(meta.channel_count == 28);
    CHECK(meta.epoch_samples() == 150);

    actfn::RecordingMeta bad = meta;
    bad.target_rate_hz = -1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = meta;
    bad.epoch_seconds = 15.03;  // 150.3 samples: not an integer grid
    CHECK_THROWS_AS(bad.epoch_samples(), std::invalid_argument);
    bad = meta;
    bad.channel_count = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("optical density conversion") {
    SUBCASE("intensity equal to baseline gives zeros") {
        auto raw = Tensor<double>::full({2, 5}, 3.7);
        auto od = actfn::intensity_to_od(raw);
        for (Index i = 0; i < 2; ++i)
            for (Index j = 0; j < 5; ++j) CHECK(od.at({i, j}) == doctest::Approx(0.0).epsilon(1e-15));
    }

    SUBCASE("one decade of attenuation is OD 1") {
        auto raw = Tensor<double>::full({1, 4}, 0.1);
        auto od = actfn::intensity_to_od(raw, std::vector<double>{1.0});
        for (Index j = 0; j < 4; ++j) CHECK(od.at({0, j}) == doctest::Approx(1.0).epsilon(1e-14));
    }

    SUBCASE("round-trip through the channel baseline") {
        actfn::Rng rng(71);
        std::vector<double> v(3 * 40);
        for (double& x : v) x = std::exp(rng.uniform(-1.0, 1.0));  // positive intensities
        auto raw = Tensor<double>::from({3, 40}, v);
        auto od = actfn::intensity_to_od(raw);
        for (Index i = 0; i < 3; ++i) {
            double i0 = 0.0;
            for (Index j = 0; j < 40; ++j) i0 += raw.at({i, j});
            i0 /= 40.0;
            for (Index j = 0; j < 40; ++j) {
                double back = i0 * std::pow(10.0, -od.at({i, j}));
                CHECK(std::abs(back - raw.at({i, j})) / raw.at({i, j}) < 1e-12);
            }
        }
    }

    SUBCASE("rejects non-positive input") {
        auto raw = Tensor<double>::from({1, 3}, {1.0, 0.0, 2.0});
        CHECK_THROWS_AS(actfn::intensity_to_od(raw), std::invalid_argument);
        auto ok = Tensor<double>::full({1, 3}, 1.0);
        CHECK_THROWS_AS(actfn::intensity_to_od(ok, std::vector<double>{-1.0}),
                        std::invalid_argument);
        CHECK_THROWS_AS(actfn::intensity_to_od(ok, std::vector<double>{1.0, 2.0}),
                        std::invalid_argument);
        CHECK_THROWS_AS(actfn::intensity_to_od(Tensor<double>::full({3}, 1.0)),
                        std::invalid_argument);
    }
}

TEST_CASE("bandpass filter") {
    const double rate = 10.0, low = 0.005, high = 0.7;
    const Index n = 6000;  // 600 s

    SUBCASE("band edge validation") {
        auto x = sine_channel(0.1, rate, 100);
        CHECK_THROWS_AS(actfn::bandpass(x, 0.0, high, rate), std::invalid_argument);
        CHECK_THROWS_AS(actfn::bandpass(x, -0.1, high, rate), std::invalid_argument);
        CHECK_THROWS_AS(actfn::bandpass(x, 0.5, 0.2, rate), std::invalid_argument);
        CHECK_THROWS_AS(actfn::bandpass(x, low, 5.0, rate), std::invalid_argument);
        CHECK_THROWS_AS(actfn::bandpass(x, low, high, 0.0), std::invalid_argument);
        CHECK_THROWS_AS(actfn::bandpass(Tensor<double>::full({1, 1}, 1.0), low, high, rate),
                        std::invalid_argument);
    }

    SUBCASE("in-band 0.1 Hz sinusoid survives within 5%") {
        auto x = sine_channel(0.1, rate, n);
        auto y = actfn::bandpass(x, low, high, rate);
        CHECK(y.shape() == x.shape());
        double amp = central_amplitude(y, 2000, 4000);
        CHECK(std::abs(amp - 1.0) < 0.05);
    }

    SUBCASE("out-of-band 2.0 Hz sinusoid is attenuated below 10%") {
        auto x = sine_channel(2.0, rate, n);
        auto y = actfn::bandpass(x, low, high, rate);
        double amp = central_amplitude(y, 2000, 4000);
        CHECK(amp < 0.10);
    }

    SUBCASE("DC offset is removed") {
        auto flat = actfn::bandpass(sine_channel(0.0, rate, n, 0.0, 5.0), low, high, rate);
        double mean = 0.0;
        for (Index j = 0; j < n; ++j) mean += flat.at({0, j});
        mean /= static_cast<double>(n);
        CHECK(std::abs(mean) < 1e-3 * 5.0);

        // and the output is invariant to the offset itself
        auto with = actfn::bandpass(sine_channel(0.1, rate, n, 0.5, 5.0), low, high, rate);
        auto without = actfn::bandpass(sine_channel(0.1, rate, n, 0.5, 0.0), low, high, rate);
        double worst = 0.0;
        for (Index j = 0; j < n; ++j)
            worst = std::max(worst, std::abs(with.at({0, j}) - without.at({0, j})));
        CHECK(worst < 1e-9);
    }

    SUBCASE("channels are filtered independently") {
        const Index m = 800;
        auto a = sine_channel(0.1, rate, m);
        auto b = sine_channel(0.3, rate, m, 2.0);
        std::vector<double> both(static_cast<std::size_t>(2 * m));
        for (Index j = 0; j < m; ++j) {
            both[static_cast<std::size_t>(j)] = a.at({0, j});
            both[static_cast<std::size_t>(m + j)] = b.at({0, j});
        }
        auto joint = actfn::bandpass(Tensor<double>::from({2, m}, both), low, high, rate);
        auto ya = actfn::bandpass(a, low, high, rate);
        auto yb = actfn::bandpass(b, low, high, rate);
        for (Index j = 0; j < m; ++j) {
            CHECK(joint.at({0, j}) == ya.at({0, j}));
            CHECK(joint.at({1, j}) == yb.at({0, j}));
        }
    }
}

TEST_CASE("modified Beer-Lambert inversion") {
    SUBCASE("zero optical density maps to zero concentration") {
        auto od = Tensor<double>::zeros({28, 7});
        auto conc = actfn::mbll(od);
        CHECK(conc.shape() == actfn::Shape{28, 7});
        for (Index i = 0; i < 28; ++i)
            for (Index j = 0; j < 7; ++j) CHECK(conc.at({i, j}) == 0.0);
    }

    SUBCASE("hand-computed single-pair inversion") {
        auto od = Tensor<double>::from({2, 1}, {0.01, 0.02});
        auto conc = actfn::mbll(od);
        CHECK(conc.at({0, 0}) == doctest::Approx(0.00046491267034231133).epsilon(1e-12));
        CHECK(conc.at({1, 0}) == doctest::Approx(-3.5274246214669321e-05).epsilon(1e-12));
    }

    SUBCASE("round-trip through the forward model") {
        actfn::Rng rng(72);
        const Index rows = 28, t = 30;
        std::vector<double> v(static_cast<std::size_t>(rows * t));
        for (double& x : v) x = rng.uniform(-1e-3, 1e-3);
        auto conc = Tensor<double>::from({rows, t}, v);
        auto od = actfn::mbll_forward(conc);
        CHECK(od.dim(0) == 2 * (rows / 2));  // wavelength pair per optode pair
        auto back = actfn::mbll(od);
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < t; ++j) {
                double want = conc.at({i, j});
                double got = back.at({i, j});
                CHECK(std::abs(got - want) <= 1e-10 * std::max(1.0, std::abs(want)));
            }
    }

    SUBCASE("singular extinction model is rejected") {
        actfn::MbllParams p;
        p.extinction << 1.0, 2.0, 2.0, 4.0;  // proportional rows
        auto od = Tensor<double>::zeros({2, 3});
        CHECK_THROWS_AS(actfn::mbll(od, p), std::invalid_argument);
    }

    SUBCASE("odd channel counts are rejected") {
        CHECK_THROWS_AS(actfn::mbll(Tensor<double>::zeros({3, 4})), std::invalid_argument);
    }
}

TEST_CASE("linear resampling") {
    SUBCASE("identical rates are the identity") {
        auto x = sine_channel(0.2, 10.0, 64);
        auto y = actfn::resample(x, 10.0, 10.0);
        CHECK(y.shape() == x.shape());
        for (Index j = 0; j < 64; ++j) CHECK(y.at({0, j}) == x.at({0, j}));
    }

    SUBCASE("affine ramps are exact, including the extrapolated tail") {
        const Index n = 117;  // 15 s at 7.8125 Hz
        std::vector<double> v(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = 0.25 + 1.5 * static_cast<double>(i);
        auto x = Tensor<double>::from({1, n}, v);
        auto y = actfn::resample(x, 7.8125, 10.0);
        CHECK(y.dim(1) == 150);
        for (Index j = 0; j < 150; ++j) {
            double pos = static_cast<double>(j) * 7.8125 / 10.0;
            CHECK(y.at({0, j}) == doctest::Approx(0.25 + 1.5 * pos).epsilon(1e-13));
        }
    }

    SUBCASE("downsampling a ramp stays exact") {
        std::vector<double> v(100);
        for (Index i = 0; i < 100; ++i) v[static_cast<std::size_t>(i)] = -2.0 + 0.5 * static_cast<double>(i);
        auto y = actfn::resample(Tensor<double>::from({1, 100}, v), 10.0, 5.0);
        CHECK(y.dim(1) == 50);
        for (Index j = 0; j < 50; ++j)
            CHECK(y.at({0, j}) == doctest::Approx(-2.0 + 0.5 * 2.0 * static_cast<double>(j)).epsilon(1e-13));
    }

    SUBCASE("validation") {
        auto x = sine_channel(0.2, 10.0, 5);
        CHECK_THROWS_AS(actfn::resample(x, 0.0, 10.0), std::invalid_argument);
        CHECK_THROWS_AS(actfn::resample(x, 10.0, -1.0), std::invalid_argument);
        CHECK_THROWS_AS(actfn::resample(x, 10.0, 0.1), std::invalid_argument);  // empty grid
        CHECK_THROWS_AS(actfn::resample(Tensor<double>::full({1, 1}, 1.0), 10.0, 5.0),
                        std::invalid_argument);
    }
}
