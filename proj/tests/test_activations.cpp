#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "actfn/activations.hpp"
#include "actfn/gradcheck.hpp"

using namespace actfn;
using T = Tensor<double>;
using doctest::Approx;

namespace {
const ActivationSpec relu_s{ActivationKind::relu};
const ActivationSpec sigmoid_s{ActivationKind::sigmoid};
const ActivationSpec swish_s{ActivationKind::swish};
const ActivationSpec tanh_s{ActivationKind::tanh};
const ActivationSpec elu_s{ActivationKind::elu};
const ActivationSpec abs_s{ActivationKind::abs};
const ActivationSpec square_s{ActivationKind::square};
ActivationSpec maf(double a) { return {ActivationKind::maf, a}; }
}  // namespace

TEST_CASE("forward spot values") {
  CHECK(act_scalar(relu_s, -1.0) == 0.0);
  CHECK(act_scalar(relu_s, 2.0) == 2.0);
  CHECK(act_scalar(sigmoid_s, 0.0) == 0.5);
  CHECK(act_scalar(tanh_s, 0.0) == 0.0);
  CHECK(act_scalar(swish_s, 0.0) == 0.0);
  CHECK(act_scalar(swish_s, 1.0) == Approx(0.7310585786300049));
  CHECK(act_scalar(swish_s, -2.0) == Approx(-0.2384058440442351));
  CHECK(act_scalar(elu_s, -20.0) == Approx(-0.9999999979388464));
  CHECK(act_scalar(elu_s, -1.0) == Approx(-0.6321205588285577));
  CHECK(act_scalar(elu_s, 3.0) == 3.0);
  CHECK(act_scalar(abs_s, -3.0) == 3.0);
  CHECK(act_scalar(square_s, -2.0) == 4.0);
  CHECK(act_scalar(maf(2), -1.0) == -2.0);
  CHECK(act_scalar(maf(2), 1.0) == 1.0);
  CHECK(act_scalar(sigmoid_s, 2.0) == Approx(0.8807970779778823));
  CHECK(act_scalar(tanh_s, 0.5) == Approx(0.46211715726000974));
}

TEST_CASE("derivative spot values use the positive branch at 0") {
  CHECK(act_deriv_scalar(tanh_s, 0.0) == 1.0);
  CHECK(act_deriv_scalar(square_s, 3.0) == 6.0);
  CHECK(act_deriv_scalar(relu_s, 0.0) == 1.0);
  CHECK(act_deriv_scalar(abs_s, 0.0) == 1.0);
  CHECK(act_deriv_scalar(maf(-2), 0.0) == 1.0);
  CHECK(act_deriv_scalar(elu_s, 0.0) == 1.0);
  CHECK(act_deriv_scalar(maf(-2), -1.0) == -2.0);
  CHECK(act_deriv_scalar(swish_s, 1.0) == Approx(0.9276705118714869));
  CHECK(act_deriv_scalar(sigmoid_s, 0.0) == 0.25);
}

TEST_CASE("maf special cases are exact, not approximate") {
  const auto m0 = maf(0);
  const auto m1 = maf(-1);
  for (int i = 0; i <= 2000; ++i) {
    const double x = -10.0 + i * 0.01;
    CHECK(act_scalar(m0, x) == act_scalar(relu_s, x));
    CHECK(act_scalar(m1, x) == act_scalar(abs_s, x));
    CHECK(act_deriv_scalar(m0, x) == act_deriv_scalar(relu_s, x));
    CHECK(act_deriv_scalar(m1, x) == act_deriv_scalar(abs_s, x));
  }
}

TEST_CASE("no overflow across the stable range") {
  for (double x : {-700.0, -30.0, 30.0, 700.0}) {
    for (const auto& s : {sigmoid_s, swish_s, tanh_s, elu_s}) {
      CHECK(std::isfinite(act_scalar(s, x)));
      CHECK(std::isfinite(act_deriv_scalar(s, x)));
    }
  }
  CHECK(act_scalar(sigmoid_s, 700.0) == 1.0);
  CHECK(act_scalar(sigmoid_s, -700.0) > 0.0);
}

TEST_CASE("bounds are strict at finite inputs") {
  for (int i = 0; i <= 720; ++i) {
    const double x = -36.0 + i * 0.1;
    const double s = act_scalar(sigmoid_s, x);
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
  for (int i = 0; i <= 360; ++i) {
    const double x = -18.0 + i * 0.1;
    const double t = act_scalar(tanh_s, x);
    CHECK(t > -1.0);
    CHECK(t < 1.0);
  }
}

TEST_CASE("exact even and near-exact odd symmetry") {
  for (int i = 1; i <= 1000; ++i) {
    const double x = i * 0.02;
    CHECK(act_scalar(square_s, x) == act_scalar(square_s, -x));
    CHECK(act_scalar(abs_s, x) == act_scalar(abs_s, -x));
    CHECK(act_scalar(tanh_s, -x) == Approx(-act_scalar(tanh_s, x)).epsilon(1e-12));
  }
}

TEST_CASE("monotone functions never decrease; swish and square do") {
  Rng rng(5150);
  for (const auto& s : {relu_s, sigmoid_s, tanh_s, elu_s}) {
    for (int i = 0; i < 2000; ++i) {
      double x1 = rng.uniform(-20.0, 20.0);
      double x2 = rng.uniform(-20.0, 20.0);
      if (x1 > x2) std::swap(x1, x2);
      CHECK(act_scalar(s, x1) <= act_scalar(s, x2));
    }
  }
  CHECK(act_scalar(swish_s, -5.0) > act_scalar(swish_s, -1.278));  // dips before its minimum
  CHECK(act_scalar(square_s, -2.0) > act_scalar(square_s, 0.0));
}

TEST_CASE("tensor forward records the derivative") {
  auto x = T::from({3}, {-2, 0, 1}, true);
  Tape<double> tape;
  auto y = act_forward(maf(-2), x);
  CHECK(y.value()[0] == 4.0);
  CHECK(y.value()[1] == 0.0);
  CHECK(y.value()[2] == 1.0);
  tape.backward(sum(y));
  CHECK(x.grad()[0] == -2.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 1.0);
}

TEST_CASE("act_backward applies upstream chain") {
  auto x = T::from({2}, {3, -3});
  auto up = T::from({2}, {10, 10});
  auto g = act_backward(square_s, x, up);
  CHECK(g.value()[0] == 60.0);
  CHECK(g.value()[1] == -60.0);
  CHECK_THROWS_AS(act_backward(square_s, x, T::from({3}, {1, 2, 3})), std::invalid_argument);
}

TEST_CASE("non-finite input is rejected") {
  auto x = T::from({2}, {1, 2});
  x.raw_value()[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(act_forward(relu_s, x), std::runtime_error);
  auto big = T::from({1}, {1e200});
  CHECK_THROWS_AS(act_forward(square_s, big), std::runtime_error);  // overflow surfaces as an error
}

TEST_CASE("registry parsing") {
  CHECK(ActivationSpec::parse("relu").kind == ActivationKind::relu);
  CHECK(ActivationSpec::parse("elu").alpha == 1.0);
  CHECK(ActivationSpec::parse("maf:-1").alpha == -1.0);
  CHECK(ActivationSpec::parse("maf:2.5").alpha == 2.5);
  CHECK(ActivationSpec::parse("maf:-1").name() == "maf:-1");
  CHECK(ActivationSpec::parse("swish").name() == "swish");
  for (const char* bad : {"relu6", "ELU", "maf", "maf:", "maf:xyz", "maf:1junk", ""}) {
    CHECK_THROWS_AS(ActivationSpec::parse(bad), std::invalid_argument);
  }
  CHECK_THROWS_AS(ActivationSpec(ActivationKind::elu, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ActivationSpec(ActivationKind::elu, -1.0), std::invalid_argument);
}

TEST_CASE("alpha formatting round-trips") {
  for (double a : {-2.0, -1.0, 0.0, 2.0, 0.5, 1.0 / 3.0}) {
    const auto spec = maf(a);
    CHECK(ActivationSpec::parse(spec.name()).alpha == a);
  }
}

TEST_CASE("empirical property checks match the declared table") {
  const auto all = ActivationSpec::named_seven();
  REQUIRE(all.size() == 7);
  const bool F = false, Y = true;
  // {parametric, monotonic, smooth, bounded, symmetric}
  CHECK(declared_properties(all[0]) == ActivationProperties{F, Y, F, F, F});  // relu
  CHECK(declared_properties(all[1]) == ActivationProperties{F, Y, Y, Y, F});  // sigmoid
  CHECK(declared_properties(all[2]) == ActivationProperties{F, F, Y, F, F});  // swish
  CHECK(declared_properties(all[3]) == ActivationProperties{F, Y, Y, Y, Y});  // tanh
  CHECK(declared_properties(all[4]) == ActivationProperties{Y, Y, Y, F, F});  // elu
  CHECK(declared_properties(all[5]) == ActivationProperties{F, Y, F, F, Y});  // abs
  CHECK(declared_properties(all[6]) == ActivationProperties{F, F, Y, F, Y});  // square
}

TEST_CASE("empirical checks reproduce every declared row") {
  auto specs = ActivationSpec::named_seven();
  for (double a : {-2.0, -1.0, 0.0, 1.0, 2.0}) specs.push_back(maf(a));
  for (const auto& spec : specs) {
    CAPTURE(spec.name());
    CHECK(check_properties(spec) == declared_properties(spec));
  }
}

TEST_CASE("maf:2 is asymmetric by direct evaluation") {
  CHECK(act_scalar(maf(2), -1.0) != act_scalar(maf(2), 1.0));
  CHECK(act_scalar(maf(2), -1.0) != -act_scalar(maf(2), 1.0));
  CHECK_FALSE(check_properties(maf(2)).symmetric);
}

TEST_CASE("grid validation") {
  CHECK_THROWS_AS(check_properties(tanh_s, SampleGrid{-5.0, 10.0, 20001}), std::invalid_argument);
  CHECK_THROWS_AS(check_properties(tanh_s, SampleGrid{-20.0, 20.0, 50}), std::invalid_argument);
  CHECK_THROWS_AS(check_properties(tanh_s, SampleGrid{0.0, 0.0, 20001}), std::invalid_argument);
}

TEST_CASE("every activation derivative survives the finite-difference oracle") {
  auto specs = ActivationSpec::named_seven();
  for (double a : {-2.0, -1.0, 0.0, 2.0}) specs.push_back(maf(a));
  for (const auto& spec : specs) {
    const auto r = gradcheck_activation(spec);
    CAPTURE(spec.name());
    CHECK(r.pass);
    CHECK(r.worst_rel_err < r.tolerance);
  }
}
