#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "actfn/gradcheck.hpp"
#include "actfn/ops.hpp"

using namespace actfn;
using T = Tensor<double>;
using doctest::Approx;

TEST_CASE("elementwise values") {
  auto a = T::from({2, 2}, {1, 2, 3, 4});
  auto b = T::from({2, 2}, {10, 20, 30, 40});
  CHECK(add(a, b).value()[3] == 44);
  CHECK(sub(a, b).value()[0] == -9);
  CHECK(mul(a, b).value()[1] == 40);
  CHECK(div(b, a).value()[2] == 10);
  CHECK((a + b).value()[0] == 11);
  CHECK((a - b).value()[0] == -9);
  CHECK((a * b).value()[0] == 10);
}

TEST_CASE("trailing-dimension broadcast") {
  auto a = T::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = T::from({3}, {10, 20, 30});
  auto y = add(a, b);
  CHECK(y.value()[0] == 11);
  CHECK(y.value()[2] == 33);
  CHECK(y.value()[3] == 14);
  CHECK(y.value()[5] == 36);
  // single element broadcasts everywhere
  CHECK(add(a, T::scalar(100)).value()[4] == 105);
  // off-rule shapes are rejected
  CHECK_THROWS_AS(add(a, T::from({2}, {1, 2})), std::invalid_argument);
  CHECK_THROWS_AS(add(b, a), std::invalid_argument);  // b may not outrank a
}

TEST_CASE("division by zero is caught") {
  auto a = T::from({2}, {1, 2});
  auto b = T::from({2}, {1, 0});
  CHECK_THROWS_AS(div(a, b), std::runtime_error);
}

TEST_CASE("scale and neg") {
  auto a = T::from({3}, {1, -2, 3});
  CHECK(scale(a, 2.0).value()[1] == -4);
  CHECK(neg(a).value()[2] == -3);
}

TEST_CASE("reductions") {
  auto a = T::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(sum(a).item() == 21);
  CHECK(mean(a).item() == 3.5);
}

TEST_CASE("reshape and flatten") {
  auto a = T::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto r = reshape(a, {3, 2});
  CHECK(r.dim(0) == 3);
  CHECK(r.at({2, 1}) == 6);  // row-major layout preserved
  CHECK_THROWS_AS(reshape(a, {4, 2}), std::invalid_argument);
  auto f = flatten(T::from({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}));
  CHECK(f.shape() == Shape{2, 4});
  CHECK(f.at({1, 0}) == 5);
}

TEST_CASE("concat") {
  auto a = T::from({2, 2}, {1, 2, 3, 4});
  auto b = T::from({2, 2}, {5, 6, 7, 8});
  auto y0 = concat(a, b, 0);
  CHECK(y0.shape() == Shape{4, 2});
  CHECK(y0.at({2, 0}) == 5);
  auto y1 = concat(a, b, 1);
  CHECK(y1.shape() == Shape{2, 4});
  CHECK(y1.at({0, 2}) == 5);
  CHECK(y1.at({1, 3}) == 8);
  CHECK_THROWS_AS(concat(a, T::from({3, 1}, {1, 2, 3}), 0), std::invalid_argument);
  CHECK_THROWS_AS(concat(a, b, 5), std::invalid_argument);
}

TEST_CASE("conv2d slides a cross-correlation window") {
  // [1 2 3 4 5] against [1 0 -1]
  auto x = T::from({1, 1, 1, 5}, {1, 2, 3, 4, 5});
  auto k = T::from({1, 1, 1, 3}, {1, 0, -1});
  auto b = T::zeros({1});
  auto y = conv2d(x, k, b);
  CHECK(y.shape() == Shape{1, 1, 1, 3});
  CHECK(y.value()[0] == -2);
  CHECK(y.value()[1] == -2);
  CHECK(y.value()[2] == -2);
}

TEST_CASE("conv2d sums over input channels and adds bias") {
  auto x = T::from({1, 2, 1, 3}, {1, 2, 3, 10, 20, 30});
  auto k = T::from({1, 2, 1, 2}, {1, 1, 0.1, 0.1});
  auto b = T::from({1}, {1.0});
  auto y = conv2d(x, k, b);
  CHECK(y.value()[0] == Approx(7.0));   // (1+2) + 0.1*(10+20) + 1
  CHECK(y.value()[1] == Approx(11.0));  // (2+3) + 0.1*(20+30) + 1
}

TEST_CASE("conv2d padding and stride") {
  auto x = T::from({1, 1, 1, 3}, {1, 2, 3});
  auto k = T::from({1, 1, 1, 3}, {1, 1, 1});
  auto b = T::zeros({1});
  auto y = conv2d(x, k, b, {1, 1}, {0, 1});
  CHECK(y.shape() == Shape{1, 1, 1, 3});
  CHECK(y.value()[0] == 3);  // 0+1+2
  CHECK(y.value()[1] == 6);  // 1+2+3
  CHECK(y.value()[2] == 5);  // 2+3+0
  auto s = conv2d(T::from({1, 1, 1, 5}, {1, 2, 3, 4, 5}), T::from({1, 1, 1, 1}, {2.0}), b, {1, 2});
  CHECK(s.shape() == Shape{1, 1, 1, 3});
  CHECK(s.value()[1] == 6);  // picks x[2]=3, doubled
}

TEST_CASE("conv2d validation") {
  auto x = T::from({1, 1, 1, 3}, {1, 2, 3});
  auto b = T::zeros({1});
  CHECK_THROWS_AS(conv2d(x, T::ones({1, 1, 1, 5}), b), std::invalid_argument);       // kernel too wide
  CHECK_THROWS_AS(conv2d(x, T::ones({1, 2, 1, 2}), b), std::invalid_argument);       // channel mismatch
  CHECK_THROWS_AS(conv2d(x, T::ones({1, 1, 1, 2}), b, {0, 1}), std::invalid_argument);  // zero stride
  CHECK_THROWS_AS(conv2d(x, T::ones({1, 1, 1, 2}), T::zeros({2})), std::invalid_argument);  // bias size
}

TEST_CASE("avg_pool2d") {
  auto x = T::from({1, 1, 1, 4}, {1, 2, 3, 4});
  auto y = avg_pool2d(x, {1, 2});
  CHECK(y.shape() == Shape{1, 1, 1, 2});
  CHECK(y.value()[0] == 1.5);
  CHECK(y.value()[1] == 3.5);
  CHECK_THROWS_AS(avg_pool2d(x, {2, 2}), std::invalid_argument);  // window taller than input
}

TEST_CASE("dense identity") {
  auto x = T::from({2, 2}, {1, 2, 3, 4});
  auto w = T::from({2, 2}, {1, 0, 0, 1});
  auto y = dense(x, w, T::zeros({2}));
  for (Index i = 0; i < 4; ++i) CHECK(y.value()[i] == x.value()[i]);
}

TEST_CASE("dense affine map") {
  auto x = T::from({1, 2}, {1, 2});
  auto w = T::from({2, 2}, {1, 3, 2, 4});
  auto b = T::from({2}, {10, 20});
  auto y = dense(x, w, b);
  CHECK(y.value()[0] == 15);  // 1*1+2*2+10
  CHECK(y.value()[1] == 31);  // 1*3+2*4+20
  CHECK_THROWS_AS(dense(x, T::ones({3, 2}), b), std::invalid_argument);
}

TEST_CASE("batch_norm standardizes per channel") {
  auto x = T::from({1, 1, 1, 4}, {1, 2, 3, 4});
  auto gamma = T::ones({1});
  auto beta = T::zeros({1});
  BatchNormState<double> state;
  auto y = batch_norm(x, gamma, beta, state, Mode::train);
  CHECK(y.value()[0] == Approx(-1.3416354199689269));
  CHECK(y.value()[1] == Approx(-0.447211806656309));
  CHECK(y.value()[2] == Approx(0.447211806656309));
  CHECK(y.value()[3] == Approx(1.3416354199689269));
  CHECK(state.initialized);
  CHECK(state.running_mean[0] == Approx(2.5));
  // first step seeds the running stats with the (unbiased) batch stats
  CHECK(state.running_var[0] == Approx(1.25 * 4.0 / 3.0));
}

TEST_CASE("batch_norm constant channel stays finite") {
  auto x = T::full({2, 1, 1, 3}, 7.0);
  BatchNormState<double> state;
  auto y = batch_norm(x, T::ones({1}), T::zeros({1}), state, Mode::train);
  for (Index i = 0; i < y.size(); ++i) CHECK(y.value()[i] == 0.0);
}

TEST_CASE("batch_norm eval uses running stats") {
  auto a = T::from({1, 1, 1, 2}, {0, 2});
  auto b = T::from({1, 1, 1, 2}, {10, 14});
  auto gamma = T::ones({1});
  auto beta = T::zeros({1});
  BatchNormState<double> state;
  CHECK_THROWS_AS(batch_norm(a, gamma, beta, state, Mode::eval), std::runtime_error);  // before any train step
  (void)batch_norm(a, gamma, beta, state, Mode::train);  // running: mean 1, var 2 (unbiased)
  auto y = batch_norm(b, gamma, beta, state, Mode::eval);
  CHECK(y.value()[0] == Approx((10.0 - 1.0) / std::sqrt(2.0 + 1e-5)));
  CHECK(y.value()[1] == Approx((14.0 - 1.0) / std::sqrt(2.0 + 1e-5)));
  // second train step blends with momentum 0.1
  (void)batch_norm(b, gamma, beta, state, Mode::train);  // batch mean 12
  CHECK(state.running_mean[0] == Approx(0.9 * 1.0 + 0.1 * 12.0));
}

TEST_CASE("dropout contract") {
  auto x = T::from({1, 100}, ArrayX<double>(ArrayX<double>::Constant(100, 1.0)));
  CHECK_THROWS_AS(dropout(x, 1.0, Mode::train, nullptr), std::invalid_argument);
  CHECK_THROWS_AS(dropout(x, -0.1, Mode::train, nullptr), std::invalid_argument);
  CHECK_THROWS_AS(dropout(x, 0.5, Mode::train, nullptr), std::invalid_argument);  // rng required

  auto ev = dropout(x, 0.5, Mode::eval, nullptr);  // identity in eval
  for (Index i = 0; i < 100; ++i) CHECK(ev.value()[i] == 1.0);

  Rng rng(7);
  auto tr = dropout(x, 0.5, Mode::train, &rng);
  int zeros = 0;
  for (Index i = 0; i < 100; ++i) {
    const double v = tr.value()[i];
    CHECK((v == 0.0 || v == 2.0));  // survivors scaled by 1/(1-rate)
    zeros += v == 0.0;
  }
  CHECK(zeros > 20);
  CHECK(zeros < 80);

  Rng rng2(7);
  auto tr2 = dropout(x, 0.5, Mode::train, &rng2);
  for (Index i = 0; i < 100; ++i) CHECK(tr2.value()[i] == tr.value()[i]);  // same seed, same mask
}

TEST_CASE("softmax") {
  auto y = softmax(T::from({2, 2}, {0, 0, 5, 5}));
  for (Index i = 0; i < 4; ++i) CHECK(y.value()[i] == Approx(0.5));
  auto big = softmax(T::from({1, 2}, {1000, 1000}));  // max-shift keeps this finite
  CHECK(big.value()[0] == Approx(0.5));
  auto p = softmax(T::from({1, 3}, {1, 2, 0}));
  CHECK(p.value()[0] == Approx(0.24472847105479764));
  CHECK(p.value()[1] == Approx(0.6652409557748218));
  CHECK(p.value()[2] == Approx(0.09003057317038046));
  CHECK(p.value().sum() == Approx(1.0));
}

TEST_CASE("softmax_cross_entropy value and gradient") {
  std::vector<int> label1{1};
  auto logits = T::from({1, 3}, {1, 2, 0}, true);
  {
    Tape<double> tape;
    auto loss = softmax_cross_entropy(logits, std::span<const int>(label1));
    CHECK(loss.item() == Approx(0.4076059644443804));
    tape.backward(loss);
    CHECK(logits.grad()[0] == Approx(0.24472847105479764));
    CHECK(logits.grad()[1] == Approx(-0.3347590442251782));
    CHECK(logits.grad()[2] == Approx(0.09003057317038046));
  }
  std::vector<int> label0{0};
  auto even = T::from({1, 2}, {0, 0});
  CHECK(softmax_cross_entropy(even, std::span<const int>(label0)).item() == Approx(0.6931471805599453));

  std::vector<int> bad{3};
  CHECK_THROWS_AS(softmax_cross_entropy(logits, std::span<const int>(bad)), std::invalid_argument);
  std::vector<int> wrong_count{0, 1};
  CHECK_THROWS_AS(softmax_cross_entropy(logits, std::span<const int>(wrong_count)), std::invalid_argument);
}

TEST_CASE("argmax_rows breaks ties low") {
  auto x = T::from({3, 3}, {1, 5, 2, 7, 7, 1, 3, 3, 3});
  auto idx = argmax_rows(x);
  CHECK(idx == std::vector<int>{1, 0, 0});
}

TEST_CASE("add gradient is exactly one") {
  auto a = T::from({2}, {1, 2}, true);
  auto b = T::from({2}, {5, 9}, true);
  Tape<double> tape;
  tape.backward(sum(add(a, b)));
  CHECK(a.grad()[0] == 1.0);
  CHECK(b.grad()[1] == 1.0);
}

TEST_CASE("finite differences agree for a composite expression") {
  Rng rng(99);
  auto a = random_uniform_tensor({2, 3}, rng);
  auto b = detail::random_signed_tensor({3}, rng);
  auto r = gradcheck_tensors(
      "composite", {&a, &b}, [&] { return mean(mul(add(a, b), div(a, b))); }, 1e-6);
  CHECK(r.pass);
}

TEST_CASE("the finite-difference oracle detects a sabotaged derivative") {
  auto r = gradcheck_scalar(
      "sabotage", [](double x) { return std::sin(x); }, [](double x) { return std::cos(x) + 0.01; }, -3.0, 3.0, 100,
      1e-6, 0.0, false, 42);
  CHECK_FALSE(r.pass);
  auto ok = gradcheck_scalar(
      "sine", [](double x) { return std::sin(x); }, [](double x) { return std::cos(x); }, -3.0, 3.0, 100, 1e-6, 0.0,
      false, 42);
  CHECK(ok.pass);
}
