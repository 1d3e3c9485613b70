#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <thread>

#include "actfn/ops.hpp"
#include "actfn/tensor.hpp"

using namespace actfn;
using T = Tensor<double>;

TEST_CASE("shape bookkeeping") {
  auto t = T::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.dim(0) == 2);
  CHECK(t.dim(1) == 3);
  CHECK(t.at({0, 0}) == 1);
  CHECK(t.at({1, 2}) == 6);
  CHECK(shape_string(t.shape()) == "(2,3)");
}

TEST_CASE("factories") {
  CHECK(T::zeros({2, 2}).value().sum() == 0);
  CHECK(T::ones({3}).value().sum() == 3);
  CHECK(T::full({2}, 2.5).value().sum() == 5.0);
  CHECK(T::scalar(4.0).item() == 4.0);
}

TEST_CASE("construction errors") {
  CHECK_THROWS_AS(T::from({2, 3}, {1, 2}), std::invalid_argument);          // size mismatch
  CHECK_THROWS_AS(T::from({0, 3}, std::vector<double>{}), std::invalid_argument);  // zero extent
  CHECK_THROWS_AS(T::from({}, {1.0}), std::invalid_argument);               // rank-0 disallowed
  CHECK_THROWS_AS(T::from({1}, {std::nan("")}), std::runtime_error);        // non-finite
  CHECK_THROWS_AS(T::from({1}, {std::numeric_limits<double>::infinity()}), std::runtime_error);
  CHECK_THROWS_AS(T::from({2}, {1, 2}).item(), std::invalid_argument);      // item needs a scalar
  CHECK_THROWS_AS(T::from({2}, {1, 2}).at({5}), std::out_of_range);
}

TEST_CASE("no tape means no recording") {
  auto x = T::from({2}, {1, 2}, true);
  auto y = add(x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("grad accumulates over reuse") {
  auto x = T::from({2}, {1, 2}, true);
  Tape<double> tape;
  auto y = sum(add(x, x));
  tape.backward(y);
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 2.0);
}

TEST_CASE("mul by ones is identity with unit grad") {
  auto x = T::from({3}, {1.5, -2.0, 0.25}, true);
  Tape<double> tape;
  auto y = sum(mul(x, T::ones({3})));
  tape.backward(y);
  for (Index i = 0; i < 3; ++i) {
    CHECK(x.grad()[i] == 1.0);
  }
}

TEST_CASE("one backward per forward") {
  auto x = T::from({2}, {1, 2}, true);
  Tape<double> tape;
  auto y = sum(x);
  tape.backward(y);
  CHECK(tape.consumed());
  CHECK_THROWS_AS(tape.backward(y), std::runtime_error);
  // recording onto a consumed tape is also an error
  CHECK_THROWS_AS((void)sum(x), std::runtime_error);
  tape.reset();
  auto z = sum(x);
  x.zero_grad();
  tape.backward(z);
  CHECK(x.grad()[0] == 1.0);
}

TEST_CASE("backward validates its root") {
  Tape<double> tape;
  auto c = T::from({2}, {1, 2});     // no grad required
  CHECK_THROWS_AS(tape.backward(sum(c)), std::runtime_error);  // nothing recorded
  auto x = T::from({2}, {1, 2}, true);
  auto y = add(x, x);                // not a scalar
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("backward frees the recording") {
  auto x = T::from({4}, {1, 2, 3, 4}, true);
  Tape<double> tape;
  auto y = sum(mul(x, x));
  CHECK(tape.size() > 0);
  tape.backward(y);
  CHECK(tape.size() == 0);
}

TEST_CASE("nested tapes restore the outer recorder") {
  auto x = T::from({2}, {3, 4}, true);
  Tape<double> outer;
  auto y = sum(x);
  {
    Tape<double> inner;
    auto z = sum(mul(x, x));
    inner.backward(z);
    CHECK(x.grad()[0] == 6.0);  // d(x^2)/dx = 2x
    x.zero_grad();
  }
  outer.backward(y);  // outer tape unaffected by the inner one
  CHECK(x.grad()[0] == 1.0);
}

TEST_CASE("tapes are thread-local") {
  auto worker = [](double scale, double* out) {
    auto x = T::from({2}, {scale, 2 * scale}, true);
    Tape<double> tape;
    auto y = sum(mul(x, x));
    tape.backward(y);
    *out = x.grad()[0];
  };
  double g1 = 0, g2 = 0;
  std::thread t1(worker, 1.0, &g1);
  std::thread t2(worker, 5.0, &g2);
  t1.join();
  t2.join();
  CHECK(g1 == 2.0);
  CHECK(g2 == 10.0);
}

TEST_CASE("raw value mutation feeds later ops") {
  auto x = T::from({2}, {1, 2}, true);
  x.raw_value()[0] = 10;
  CHECK(x.value()[0] == 10);
}
