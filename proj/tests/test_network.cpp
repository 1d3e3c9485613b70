#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "actfn/network.hpp"

using namespace actfn;
using T = Tensor<double>;
using doctest::Approx;

namespace {

NetworkConfig default_cfg(ActivationKind kind = ActivationKind::relu) {
  NetworkConfig cfg;
  cfg.activation = ActivationSpec(kind);
  return cfg;
}

Network<double> make(const std::string& arch, NetworkConfig cfg = default_cfg(), std::uint64_t seed = 11) {
  Rng rng(seed);
  return build_network<double>(arch, std::move(cfg), rng);
}

T random_input(Index n, Index c, Index t, std::uint64_t seed) {
  Rng rng(seed);
  ArrayX<double> v(n * c * t);
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  return T::from({n, 1, c, t}, std::move(v));
}

int count_kind(const Network<double>& net, LayerKind kind) {
  int n = 0;
  for (const auto& s : net.layer_specs()) n += s.kind == kind;
  return n;
}

}  // namespace

TEST_CASE("parameter counts are frozen regression values") {
  CHECK(make("fnirsnet").parameter_count() == 6506);
  CHECK(make("absolutenet").parameter_count() == 6602);
  CHECK(make("mdnn").parameter_count() == 6874);
  CHECK(make("shallowconvnet").parameter_count() == 2362);
}

TEST_CASE("classifier contract: batch 16 in, (16,2) probabilities out") {
  for (const auto& arch : architecture_names()) {
    auto net = make(arch);
    auto x = random_input(16, 28, 150, 400 + arch.size());
    Rng drop(1);
    auto y = net.forward(x, Mode::train, &drop);
    CHECK(y.shape() == Shape{16, 2});
    for (Index n = 0; n < 16; ++n) {
      const double p0 = y.at({n, 0}), p1 = y.at({n, 1});
      CHECK(p0 >= 0.0);
      CHECK(p1 >= 0.0);
      CHECK(p0 + p1 == Approx(1.0));
    }
  }
}

TEST_CASE("layer composition per architecture") {
  auto fn = make("fnirsnet");
  CHECK(count_kind(fn, LayerKind::conv) == 5);
  CHECK(count_kind(fn, LayerKind::batchnorm) == 0);
  CHECK(fn.activation_specs().size() == 5);

  auto ab = make("absolutenet");
  CHECK(count_kind(ab, LayerKind::conv) == 5);
  CHECK(count_kind(ab, LayerKind::batchnorm) == 5);
  CHECK(ab.activation_specs().size() == 5);

  auto md = make("mdnn");
  CHECK(count_kind(md, LayerKind::conv) == 4);  // two spatial + two temporal
  CHECK(count_kind(md, LayerKind::batchnorm) == 0);
  CHECK(md.activation_specs().size() == 4);

  auto sh = make("shallowconvnet");
  CHECK(count_kind(sh, LayerKind::conv) == 2);
  CHECK(count_kind(sh, LayerKind::batchnorm) == 1);
  CHECK(sh.activation_specs().size() == 1);

  // block-level dropout: none in the parallel branches, one half-rate unit
  // per deep/fusion conv block, plus the full-rate classifier unit
  CHECK(count_kind(fn, LayerKind::dropout) == 2);
  CHECK(count_kind(ab, LayerKind::dropout) == 2);
  CHECK(count_kind(md, LayerKind::dropout) == 5);
  CHECK(count_kind(sh, LayerKind::dropout) == 2);

  for (const auto& arch : architecture_names()) {
    auto net = make(arch);
    CHECK(count_kind(net, LayerKind::dense) == 1);
    CHECK(count_kind(net, LayerKind::avgpool) == 1);
  }
}

TEST_CASE("activation slots are uniform") {
  auto cfg = default_cfg(ActivationKind::maf);
  cfg.activation = ActivationSpec(ActivationKind::maf, -2.0);
  auto net = make("fnirsnet", cfg);
  auto specs = net.activation_specs();
  for (const auto& s : specs) {
    CHECK(s.kind == ActivationKind::maf);
    CHECK(s.alpha == -2.0);
  }
}

TEST_CASE("batch norm can be toggled per config") {
  auto cfg = default_cfg();
  cfg.batch_norm = true;
  CHECK(make("fnirsnet", cfg).parameter_count() == 6602);  // fnirsnet + bn == absolutenet widths
  cfg.batch_norm = false;
  CHECK(make("absolutenet", cfg).parameter_count() == 6506);
  CHECK(make("shallowconvnet", cfg).parameter_count() == 2346);  // 2362 minus one 8-channel norm
}

TEST_CASE("swapping the activation never changes shapes or counts") {
  for (const auto& arch : architecture_names()) {
    auto a = make(arch, default_cfg(ActivationKind::relu));
    auto b = make(arch, default_cfg(ActivationKind::square));
    CHECK(a.parameter_count() == b.parameter_count());
    CHECK(a.output_shape() == b.output_shape());
    auto x = random_input(2, 28, 150, 8);
    Rng da(1), db(1);
    CHECK(a.forward_logits(x, Mode::train, &da).shape() == b.forward_logits(x, Mode::train, &db).shape());
  }
}

TEST_CASE("initialization is seed-deterministic") {
  auto a = make("mdnn", default_cfg(), 77);
  auto b = make("mdnn", default_cfg(), 77);
  auto c = make("mdnn", default_cfg(), 78);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool all_equal = true, any_diff_seed = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    all_equal = all_equal && (pa[i]->value() == pb[i]->value()).all();
    any_diff_seed = any_diff_seed || (pc[i]->value() != pa[i]->value()).any();
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);
}

TEST_CASE("eval forward is deterministic (dropout disabled)") {
  auto net = make("fnirsnet");
  auto x = random_input(3, 28, 150, 21);
  auto y1 = net.forward(x, Mode::eval);
  auto y2 = net.forward(x, Mode::eval);
  CHECK((y1.value() == y2.value()).all());
}

TEST_CASE("all-zero input stays a valid probability at eval") {
  auto net = make("absolutenet");
  auto zero = T::zeros({4, 1, 28, 150});
  Rng drop(3);
  (void)net.forward(zero, Mode::train, &drop);  // seeds batch-norm running stats
  auto y = net.forward(zero, Mode::eval);
  for (Index i = 0; i < y.size(); ++i) CHECK(std::isfinite(y.value()[i]));
  CHECK(y.at({0, 0}) + y.at({0, 1}) == Approx(1.0));
}

TEST_CASE("gradient reaches the first layer") {
  auto net = make("mdnn");
  auto x = random_input(4, 28, 150, 31);
  std::vector<int> labels{0, 1, 1, 0};
  Tape<double> tape;
  Rng drop(5);
  auto loss = softmax_cross_entropy(net.forward_logits(x, Mode::train, &drop), std::span<const int>(labels));
  tape.backward(loss);
  auto* first_weight = net.parameters().front();
  REQUIRE(first_weight->has_grad());
  CHECK(first_weight->grad().abs().sum() > 0.0);
}

TEST_CASE("snapshot and restore round-trip") {
  auto net = make("shallowconvnet");
  auto x = random_input(4, 28, 150, 55);
  Rng drop(9);
  (void)net.forward(x, Mode::train, &drop);  // initialize bn state
  auto snap = net.snapshot();
  auto before = net.forward(x, Mode::eval);

  for (auto* p : net.parameters()) p->raw_value() += 0.25;  // clobber
  auto clobbered = net.forward(x, Mode::eval);
  CHECK((clobbered.value() != before.value()).any());

  net.restore(snap);
  auto after = net.forward(x, Mode::eval);
  CHECK((after.value() == before.value()).all());
}

TEST_CASE("input and config validation") {
  auto net = make("fnirsnet");
  CHECK_THROWS_AS(net.forward(T::zeros({2, 1, 27, 150}), Mode::eval), std::invalid_argument);
  CHECK_THROWS_AS(net.forward(T::zeros({2, 28, 150}), Mode::eval), std::invalid_argument);

  auto cfg = default_cfg();
  cfg.timepoints = 5;  // shorter than the temporal kernel
  CHECK_THROWS_AS(make("fnirsnet", cfg), std::invalid_argument);

  CHECK_THROWS_AS(make("deepnet9000"), std::invalid_argument);
  CHECK(architecture_names() == std::vector<std::string>{"fnirsnet", "absolutenet", "mdnn", "shallowconvnet"});
}

TEST_CASE("eval before any training step fails on batch-norm nets") {
  auto net = make("absolutenet");
  CHECK_THROWS_AS(net.forward(T::zeros({2, 1, 28, 150}), Mode::eval), std::runtime_error);
}
