#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "focalseg/attention.hpp"
#include "oracles.hpp"

using namespace focalseg;

namespace {

Tensor<double> random_tensor(std::mt19937_64& rng, std::size_t c, std::size_t h, std::size_t w) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor<double> t(c, h, w);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.same_shape(b));
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Quadratic probe loss: sum(r * y) + 0.5 * sum(y^2); returns the loss and dL/dy.
struct Probe {
  std::vector<double> r;
  double loss(const Tensor<double>& y) const {
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i] + 0.5 * y[i] * y[i];
    return s;
  }
  Tensor<double> grad(const Tensor<double>& y) const {
    Tensor<double> g = y;
    for (std::size_t i = 0; i < y.size(); ++i) g[i] = r[i] + y[i];
    return g;
  }
};

Probe make_probe(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Probe p;
  p.r.resize(n);
  for (auto& v : p.r) v = u(rng);
  return p;
}

template <typename Module, typename Forward>
void check_parameter_gradients(Module& m, Forward forward, const Probe& probe) {
  std::vector<Parameter<double>*> params;
  m.collect(params);
  for (auto* p : params) {
    CAPTURE(p->name);
    std::vector<double> analytic = p->grad;
    auto f = [&](const std::vector<double>& v) {
      const auto saved = p->value;
      p->value = v;
      const double l = probe.loss(forward());
      p->value = saved;
      return l;
    };
    const auto r = oracle::compare_gradients(analytic, oracle::numeric_gradient(f, p->value, 1e-6));
    CHECK(r.max_rel_error < 1e-4);
  }
}

}  // namespace

TEST_CASE("focal layer values") {
  Tensor<double> a(1, 1, 4);
  a[0] = 0.0;
  a[1] = 0.25;
  a[2] = 0.5;
  a[3] = 1.0;
  CHECK(focal_layer(a, 1.0) == a);
  const auto ones = focal_layer(a, 0.0);
  for (double v : ones.values()) CHECK(v == 1.0);
  CHECK(focal_layer(a, 2.0)[2] == 0.25);
  CHECK(focal_layer(a, -1.0)[0] == doctest::Approx(1.0 / kFocalCoefficientFloor));
  CHECK_THROWS_AS(focal_layer(a, std::nan("")), Error);
  CHECK_THROWS_AS(focal_layer(a, std::numeric_limits<double>::infinity()), Error);
}

TEST_CASE("focal layer preserves [0,1] and sharpens monotonically") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(1e-3, 1.0 - 1e-3);
  Tensor<double> a(1, 1, 200);
  for (auto& v : a.values()) v = u(rng);
  Tensor<double> prev = focal_layer(a, 0.0);
  for (double f : {0.1, 0.5, 1.0, 2.0, 5.0}) {
    const auto y = focal_layer(a, f);
    for (std::size_t i = 0; i < y.size(); ++i) {
      CHECK(y[i] >= 0.0);
      CHECK(y[i] <= 1.0);
      CHECK(y[i] < prev[i]);
    }
    prev = y;
  }
}

TEST_CASE("SE bottleneck width") {
  CHECK(se_bottleneck_width(64, 8) == 8);
  CHECK(se_bottleneck_width(12, 8) == 1);
  CHECK(se_bottleneck_width(1, 8) == 1);
  CHECK_THROWS_AS(se_bottleneck_width(8, 0), Error);
}

TEST_CASE("SE hand computation on a single channel") {
  Tensor<double> x(1, 2, 2);
  x[0] = 1;
  x[1] = 2;
  x[2] = 3;
  x[3] = 4;
  auto p = SEParams<double>::zeros(1, 8);
  REQUIRE(p.hidden == 1);
  p.fc1_weight = {0.5};
  p.fc2_weight = {2.0};
  p.fc2_bias = {-1.0};
  const double s = 1.0 / (1.0 + std::exp(-(2.0 * (0.5 * 2.5) - 1.0)));
  const auto r = se_forward(x, p);
  CHECK(r.coefficients[0] == doctest::Approx(s).epsilon(1e-15));
  for (std::size_t i = 0; i < 4; ++i) CHECK(r.output[i] == doctest::Approx(x[i] * s).epsilon(1e-15));
}

TEST_CASE("SE with all-one coefficients passes input through") {
  std::mt19937_64 rng(2);
  const auto x = random_tensor(rng, 8, 4, 4);
  auto p = SEParams<double>::zeros(8, 8);
  p.fc2_bias.assign(8, 50.0);
  const auto r = se_forward(x, p);
  CHECK(max_abs_diff(r.output, x) == 0.0);
}

TEST_CASE("AG hand computation") {
  Tensor<double> x(1, 2, 2);
  x[0] = 1;
  x[1] = 2;
  x[2] = 3;
  x[3] = 4;
  Tensor<double> g(1, 1, 1, 0.5);
  auto p = AGParams<double>::zeros(1, 1, 2);
  REQUIRE(p.inter == 1);
  p.theta_weight = {0.1, 0.2, 0.3, 0.4};
  p.phi_weight = {1.0};
  p.phi_bias = {-1.0};
  p.psi_weight = {0.4};
  p.psi_bias = -0.5;
  // theta = 3.0, phi = -0.5, relu(2.5) * 0.4 - 0.5 = 0.5
  const double a = 1.0 / (1.0 + std::exp(-0.5));
  const auto r = ag_forward(x, g, p);
  REQUIRE(r.coefficients.height() == 2);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(r.coefficients[i] == doctest::Approx(a).epsilon(1e-15));
    CHECK(r.output[i] == doctest::Approx(x[i] * a).epsilon(1e-15));
  }
  const auto f2 = focal_ag_forward(x, g, p, 2.0);
  CHECK(f2.output[3] == doctest::Approx(4 * a * a).epsilon(1e-15));
}

TEST_CASE("AG with forced coefficients") {
  std::mt19937_64 rng(3);
  const auto x = random_tensor(rng, 4, 8, 8);
  const auto g = random_tensor(rng, 6, 4, 4);
  auto p = AGParams<double>::zeros(4, 6, 2);
  p.psi_bias = 50.0;
  CHECK(max_abs_diff(ag_forward(x, g, p).output, x) == 0.0);
  p.psi_bias = -800.0;
  const auto closed = ag_forward(x, g, p);
  for (double v : closed.output.values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(ag_forward(x, random_tensor(rng, 5, 4, 4), p), Error);
}

TEST_CASE("focal modules at f = 0 and f = 1") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    const auto x = random_tensor(rng, 16, 8, 8);
    const auto g = random_tensor(rng, 32, 4, 4);
    SEBlock<double> se("se", 16, 8, 1.0, 100 + t);
    SEParams<double> sp;
    sp.channels = 16;
    sp.hidden = 2;
    sp.fc1_weight = se.fc1_weight.value;
    sp.fc1_bias = se.fc1_bias.value;
    sp.fc2_weight = se.fc2_weight.value;
    sp.fc2_bias = se.fc2_bias.value;
    CHECK(max_abs_diff(focal_se_forward(x, sp, 0.0).output, x) == 0.0);
    CHECK(max_abs_diff(focal_se_forward(x, sp, 1.0).output, se_forward(x, sp).output) <= 1e-12);
    CHECK(max_abs_diff(se.forward(x), se_forward(x, sp).output) <= 1e-12);

    AttentionGate<double> ag("ag", 16, 32, 2, 0.0, 200 + t);
    CHECK(max_abs_diff(ag.forward(x, g), x) == 0.0);
    AGParams<double> ap = AGParams<double>::zeros(16, 32, 2);
    ap.theta_weight = ag.theta_x.weight.value;
    ap.phi_weight = ag.phi_g.weight.value;
    ap.phi_bias = ag.phi_g.bias.value;
    ap.psi_weight = ag.psi.weight.value;
    ap.psi_bias = ag.psi.bias.value[0];
    CHECK(max_abs_diff(focal_ag_forward(x, g, ap, 1.0).output, ag_forward(x, g, ap).output) <= 1e-12);
    CHECK(max_abs_diff(focal_ag_forward(x, g, ap, 0.0).output, x) == 0.0);
  }
}

TEST_CASE("SE block gradients") {
  std::mt19937_64 rng(5);
  for (double f0 : {0.0, 0.6, 1.0, 1.7}) {
    CAPTURE(f0);
    SEBlock<double> se("se", 8, 4, f0, 7);
    const auto x = random_tensor(rng, 8, 4, 4);
    const auto probe = make_probe(rng, x.size());
    const auto y = se.forward(x);
    std::vector<Parameter<double>*> params;
    se.collect(params);
    for (auto* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
    const auto dx = se.backward(probe.grad(y));
    CHECK(se.focal.grad[0] != 0.0);
    check_parameter_gradients(se, [&] { return se.forward(x); }, probe);

    std::vector<double> xv(x.values().begin(), x.values().end());
    auto fx = [&](const std::vector<double>& v) {
      Tensor<double> xx = x;
      std::copy(v.begin(), v.end(), xx.values().begin());
      return probe.loss(se.forward(xx));
    };
    const std::vector<double> a(dx.values().begin(), dx.values().end());
    CHECK(oracle::compare_gradients(a, oracle::numeric_gradient(fx, xv, 1e-6)).max_rel_error < 1e-4);
  }
}

TEST_CASE("attention gate gradients") {
  std::mt19937_64 rng(6);
  for (double f0 : {0.0, 0.6, 1.0, 1.7}) {
    CAPTURE(f0);
    AttentionGate<double> ag("ag", 4, 6, 2, f0, 9);
    const auto x = random_tensor(rng, 4, 6, 6);
    const auto g = random_tensor(rng, 6, 3, 3);
    const auto probe = make_probe(rng, x.size());
    const auto y = ag.forward(x, g);
    std::vector<Parameter<double>*> params;
    ag.collect(params);
    for (auto* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
    const auto [dx, dg] = ag.backward(probe.grad(y));
    CHECK(ag.focal.grad[0] != 0.0);
    check_parameter_gradients(ag, [&] { return ag.forward(x, g); }, probe);

    auto input_check = [&](const Tensor<double>& base, const Tensor<double>& analytic, bool is_x) {
      std::vector<double> v(base.values().begin(), base.values().end());
      auto f = [&](const std::vector<double>& w) {
        Tensor<double> t = base;
        std::copy(w.begin(), w.end(), t.values().begin());
        return probe.loss(is_x ? ag.forward(t, g) : ag.forward(x, t));
      };
      const std::vector<double> a(analytic.values().begin(), analytic.values().end());
      CHECK(oracle::compare_gradients(a, oracle::numeric_gradient(f, v, 1e-6)).max_rel_error < 1e-4);
    };
    input_check(x, dx, true);
    input_check(g, dg, false);
  }
}

TEST_CASE("focal gradient through a two-layer toy net") {
  // conv -> focal SE -> loss; d loss / d f by central differences
  std::mt19937_64 rng(7);
  Conv2d<double> conv("conv", 3, 8, {3, 1, 1}, true, 3);
  SEBlock<double> se("se", 8, 4, 0.4, 4);
  const auto x = random_tensor(rng, 3, 6, 6);
  const auto probe = make_probe(rng, 8 * 36);
  auto run = [&] { return se.forward(conv.forward(x)); };
  const auto y = run();
  se.focal.grad[0] = 0.0;
  se.backward(probe.grad(y));
  const double analytic = se.focal.grad[0];
  auto f = [&](const std::vector<double>& v) {
    const double saved = se.focal.value[0];
    se.focal.value[0] = v[0];
    const double l = probe.loss(run());
    se.focal.value[0] = saved;
    return l;
  };
  const double numeric = oracle::numeric_gradient(f, se.focal.value, 1e-6)[0];
  CHECK(analytic != 0.0);
  CHECK(std::abs(analytic - numeric) / std::abs(numeric) < 1e-4);
}
