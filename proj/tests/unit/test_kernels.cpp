#include <random>

#include "doctest.h"
#include "focalseg/kernels.hpp"
#include "focalseg/layers.hpp"

using namespace focalseg;
namespace k = focalseg::kernels;

namespace {

template <typename T>
std::vector<T> random_vec(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(u(rng));
  return v;
}

template <typename T>
Tensor<T> random_tensor(std::mt19937_64& rng, std::size_t c, std::size_t h, std::size_t w) {
  Tensor<T> t(c, h, w);
  const auto v = random_vec<T>(rng, t.size());
  std::copy(v.begin(), v.end(), t.values().begin());
  return t;
}

template <typename A, typename B>
double max_diff(const A& a, const B& b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace

TEST_CASE("GEMM variants match the serial reference") {
  std::mt19937_64 rng(1);
  for (auto [m, n, kk] : {std::tuple{1, 1, 1}, {3, 7, 5}, {17, 33, 9}, {64, 130, 27}}) {
    const auto a = random_vec<double>(rng, m * kk);
    const auto b = random_vec<double>(rng, kk * n);
    std::vector<double> ref(m * n), got(m * n, 5.0);
    k::reference::gemm_nn<double>(m, n, kk, a.data(), b.data(), ref.data(), false);
    k::gemm_nn<double>(m, n, kk, a.data(), b.data(), got.data(), false);
    CHECK(max_diff(ref, got) < 1e-12);

    // accumulate
    std::vector<double> acc = ref;
    k::gemm_nn<double>(m, n, kk, a.data(), b.data(), acc.data(), true);
    for (std::size_t i = 0; i < acc.size(); ++i) CHECK(acc[i] == doctest::Approx(2 * ref[i]));

    // B stored transposed (N x K)
    std::vector<double> bt(n * kk);
    for (int r = 0; r < kk; ++r)
      for (int c = 0; c < n; ++c) bt[c * kk + r] = b[r * n + c];
    k::gemm_nt<double>(m, n, kk, a.data(), bt.data(), got.data(), false);
    CHECK(max_diff(ref, got) < 1e-12);

    // A stored transposed (K x M)
    std::vector<double> at(kk * m);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < kk; ++c) at[c * m + r] = a[r * kk + c];
    k::gemm_tn<double>(m, n, kk, at.data(), b.data(), got.data(), false);
    CHECK(max_diff(ref, got) < 1e-12);
  }
}

TEST_CASE("conv2d forward and backward match the reference") {
  std::mt19937_64 rng(2);
  const k::ConvGeometry geos[] = {{3, 1, 1}, {1, 1, 0}, {2, 2, 0}, {3, 2, 1}};
  for (const auto geo : geos) {
    for (auto [cin, cout, h, w] : {std::tuple{1, 1, 4, 4}, {3, 8, 8, 6}, {5, 4, 16, 16}}) {
      CAPTURE(geo.kernel);
      CAPTURE(geo.stride);
      const auto x = random_tensor<double>(rng, cin, h, w);
      const auto wt = random_vec<double>(rng, cout * cin * geo.kernel * geo.kernel);
      const auto bias = random_vec<double>(rng, cout);
      Tensor<double> ref, got;
      k::reference::conv2d_forward<double>(x, wt, bias, cout, geo, ref);
      k::conv2d_forward<double>(x, wt, bias, cout, geo, got);
      REQUIRE(ref.same_shape(got));
      CHECK(max_diff(ref, got) < 1e-12);

      const auto dy = random_tensor<double>(rng, cout, ref.height(), ref.width());
      Tensor<double> dx_ref, dx_got;
      std::vector<double> dw_ref(wt.size(), 0.5), dw_got(wt.size(), 0.5), db_ref(cout, 0.25), db_got(cout, 0.25);
      k::reference::conv2d_backward<double>(x, wt, cout, geo, dy, &dx_ref, dw_ref, db_ref);
      k::conv2d_backward<double>(x, wt, cout, geo, dy, &dx_got, dw_got, db_got);
      CHECK(max_diff(dx_ref, dx_got) < 1e-12);
      CHECK(max_diff(dw_ref, dw_got) < 1e-12);
      CHECK(max_diff(db_ref, db_got) < 1e-12);
    }
  }
}

TEST_CASE("float kernels agree with double reference") {
  std::mt19937_64 rng(3);
  const auto xd = random_tensor<double>(rng, 8, 16, 16);
  const auto wd = random_vec<double>(rng, 16 * 8 * 9);
  const std::vector<double> bd(16, 0.1);
  Tensor<double> ref;
  k::reference::conv2d_forward<double>(xd, wd, bd, 16, {3, 1, 1}, ref);
  const auto xf = xd.cast<float>();
  const std::vector<float> wf(wd.begin(), wd.end()), bf(bd.begin(), bd.end());
  Tensor<float> got;
  k::conv2d_forward<float>(xf, wf, bf, 16, {3, 1, 1}, got);
  CHECK(max_diff(ref, got) < 1e-4);
}

TEST_CASE("transposed convolution matches the reference") {
  std::mt19937_64 rng(4);
  for (auto [cin, cout, h, w] : {std::tuple{1, 1, 1, 1}, {4, 2, 3, 5}, {16, 8, 8, 8}}) {
    const auto x = random_tensor<double>(rng, cin, h, w);
    const auto wt = random_vec<double>(rng, cin * cout * 4);
    const auto bias = random_vec<double>(rng, cout);
    Tensor<double> ref, got;
    k::reference::conv_transpose2x2_forward<double>(x, wt, bias, cout, ref);
    k::conv_transpose2x2_forward<double>(x, wt, bias, cout, got);
    REQUIRE(got.height() == 2 * h);
    CHECK(max_diff(ref, got) < 1e-12);

    const auto dy = random_tensor<double>(rng, cout, 2 * h, 2 * w);
    Tensor<double> dx_ref, dx_got;
    std::vector<double> dw_ref(wt.size()), dw_got(wt.size()), db_ref(cout), db_got(cout);
    k::reference::conv_transpose2x2_backward<double>(x, wt, cout, dy, &dx_ref, dw_ref, db_ref);
    k::conv_transpose2x2_backward<double>(x, wt, cout, dy, &dx_got, dw_got, db_got);
    CHECK(max_diff(dx_ref, dx_got) < 1e-12);
    CHECK(max_diff(dw_ref, dw_got) < 1e-12);
    CHECK(max_diff(db_ref, db_got) < 1e-12);
  }
}

TEST_CASE("bilinear upsampling backward is the adjoint") {
  std::mt19937_64 rng(5);
  for (auto [h, w, H, W] : {std::tuple{1, 1, 4, 4}, {2, 3, 4, 6}, {4, 4, 16, 16}, {3, 3, 3, 3}}) {
    const auto x = random_tensor<double>(rng, 2, h, w);
    const auto y = random_tensor<double>(rng, 2, H, W);
    const auto ux = upsample_bilinear(x, H, W);
    const auto aty = upsample_bilinear_backward(y, h, w);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < ux.size(); ++i) lhs += ux[i] * y[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * aty[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
  // identity resize and constant preservation
  const auto x = random_tensor<double>(rng, 1, 3, 3);
  CHECK(max_diff(upsample_bilinear(x, 3, 3), x) < 1e-15);
  Tensor<double> c(1, 2, 2, 0.7);
  const auto up = upsample_bilinear(c, 8, 8);
  for (double v : up.values()) CHECK(v == doctest::Approx(0.7));
}
