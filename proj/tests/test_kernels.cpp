#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "filtertwin/kernels.hpp"

namespace kn = filtertwin::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

// Sizes cover empty input, pure tails, exact vector widths and unrolled bodies.
const std::size_t kSizes[] = {0, 1, 2, 3, 4, 5, 7, 8, 15, 16, 17, 31, 64, 65, 100, 257};

}  // namespace

TEST_CASE("scalar kernels match naive loops") {
  std::mt19937_64 rng(1);
  const auto& s = kn::detail::scalar_table();
  for (std::size_t n : kSizes) {
    auto a = random_vec(n, rng), b = random_vec(n, rng);
    double d = 0, sm = 0, sq = 0;
    for (std::size_t i = 0; i < n; ++i) {
      d += a[i] * b[i];
      sm += a[i];
      sq += (a[i] - 0.25) * (a[i] - 0.25);
    }
    CHECK(rel_err(s.dot(a.data(), b.data(), n), d) < 1e-13);
    CHECK(rel_err(s.sum(a.data(), n), sm) < 1e-13);
    CHECK(rel_err(s.sum_sq_dev(a.data(), n, 0.25), sq) < 1e-13);
  }
}

TEST_CASE("gemv computes W x + b") {
  const std::vector<double> w{1, 2, 3, 4, 5, 6};  // 2 x 3
  const std::vector<double> x{1, 0, -1};
  const std::vector<double> bias{0.5, -0.5};
  std::vector<double> y(2);
  kn::gemv({w, 2, 3}, x, bias, y);
  CHECK(y[0] == doctest::Approx(-1.5));
  CHECK(y[1] == doctest::Approx(-2.5));
  kn::gemv({w, 2, 3}, x, {}, y);
  CHECK(y[0] == doctest::Approx(-2.0));
}

TEST_CASE("gemv_t_acc and ger_acc accumulate") {
  const std::vector<double> w{1, 2, 3, 4, 5, 6};
  std::vector<double> out{1, 1, 1};
  kn::gemv_t_acc({w, 2, 3}, std::vector<double>{1, -1}, out);
  CHECK(out == std::vector<double>{-2, -2, -2});
  std::vector<double> m(6, 0.0);
  kn::ger_acc({m, 2, 3}, std::vector<double>{1, 2}, std::vector<double>{3, 4, 5});
  CHECK(m == std::vector<double>{3, 4, 5, 6, 8, 10});
}

TEST_CASE("gemm variants accumulate products") {
  const std::vector<double> a{1, 2, 3, 4, 5, 6};  // 2 x 3
  const std::vector<double> b{1, 0, 0, 1, 1, 1};  // 3 x 2
  std::vector<double> c{1, 1, 1, 1};
  kn::gemm_nn_acc({a, 2, 3}, {b, 3, 2}, {c, 2, 2});
  CHECK(c == std::vector<double>{5, 6, 11, 12});
  // a read as the transpose of a 3 x 2 matrix
  const std::vector<double> at{1, 4, 2, 5, 3, 6};
  std::vector<double> c2(4, 1.0);
  kn::gemm_tn_acc({at, 3, 2}, {b, 3, 2}, {c2, 2, 2});
  CHECK(c2 == c);
  const std::vector<double> bt{1, 0, 1, 0, 1, 1};  // b stored transposed, 2 x 3
  std::vector<double> c3(4, 1.0);
  kn::gemm_nt_acc({a, 2, 3}, {bt, 2, 3}, {c3, 2, 2});
  CHECK(c3 == c);
  CHECK_THROWS_AS(kn::gemm_nn_acc({a, 2, 3}, {b, 2, 3}, {c, 2, 2}), std::invalid_argument);
  CHECK_THROWS_AS(kn::gemm_nt_acc({a, 2, 3}, {b, 3, 2}, {c, 2, 2}), std::invalid_argument);
  CHECK_THROWS_AS(kn::gemm_tn_acc({a, 2, 3}, {b, 3, 2}, {c, 2, 2}), std::invalid_argument);
}

TEST_CASE("shape mismatches are rejected") {
  std::vector<double> a(3), b(4), y(2);
  CHECK_THROWS_AS(kn::dot(a, b), std::invalid_argument);
  CHECK_THROWS_AS(kn::gemv({a, 2, 2}, b, {}, y), std::invalid_argument);
  CHECK_THROWS_AS(kn::axpy(1.0, a, b), std::invalid_argument);
}

TEST_CASE("activations stay in range") {
  std::vector<double> x{-800, -40, -1, 0, 1, 40, 800};
  auto s = x, t = x;
  kn::sigmoid_inplace(s);
  kn::tanh_inplace(t);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(s[i] >= 0.0);
    CHECK(s[i] <= 1.0);
    CHECK(t[i] >= -1.0);
    CHECK(t[i] <= 1.0);
  }
  CHECK(s[3] == 0.5);
  CHECK(t[3] == 0.0);
}

TEST_CASE("adam update matches the textbook step") {
  std::vector<double> p{1.0, -2.0}, m{0, 0}, v{0, 0};
  const std::vector<double> g{0.5, -0.25};
  kn::AdamStep st;
  st.bias_correction1 = 1 - 0.9;
  st.bias_correction2 = 1 - 0.999;
  kn::adam_update(p, m, v, g, st);
  for (std::size_t i = 0; i < 2; ++i) {
    const double mi = 0.1 * g[i], vi = 0.001 * g[i] * g[i];
    const double expect = (i == 0 ? 1.0 : -2.0) - 1e-3 * (mi / 0.1) / (std::sqrt(vi / 0.001) + 1e-8);
    CHECK(m[i] == doctest::Approx(mi).epsilon(1e-14));
    CHECK(v[i] == doctest::Approx(vi).epsilon(1e-14));
    CHECK(p[i] == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
  const auto* avx = kn::detail::avx2_table();
  if (avx == nullptr || !kn::isa_available(kn::Isa::avx2)) {
    MESSAGE("avx2 variant unavailable; skipping");
    return;
  }
  const auto& sc = kn::detail::scalar_table();
  std::mt19937_64 rng(7);
  for (std::size_t n : kSizes) {
    CAPTURE(n);
    auto a = random_vec(n, rng, 3.0), b = random_vec(n, rng, 3.0);
    CHECK(rel_err(avx->dot(a.data(), b.data(), n), sc.dot(a.data(), b.data(), n)) < 1e-12);
    CHECK(rel_err(avx->sum(a.data(), n), sc.sum(a.data(), n)) < 1e-12);
    CHECK(rel_err(avx->sum_sq_dev(a.data(), n, 0.3), sc.sum_sq_dev(a.data(), n, 0.3)) < 1e-12);

    auto y1 = b, y2 = b;
    sc.axpy(0.7, a.data(), y1.data(), n);
    avx->axpy(0.7, a.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-15));

    auto s1 = random_vec(n, rng, 30.0);
    auto s2 = s1, t1 = s1, t2 = s1;
    sc.sigmoid(s1.data(), n);
    avx->sigmoid(s2.data(), n);
    sc.tanh(t1.data(), n);
    avx->tanh(t2.data(), n);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(s1[i] - s2[i]) < 1e-14);
      CHECK(std::abs(t1[i] - t2[i]) < 1e-14);
    }

    auto p1 = random_vec(n, rng), m1 = random_vec(n, rng, 0.1), v1 = random_vec(n, rng, 0.01), g = random_vec(n, rng);
    for (auto& x : v1) x = std::abs(x);
    auto p2 = p1, m2 = m1, v2 = v1;
    kn::AdamStep st{1e-3, 0.9, 0.999, 1e-8, 0.19, 0.002};
    sc.adam_update(p1.data(), m1.data(), v1.data(), g.data(), n, st);
    avx->adam_update(p2.data(), m2.data(), v2.data(), g.data(), n, st);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(p1[i] == doctest::Approx(p2[i]).epsilon(1e-14));
      CHECK(m1[i] == doctest::Approx(m2[i]).epsilon(1e-14));
      CHECK(v1[i] == doctest::Approx(v2[i]).epsilon(1e-14));
    }
  }
  for (std::size_t rows : {1, 3, 4, 5, 8, 13, 64, 256})
    for (std::size_t cols : {1, 2, 5, 8, 9, 64}) {
      CAPTURE(rows);
      CAPTURE(cols);
      auto w = random_vec(rows * cols, rng), x = random_vec(cols, rng), bias = random_vec(rows, rng);
      std::vector<double> y1(rows), y2(rows);
      sc.gemv(w.data(), rows, cols, x.data(), bias.data(), y1.data());
      avx->gemv(w.data(), rows, cols, x.data(), bias.data(), y2.data());
      for (std::size_t i = 0; i < rows; ++i) CHECK(rel_err(y2[i], y1[i]) < 1e-13);
      sc.gemv(w.data(), rows, cols, x.data(), nullptr, y1.data());
      avx->gemv(w.data(), rows, cols, x.data(), nullptr, y2.data());
      for (std::size_t i = 0; i < rows; ++i) CHECK(rel_err(y2[i], y1[i]) < 1e-13);

      auto v = random_vec(rows, rng);
      auto o1 = random_vec(cols, rng), o2 = o1;
      sc.gemv_t_acc(w.data(), rows, cols, v.data(), o1.data());
      avx->gemv_t_acc(w.data(), rows, cols, v.data(), o2.data());
      for (std::size_t i = 0; i < cols; ++i) CHECK(rel_err(o2[i], o1[i]) < 1e-13);

      auto w1 = w, w2 = w;
      sc.ger_acc(w1.data(), rows, cols, v.data(), x.data());
      avx->ger_acc(w2.data(), rows, cols, v.data(), x.data());
      for (std::size_t i = 0; i < w1.size(); ++i) CHECK(rel_err(w2[i], w1[i]) < 1e-15);
    }
  for (std::size_t m : {1, 3, 4, 7, 64, 256})
    for (std::size_t kk : {0, 1, 5, 32, 64})
      for (std::size_t n : {1, 3, 4, 5, 8, 13, 32}) {
        CAPTURE(m);
        CAPTURE(kk);
        CAPTURE(n);
        const auto a = random_vec(m * kk, rng), b = random_vec(kk * n, rng), c0 = random_vec(m * n, rng);
        auto c1 = c0, c2 = c0;
        sc.gemm_nn_acc(a.data(), b.data(), c1.data(), m, kk, n);
        avx->gemm_nn_acc(a.data(), b.data(), c2.data(), m, kk, n);
        for (std::size_t i = 0; i < c1.size(); ++i) CHECK(rel_err(c2[i], c1[i]) < 1e-13);
        c1 = c0;
        c2 = c0;
        sc.gemm_tn_acc(a.data(), b.data(), c1.data(), m, kk, n);
        avx->gemm_tn_acc(a.data(), b.data(), c2.data(), m, kk, n);
        for (std::size_t i = 0; i < c1.size(); ++i) CHECK(rel_err(c2[i], c1[i]) < 1e-13);
        c1 = c0;
        c2 = c0;
        sc.gemm_nt_acc(a.data(), b.data(), c1.data(), m, kk, n);
        avx->gemm_nt_acc(a.data(), b.data(), c2.data(), m, kk, n);
        for (std::size_t i = 0; i < c1.size(); ++i) CHECK(rel_err(c2[i], c1[i]) < 1e-13);
      }
}

TEST_CASE("isa selection can be forced") {
  const auto before = kn::active_isa();
  kn::force_isa(kn::Isa::scalar);
  CHECK(kn::active_isa() == kn::Isa::scalar);
  if (kn::isa_available(kn::Isa::avx2)) {
    kn::force_isa(kn::Isa::avx2);
    CHECK(kn::active_isa() == kn::Isa::avx2);
  } else {
    CHECK_THROWS(kn::force_isa(kn::Isa::avx2));
  }
  kn::force_isa(before);
}
