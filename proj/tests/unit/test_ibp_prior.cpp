#include <doctest.h>

#include <cmath>

#include "ibpd/ibp_prior.hpp"

using namespace ibpd;

TEST_CASE("sticks_to_pi") {
  const Tensor pi = sticks_to_pi(Tensor::vector({0.5, 0.5, 0.5}));
  CHECK(pi[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(pi[1] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(pi[2] == doctest::Approx(0.125).epsilon(1e-14));

  const Tensor near_one = sticks_to_pi(Tensor::full({20}, 1.0 - 1e-9));
  for (std::size_t k = 0; k < 20; ++k) {
    CHECK(near_one[k] > 1.0 - 1e-7);
    if (k) CHECK(near_one[k] <= near_one[k - 1]);
  }
  CHECK_THROWS_AS(sticks_to_pi(Tensor::vector({0.5, 1.5})), DomainError);
  CHECK_THROWS_AS(sticks_to_pi(Tensor::vector({0.0, 0.5})), DomainError);
}

TEST_CASE("sticks_to_pi matches the direct product and is monotone") {
  Rng rng(5);
  for (int t = 0; t < 1000; ++t) {
    const Tensor nu = rng.uniform_tensor({12});
    const Tensor pi = sticks_to_pi(nu);
    double prod = 1.0;
    for (std::size_t k = 0; k < 12; ++k) {
      prod *= nu[k];
      CHECK(std::abs(pi[k] - prod) <= 1e-12 * prod);
      if (k) CHECK(pi[k] <= pi[k - 1]);
    }
  }
}

TEST_CASE("sticks_to_pi gradient") {
  const Tensor nu = Tensor::vector({0.3, 0.8, 0.6, 0.9}, true);
  CHECK(gradient_check([&] { return sum(sticks_to_pi(nu) * Tensor::vector({1, -2, 3, 0.5})); }, {nu}) < 1e-4);
}

TEST_CASE("expected_active closed form") {
  CHECK(expected_active({1.0, 1.0, 1}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(std::abs(expected_active({1.0, 1.0, 1000}) - 1.0) < 1e-3);
  double direct = 0.0;
  for (int k = 1; k <= 100; ++k) direct += std::pow(5.0 / 6.0, k);
  CHECK(expected_active({5.0, 1.0, 100}) == doctest::Approx(direct).epsilon(1e-12));

  // Truncation consistency: non-decreasing in K with geometric increments.
  double prev = 0.0, prev_inc = 1e9;
  for (std::size_t K = 1; K < 60; ++K) {
    const double e = expected_active({3.0, 1.0, K});
    const double inc = e - prev;
    CHECK(inc >= 0.0);
    CHECK(inc <= prev_inc + 1e-15);
    prev = e;
    prev_inc = inc;
  }
}

TEST_CASE("sample_prior mean active count within 3 standard errors") {
  const IBPConfig cfg{5.0, 1.0, 100};
  Rng rng(31);
  const PriorDraw shape_probe = sample_prior(cfg, 3, rng);
  CHECK(shape_probe.Z.shape() == Shape{3, 100});
  // Rows of one call share a stick draw, so independent calls of one row each
  // give the unbiased standard error.
  double s = 0.0, s2 = 0.0;
  const std::size_t draws = 10000;
  for (std::size_t t = 0; t < draws; ++t) {
    const PriorDraw one = sample_prior(cfg, 1, rng);
    double row = 0.0;
    for (double v : one.Z.data()) row += v;
    s += row;
    s2 += row * row;
  }
  const double mean = s / draws;
  const double se = std::sqrt((s2 / draws - mean * mean) / draws);
  CHECK(std::abs(mean - expected_active(cfg)) < 3 * se);
}

TEST_CASE("sample_prior saturates at huge alpha and is binary") {
  Rng rng(2);
  const PriorDraw d = sample_prior({1e4, 1.0, 1}, 200, rng);
  double ones = 0.0;
  for (double v : d.Z.data()) ones += v;
  CHECK(ones >= 199.0);
  const PriorDraw e = sample_prior({2.0, 1.0, 10}, 50, rng);
  for (double v : e.Z.data()) CHECK((v == 0.0 || v == 1.0));
  for (std::size_t k = 1; k < 10; ++k) CHECK(e.sticks.pi[k] <= e.sticks.pi[k - 1]);
}

TEST_CASE("rows are exchangeable: column means agree across row blocks") {
  Rng rng(8);
  const std::size_t n = 20000, K = 8;
  const PriorDraw d = sample_prior({3.0, 1.0, K}, n, rng);
  for (std::size_t k = 0; k < K; ++k) {
    double top = 0.0, bottom = 0.0;
    for (std::size_t i = 0; i < n / 2; ++i) top += d.Z[i * K + k];
    for (std::size_t i = n / 2; i < n; ++i) bottom += d.Z[i * K + k];
    top /= n / 2;
    bottom /= n / 2;
    const double p = d.sticks.pi[k];
    const double se = std::sqrt(std::max(p * (1 - p), 1e-6) * 2.0 / (n / 2));
    CHECK(std::abs(top - bottom) < 4 * se);
  }
}

TEST_CASE("IBPConfig validation") {
  CHECK_THROWS_AS((IBPConfig{0.0, 1.0, 5}).validate(), ConfigError);
  CHECK_THROWS_AS((IBPConfig{1.0, -1.0, 5}).validate(), ConfigError);
  CHECK_THROWS_AS((IBPConfig{1.0, 1.0, 0}).validate(), ConfigError);
  CHECK_NOTHROW((IBPConfig{1.0, 1.0, 1}).validate());
}
