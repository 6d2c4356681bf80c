#include <doctest.h>

#include <cmath>
#include <cstring>

#include "ptad/diffusion.hpp"
#include "ptad/rng.hpp"
#include "ptad/schedule.hpp"

using namespace ptad;

TEST_CASE("single-step degenerate schedule") {
    const auto s = build_linear_schedule(1, 0.1, 0.1);
    CHECK(s.t_max == 1);
    CHECK(s.beta(1) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(s.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(s.alpha_bar(0) == 1.0);
    // beta_tilde(1) = ((1 - abar_0)/(1 - abar_1)) * beta_1 = 0
    CHECK(s.beta_tilde(1) == 0.0);
}

TEST_CASE("two-step schedule by hand") {
    const auto s = build_linear_schedule(2, 0.1, 0.3);
    CHECK(s.beta(1) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(s.beta(2) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(s.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-14));
    CHECK(s.alpha_bar(2) == doctest::Approx(0.63).epsilon(1e-14));
    // beta_tilde_2 = ((1-0.9)/(1-0.63)) * 0.3
    CHECK(s.beta_tilde(2) == doctest::Approx(0.1 / 0.37 * 0.3).epsilon(1e-12));
}

TEST_CASE("default schedule shape") {
    const auto s = build_linear_schedule(1000, 1e-4, 0.02);
    CHECK(s.alpha_bar(1000) > 0.0);
    CHECK(s.alpha_bar(1000) < 0.001);
    for (int n = 1; n <= 1000; ++n) {
        CHECK(s.alpha_bar(n) < s.alpha_bar(n - 1));
        CHECK(s.beta(n) > 0.0);
        CHECK(s.beta(n) < 1.0);
        CHECK(s.alpha(n) == 1.0 - s.beta(n));
        if (n >= 2) {
            CHECK(s.beta_tilde(n) > 0.0);
            CHECK(s.beta_tilde(n) <= s.beta(n));
        }
        // recurrence abar_n = abar_{n-1} * alpha_n
        CHECK(std::abs(s.alpha_bar(n) - s.alpha_bar(n - 1) * s.alpha(n)) <=
              1e-12 * s.alpha_bar(n));
    }
}

TEST_CASE("alpha_bar equals cumulative product bitwise") {
    const auto s = build_linear_schedule(500, 1e-4, 0.02);
    double bar = 1.0;
    for (int n = 1; n <= 500; ++n) {
        bar *= s.alpha(n);
        CHECK(s.alpha_bar(n) == bar);
    }
}

TEST_CASE("schedules are pure values") {
    const auto a = build_linear_schedule(100, 1e-3, 0.05);
    const auto b = build_linear_schedule(100, 1e-3, 0.05);
    CHECK(std::memcmp(a.betas.data(), b.betas.data(), a.betas.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(a.alpha_bars.data(), b.alpha_bars.data(),
                      a.alpha_bars.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(a.beta_tildes.data(), b.beta_tildes.data(),
                      a.beta_tildes.size() * sizeof(double)) == 0);
}

TEST_CASE("invalid construction is rejected") {
    CHECK_THROWS(build_linear_schedule(0, 0.1, 0.2));
    CHECK_THROWS(build_linear_schedule(10, 0.0, 0.2));
    CHECK_THROWS(build_linear_schedule(10, 0.1, 1.0));
    CHECK_THROWS(build_linear_schedule(10, 0.3, 0.2));
    CHECK_THROWS(build_linear_schedule(10, std::nan(""), 0.2));
}

TEST_CASE("posterior coefficients by hand") {
    // abar_{n-1} = 0.9, alpha_n = 0.9 -> abar_n = 0.81, beta_n = 0.1
    std::vector<double> betas = {0.1, 0.1};
    auto s = build_schedule_from_betas(betas);
    // need abar_1 = 0.9: use beta_1 = 0.1 -> abar_1 = 0.9, beta_2 = 0.1 -> abar_2 = 0.81
    const auto pc = posterior_coefficients(s, 2);
    const double expect = std::sqrt(0.9) * 0.1 / 0.19;
    CHECK(pc.c0 == doctest::Approx(expect).epsilon(1e-12));
    CHECK(pc.cn == doctest::Approx(expect).epsilon(1e-12));
    CHECK(pc.beta_tilde == doctest::Approx(0.1 / 0.19 * 0.1).epsilon(1e-12));
    // x0 = x_n = 1 -> posterior mean c0 + cn
    CHECK(pc.c0 + pc.cn == doctest::Approx(0.9986139979479093).epsilon(1e-9));

    // n = 1: abar_0 = 1 makes the x_n coefficient vanish
    const auto pc1 = posterior_coefficients(s, 1);
    CHECK(pc1.cn == 0.0);
    CHECK_THROWS(posterior_coefficients(s, 0));
    CHECK_THROWS(posterior_coefficients(s, 3));
}

TEST_CASE("posterior mean matches the eps form") {
    const auto s = build_linear_schedule(200, 1e-4, 0.02);
    Rng rng(42);
    for (int trial = 0; trial < 500; ++trial) {
        const int n = 1 + static_cast<int>(rng.uniform_index(200));
        const double x0 = rng.normal(), eps = rng.normal();
        const double xn = forward_jump_scalar(x0, eps, s.alpha_bar(n));
        const auto pc = posterior_coefficients(s, n);
        const double mu_posterior = pc.c0 * x0 + pc.cn * xn;
        const double mu_eps =
            (xn - s.beta(n) / std::sqrt(1.0 - s.alpha_bar(n)) * eps) / std::sqrt(s.alpha(n));
        CHECK(std::abs(mu_posterior - mu_eps) <= 1e-10 * std::max(1.0, std::abs(mu_eps)));
    }
}
