#include "ptad/selftest.hpp"

#include <cmath>
#include <iomanip>

#include "ptad/diffusion.hpp"
#include "ptad/oracle.hpp"
#include "ptad/rng.hpp"
#include "ptad/schedule.hpp"

namespace ptad {

namespace {

struct Reporter {
    std::ostream& out;
    int failures = 0;

    void check(const char* name, double measured, double bound) {
        const bool ok = measured < bound;
        out << (ok ? "PASS" : "FAIL") << "  " << name << "  measured=" << std::scientific
            << std::setprecision(3) << measured << " bound=" << bound << "\n";
        failures += !ok;
    }
};

// max relative error between the two reverse-step routes at sigma = sqrt(beta_tilde)
double ddpm_ddim_identity_error(const NoiseSchedule& s, int tuples) {
    Rng rng(7);
    double worst = 0.0;
    for (int i = 0; i < tuples; ++i) {
        const int n = 1 + static_cast<int>(rng.uniform_index(s.t_max));
        const double x = rng.normal(), eh = rng.normal(), z = rng.normal();
        const double a = ddpm_reverse_scalar(x, eh, z, s.alpha(n), s.alpha_bar(n), s.beta(n),
                                             s.beta_tilde(n));
        const double b = ddim_decode_scalar(x, eh, z, s.alpha_bar(n), s.alpha_bar(n - 1),
                                            std::sqrt(s.beta_tilde(n)));
        worst = std::max(worst, std::abs(a - b) / std::max(1.0, std::abs(a)));
    }
    return worst;
}

// iterated Eq.-(1) steps vs the single jump: worst relative deviation of the
// empirical mean/variance at the probed levels
double marginal_consistency_error(const NoiseSchedule& s, int samples) {
    Rng rng(11);
    const double x0 = 0.7;
    double worst = 0.0;
    for (const int n : {10, 100, 500}) {
        double sum = 0.0, sum2 = 0.0;
        for (int i = 0; i < samples; ++i) {
            double x = x0;
            for (int k = 1; k <= n; ++k) x = forward_step_scalar(x, rng.normal(), s.beta(k));
            sum += x;
            sum2 += x * x;
        }
        const double mean = sum / samples;
        const double var = sum2 / samples - mean * mean;
        const double want_mean = std::sqrt(s.alpha_bar(n)) * x0;
        const double want_var = 1.0 - s.alpha_bar(n);
        // the sampling noise of the mean scales with the marginal std, not the
        // mean itself, which shrinks towards zero at high n
        const double mean_scale = std::max(std::abs(want_mean), std::sqrt(want_var));
        worst = std::max(worst, std::abs(mean - want_mean) / mean_scale);
        worst = std::max(worst, std::abs(var - want_var) / want_var);
    }
    return worst;
}

template <typename T>
double frozen_eps_roundtrip_error(const NoiseSchedule& s, int n_steps) {
    Image<T> x({4, 4});
    Rng rng(3);
    for (auto& v : x.v) v = static_cast<T>(rng.uniform());
    const auto eps_fn = [](const Image<T>& xi, int) {
        Image<T> e(xi.dims);
        for (auto& v : e.v) v = T(0.25);
        return e;
    };
    return roundtrip_error(x, n_steps, eps_fn, s);
}

double oracle_roundtrip(const NoiseSchedule& s, int n_steps) {
    const GaussianWorld world{0.3, 1.0};
    Rng rng(5);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        Image<double> x({4, 4});
        for (auto& v : x.v) v = world.mean + std::sqrt(world.variance) * rng.normal();
        const auto eps_fn = [&](const Image<double>& xi, int n) {
            return gaussian_oracle_eps(xi, n, world, s);
        };
        worst = std::max(worst, roundtrip_error(x, n_steps, eps_fn, s));
    }
    return worst;
}

// posterior mean in (x0, x_n) form vs the eps form after substituting Eq. (2)
double posterior_mu_identity_error(const NoiseSchedule& s) {
    Rng rng(13);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const int n = 1 + static_cast<int>(rng.uniform_index(s.t_max));
        const double x0 = rng.normal(), eps = rng.normal();
        const double xn = forward_jump_scalar(x0, eps, s.alpha_bar(n));
        const auto pc = posterior_coefficients(s, n);
        const double mu_a = pc.c0 * x0 + pc.cn * xn;
        const double mu_b = (xn - s.beta(n) / std::sqrt(1.0 - s.alpha_bar(n)) * eps) /
                            std::sqrt(s.alpha(n));
        worst = std::max(worst, std::abs(mu_a - mu_b) / std::max(1.0, std::abs(mu_b)));
    }
    return worst;
}

}  // namespace

int run_selftest(std::ostream& out) {
    const NoiseSchedule s = build_linear_schedule(kDefaultTMax, kDefaultBetaStart, kDefaultBetaEnd);
    Reporter r{out};
    r.check("ddpm_ddim_identity (1000 tuples, 64-bit)", ddpm_ddim_identity_error(s, 1000), 1e-10);
    r.check("posterior_mu_identity (1000 tuples)", posterior_mu_identity_error(s), 1e-10);
    r.check("marginal_consistency (1e5 samples, n in {10,100,500})",
            marginal_consistency_error(s, 100000), 0.01);
    r.check("frozen_eps_roundtrip (100 steps, 32-bit)", frozen_eps_roundtrip_error<float>(s, 100),
            1e-5);
    r.check("frozen_eps_roundtrip (100 steps, 64-bit)", frozen_eps_roundtrip_error<double>(s, 100),
            1e-12);
    r.check("gaussian_oracle_roundtrip (N=300, T=1000)", oracle_roundtrip(s, 300), 0.05);
    out << (r.failures == 0 ? "selftest: all properties passed\n"
                            : "selftest: FAILURES detected\n");
    return r.failures;
}

}  // namespace ptad
