#pragma once

#include <cmath>

#include "ptad/diffusion.hpp"
#include "ptad/schedule.hpp"
#include "ptad/tensor.hpp"

namespace ptad {

// Closed-form noise predictors for data drawn i.i.d. per pixel from
// N(mean, variance). Lets every sampler be exercised end to end without
// training: the MMSE predictor under the single-jump marginal is available
// analytically.
struct GaussianWorld {
    double mean = 0.0;
    double variance = 1.0;
};

// E[eps | x_n] = (x_n - sqrt(ab_n) E[x0 | x_n]) / sqrt(1 - ab_n) with the
// Gaussian posterior mean E[x0 | x_n] = mu + sqrt(ab_n) s^2 / (ab_n s^2 + 1 - ab_n)
// * (x_n - sqrt(ab_n) mu).
template <typename T>
Image<T> gaussian_oracle_eps(const Image<T>& x_n, int n, const GaussianWorld& world,
                             const NoiseSchedule& s) {
    if (world.variance <= 0.0) throw std::invalid_argument("oracle: variance must be positive");
    if (n < 1 || n > s.t_max) throw std::out_of_range("oracle: step index out of range");
    const double ab = s.alpha_bar(n);
    const double sab = std::sqrt(ab);
    const double gain = sab * world.variance / (ab * world.variance + 1.0 - ab);
    const double denom = std::sqrt(1.0 - ab);
    Image<T> eps(x_n.dims);
    for (std::size_t i = 0; i < x_n.numel(); ++i) {
        const double x = static_cast<double>(x_n.v[i]);
        const double x0_hat = world.mean + gain * (x - sab * world.mean);
        eps.v[i] = static_cast<T>((x - sab * x0_hat) / denom);
    }
    return eps;
}

// Encode n_steps with eps_fn, decode back deterministically, return the
// L-infinity distance to the input.
template <typename T, typename EpsFn>
double roundtrip_error(const Image<T>& x0, int n_steps, EpsFn&& eps_fn, const NoiseSchedule& s) {
    const Image<T> x_n = ddim_encode(x0, n_steps, eps_fn, s);
    const Image<T> back = ddim_decode(x_n, n_steps, eps_fn, s);
    double err = 0.0;
    for (std::size_t i = 0; i < x0.numel(); ++i)
        err = std::max(err, std::abs(static_cast<double>(x0.v[i]) - back.v[i]));
    return err;
}

}  // namespace ptad
