#include "ptad/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ptad {

namespace {
void check_index(const NoiseSchedule& s, int n, int lo) {
    if (n < lo || n > s.t_max)
        throw std::out_of_range("schedule: step index " + std::to_string(n) + " outside [" +
                                std::to_string(lo) + ", " + std::to_string(s.t_max) + "]");
}
}  // namespace

double NoiseSchedule::beta(int n) const {
    check_index(*this, n, 1);
    return betas[static_cast<std::size_t>(n) - 1];
}

double NoiseSchedule::alpha(int n) const {
    check_index(*this, n, 1);
    return alphas[static_cast<std::size_t>(n) - 1];
}

double NoiseSchedule::alpha_bar(int n) const {
    check_index(*this, n, 0);
    if (n == 0) return 1.0;
    return alpha_bars[static_cast<std::size_t>(n) - 1];
}

double NoiseSchedule::beta_tilde(int n) const {
    check_index(*this, n, 1);
    return beta_tildes[static_cast<std::size_t>(n) - 1];
}

NoiseSchedule build_linear_schedule(int t_max, double beta_start, double beta_end) {
    if (t_max < 1) throw std::invalid_argument("schedule: t_max must be >= 1");
    if (!std::isfinite(beta_start) || !std::isfinite(beta_end))
        throw std::invalid_argument("schedule: beta endpoints must be finite");
    if (beta_start <= 0.0 || beta_end >= 1.0)
        throw std::invalid_argument("schedule: beta endpoints must satisfy 0 < beta < 1");
    if (beta_start > beta_end)
        throw std::invalid_argument("schedule: beta_start must not exceed beta_end");

    std::vector<double> betas(t_max);
    for (int i = 0; i < t_max; ++i) {
        const double frac = (t_max == 1) ? 0.0 : static_cast<double>(i) / (t_max - 1);
        betas[i] = beta_start + (beta_end - beta_start) * frac;
    }
    return build_schedule_from_betas(std::move(betas));
}

NoiseSchedule build_schedule_from_betas(std::vector<double> betas) {
    if (betas.empty()) throw std::invalid_argument("schedule: empty beta sequence");
    const int t_max = static_cast<int>(betas.size());
    NoiseSchedule s;
    s.t_max = t_max;
    s.betas = std::move(betas);
    s.alphas.resize(t_max);
    s.alpha_bars.resize(t_max);
    s.beta_tildes.resize(t_max);

    double bar = 1.0;
    for (int i = 0; i < t_max; ++i) {
        const double b = s.betas[i];
        if (!std::isfinite(b) || b <= 0.0 || b >= 1.0)
            throw std::invalid_argument("schedule: beta outside (0, 1)");
        const double bar_prev = bar;
        s.alphas[i] = 1.0 - b;
        bar *= s.alphas[i];
        s.alpha_bars[i] = bar;
        // (1 - alpha_bar_{n-1}) / (1 - alpha_bar_n) * beta_n; zero at n = 1
        // since alpha_bar_0 = 1, so the final reverse step adds no noise.
        s.beta_tildes[i] = (1.0 - bar_prev) / (1.0 - bar) * b;
    }
    return s;
}

PosteriorCoefficients posterior_coefficients(const NoiseSchedule& schedule, int n) {
    check_index(schedule, n, 1);
    const double ab_prev = schedule.alpha_bar(n - 1);
    const double ab = schedule.alpha_bar(n);
    const double b = schedule.beta(n);
    const double a = schedule.alpha(n);
    PosteriorCoefficients c;
    c.c0 = std::sqrt(ab_prev) * b / (1.0 - ab);
    c.cn = std::sqrt(a) * (1.0 - ab_prev) / (1.0 - ab);
    c.beta_tilde = schedule.beta_tilde(n);
    return c;
}

}  // namespace ptad
