#pragma once

#include <cstdint>
#include <vector>

namespace ptad {

// Variance schedule of a T-step forward noising process together with every
// derived coefficient table the samplers need.
//
// Indexing convention: externally noise levels are n in {1..T} and n = 0 is
// the clean image. Arrays are stored 0-based, so beta(n) reads betas[n-1];
// alpha_bar(n) handles n = 0 via the fixed convention alpha_bar(0) = 1.
struct NoiseSchedule {
    int t_max = 0;
    std::vector<double> betas;        // beta_n,       n = 1..T
    std::vector<double> alphas;       // 1 - beta_n
    std::vector<double> alpha_bars;   // prod_{s<=n} alpha_s
    std::vector<double> beta_tildes;  // posterior variance; beta_tilde(1) = 0

    double beta(int n) const;
    double alpha(int n) const;
    double alpha_bar(int n) const;  // accepts n = 0
    double beta_tilde(int n) const;
};

// Coefficients of the forward-process posterior q(x_{n-1} | x_n, x0):
// mean = c0 * x0 + cn * x_n, variance = beta_tilde.
struct PosteriorCoefficients {
    double c0 = 0.0;
    double cn = 0.0;
    double beta_tilde = 0.0;
};

NoiseSchedule build_linear_schedule(int t_max, double beta_start, double beta_end);

// Rebuild every derived table from an explicit beta sequence (model-file
// round trips go through here so detect-time tables match train-time ones).
NoiseSchedule build_schedule_from_betas(std::vector<double> betas);

PosteriorCoefficients posterior_coefficients(const NoiseSchedule& schedule, int n);

inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.02;
inline constexpr int kDefaultTMax = 1000;

}  // namespace ptad
