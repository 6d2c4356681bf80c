#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ptad/net.hpp"
#include "ptad/schedule.hpp"
#include "ptad/tensor.hpp"

namespace ptad {

// ---------------------------------------------------------------------------
// Scalar step formulas. The image-level operations below apply these
// per pixel; tests exercise them directly in double.
// ---------------------------------------------------------------------------

// Single-jump noising: x_n = sqrt(ab_n) x0 + sqrt(1 - ab_n) eps.
template <typename T>
T forward_jump_scalar(T x0, T eps, double ab_n) {
    return static_cast<T>(std::sqrt(ab_n)) * x0 + static_cast<T>(std::sqrt(1.0 - ab_n)) * eps;
}

// One Markov step: x_n = sqrt(1 - beta_n) x_{n-1} + sqrt(beta_n) eps.
template <typename T>
T forward_step_scalar(T x_prev, T eps, double beta_n) {
    return static_cast<T>(std::sqrt(1.0 - beta_n)) * x_prev +
           static_cast<T>(std::sqrt(beta_n)) * eps;
}

// Stochastic reverse step with the fixed posterior variance.
template <typename T>
T ddpm_reverse_scalar(T x_n, T eps_hat, T noise, double alpha_n, double ab_n, double beta_n,
                      double beta_tilde_n) {
    return static_cast<T>(1.0 / std::sqrt(alpha_n)) *
               (x_n - static_cast<T>(beta_n / std::sqrt(1.0 - ab_n)) * eps_hat) +
           static_cast<T>(std::sqrt(beta_tilde_n)) * noise;
}

// Generalized reverse step; sigma = 0 gives the deterministic sampler,
// sigma = sqrt(beta_tilde) recovers the stochastic one.
template <typename T>
T ddim_decode_scalar(T x_n, T eps_hat, T noise, double ab_n, double ab_prev, double sigma) {
    const T x0_hat =
        (x_n - static_cast<T>(std::sqrt(1.0 - ab_n)) * eps_hat) / static_cast<T>(std::sqrt(ab_n));
    return static_cast<T>(std::sqrt(ab_prev)) * x0_hat +
           static_cast<T>(std::sqrt(1.0 - ab_prev - sigma * sigma)) * eps_hat +
           static_cast<T>(sigma) * noise;
}

// Euler step of the reversed probability-flow ODE: x_n -> x_{n+1}.
template <typename T>
T ddim_encode_scalar(T x_n, T eps_hat, double ab_n, double ab_next) {
    const double c_x = std::sqrt(ab_next / ab_n);
    const double c_e = std::sqrt(1.0 - ab_next) - c_x * std::sqrt(1.0 - ab_n);
    return static_cast<T>(c_x) * x_n + static_cast<T>(c_e) * eps_hat;
}

// ---------------------------------------------------------------------------
// Image-level operations
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
void check_same_shape(const Image<T>& a, const Image<T>& b, const char* what) {
    if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}
}  // namespace detail

template <typename T>
Image<T> forward_jump(const Image<T>& x0, int n, const Image<T>& eps, const NoiseSchedule& s) {
    detail::check_same_shape(x0, eps, "forward_jump");
    const double ab = s.alpha_bar(n);
    if (n < 1) throw std::out_of_range("forward_jump: n must be >= 1");
    Image<T> y(x0.dims);
    for (std::size_t i = 0; i < y.numel(); ++i) y.v[i] = forward_jump_scalar(x0.v[i], eps.v[i], ab);
    return y;
}

template <typename T>
Image<T> forward_step(const Image<T>& x_prev, int n, const Image<T>& eps, const NoiseSchedule& s) {
    detail::check_same_shape(x_prev, eps, "forward_step");
    const double b = s.beta(n);
    Image<T> y(x_prev.dims);
    for (std::size_t i = 0; i < y.numel(); ++i)
        y.v[i] = forward_step_scalar(x_prev.v[i], eps.v[i], b);
    return y;
}

template <typename T>
Image<T> ddpm_reverse_step(const Image<T>& x_n, int n, const Image<T>& eps_hat,
                           const Image<T>& noise, const NoiseSchedule& s) {
    detail::check_same_shape(x_n, eps_hat, "ddpm_reverse_step");
    detail::check_same_shape(x_n, noise, "ddpm_reverse_step");
    const double a = s.alpha(n), ab = s.alpha_bar(n), b = s.beta(n), bt = s.beta_tilde(n);
    Image<T> y(x_n.dims);
    for (std::size_t i = 0; i < y.numel(); ++i)
        y.v[i] = ddpm_reverse_scalar(x_n.v[i], eps_hat.v[i], noise.v[i], a, ab, b, bt);
    return y;
}

template <typename T>
Image<T> ddim_decode_step(const Image<T>& x_n, int n, const Image<T>& eps_hat,
                          const NoiseSchedule& s, double sigma_n = 0.0,
                          const Image<T>* noise = nullptr) {
    detail::check_same_shape(x_n, eps_hat, "ddim_decode_step");
    const double ab = s.alpha_bar(n), ab_prev = s.alpha_bar(n - 1);
    if (sigma_n < 0.0 || sigma_n * sigma_n > 1.0 - ab_prev + 1e-15)
        throw std::invalid_argument("ddim_decode_step: sigma_n out of range");
    if (sigma_n > 0.0 && noise == nullptr)
        throw std::invalid_argument("ddim_decode_step: sigma_n > 0 requires a noise image");
    if (noise) detail::check_same_shape(x_n, *noise, "ddim_decode_step");
    Image<T> y(x_n.dims);
    for (std::size_t i = 0; i < y.numel(); ++i)
        y.v[i] = ddim_decode_scalar(x_n.v[i], eps_hat.v[i], noise ? noise->v[i] : T(0), ab, ab_prev,
                                    sigma_n);
    return y;
}

template <typename T>
Image<T> ddim_encode_step(const Image<T>& x_n, int n, const Image<T>& eps_hat,
                          const NoiseSchedule& s) {
    detail::check_same_shape(x_n, eps_hat, "ddim_encode_step");
    if (n < 0 || n >= s.t_max) throw std::out_of_range("ddim_encode_step: need 0 <= n < t_max");
    const double ab = s.alpha_bar(n), ab_next = s.alpha_bar(n + 1);
    Image<T> y(x_n.dims);
    for (std::size_t i = 0; i < y.numel(); ++i)
        y.v[i] = ddim_encode_scalar(x_n.v[i], eps_hat.v[i], ab, ab_next);
    return y;
}

// Classifier-biased noise estimate: eps_hat - S * sqrt(1 - ab_n) * grad.
template <typename T>
Image<T> guided_epsilon(const Image<T>& eps_hat, const Image<T>& grad, double scale, int n,
                        const NoiseSchedule& s) {
    detail::check_same_shape(eps_hat, grad, "guided_epsilon");
    if (scale < 0.0) throw std::invalid_argument("guided_epsilon: scale must be >= 0");
    if (scale == 0.0) return eps_hat;
    const T c = static_cast<T>(scale * std::sqrt(1.0 - s.alpha_bar(n)));
    Image<T> y(eps_hat.dims);
    for (std::size_t i = 0; i < y.numel(); ++i) y.v[i] = eps_hat.v[i] - c * grad.v[i];
    return y;
}

// ---------------------------------------------------------------------------
// Deterministic encode/decode loops over a generic noise predictor.
// eps_fn(x, n) is queried at index max(n, 1) during encoding since the
// predictor is only defined for n in {1..T}.
// ---------------------------------------------------------------------------

template <typename T, typename EpsFn>
Image<T> ddim_encode(const Image<T>& x0, int n_steps, EpsFn&& eps_fn, const NoiseSchedule& s) {
    if (n_steps < 0 || n_steps > s.t_max) throw std::out_of_range("ddim_encode: bad step count");
    Image<T> x = x0;
    for (int n = 0; n < n_steps; ++n) {
        Image<T> eps_hat = eps_fn(x, std::max(n, 1));
        x = ddim_encode_step(x, n, eps_hat, s);
    }
    return x;
}

template <typename T, typename EpsFn>
Image<T> ddim_decode(const Image<T>& x_n, int n_steps, EpsFn&& eps_fn, const NoiseSchedule& s) {
    if (n_steps < 0 || n_steps > s.t_max) throw std::out_of_range("ddim_decode: bad step count");
    Image<T> x = x_n;
    for (int n = n_steps; n >= 1; --n) {
        Image<T> eps_hat = eps_fn(x, n);
        x = ddim_decode_step<T>(x, n, eps_hat, s, 0.0, nullptr);
    }
    return x;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    long iterations = 20000;
    int batch_size = 32;
    double learning_rate = 1e-4;
    std::uint64_t seed = 0;
    int log_every = 100;  // trace granularity

    void validate() const {
        if (iterations < 1 || batch_size < 1 || learning_rate <= 0.0)
            throw std::invalid_argument("train: config fields must be positive");
    }
};

struct TracePoint {
    long iteration;
    double value;
};

// Simplified eps-prediction loss: || eps - model(forward_jump(x0, n, eps), n) ||^2.
float denoiser_loss(const UNetDenoiser<float>& model, const ImageF& x0, int n, const ImageF& eps,
                    const NoiseSchedule& schedule);

UNetDenoiser<float> train_denoiser(const std::vector<ImageF>& dataset,
                                   const NoiseSchedule& schedule, const NetConfig& arch,
                                   const TrainConfig& cfg, std::vector<TracePoint>* loss_trace);

struct LabeledImage {
    ImageF image;
    ClassLabel label;
};

NoisyClassifier<float> train_classifier(const std::vector<LabeledImage>& dataset,
                                        const NoiseSchedule& schedule, const NetConfig& arch,
                                        const TrainConfig& cfg,
                                        std::vector<TracePoint>* accuracy_trace);

void write_trace_csv(const std::string& path, const std::vector<TracePoint>& trace,
                     const std::string& value_name);

}  // namespace ptad
