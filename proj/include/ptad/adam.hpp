#pragma once

#include <cmath>
#include <stdexcept>

#include "ptad/tensor.hpp"

namespace ptad {

// Bias-corrected adaptive-moment optimizer over named parameter blocks.
template <typename T>
struct AdamState {
    ParamMap<T> m;
    ParamMap<T> v;
    long step = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit AdamState(const ParamMap<T>& params, double learning_rate = 1e-4)
        : m(zeros_like(params)), v(zeros_like(params)), lr(learning_rate) {}

    // One update; a non-finite gradient entry aborts the step untouched.
    void update(ParamMap<T>& params, const ParamMap<T>& grads) {
        for (const auto& [name, g] : grads) {
            if (!params.count(name) || params.at(name).dims != g.dims)
                throw std::invalid_argument("adam: gradient/parameter shape mismatch at " + name);
            for (const T x : g.v)
                if (!std::isfinite(static_cast<double>(x)))
                    throw std::runtime_error("adam: non-finite gradient in block " + name);
        }
        ++step;
        const double bc1 = 1.0 - std::pow(beta1, step);
        const double bc2 = 1.0 - std::pow(beta2, step);
        for (auto& [name, p] : params) {
            const auto& g = grads.at(name);
            auto& mm = m.at(name);
            auto& vv = v.at(name);
            for (std::size_t i = 0; i < p.numel(); ++i) {
                const double gi = static_cast<double>(g.v[i]);
                const double mi = beta1 * static_cast<double>(mm.v[i]) + (1.0 - beta1) * gi;
                const double vi = beta2 * static_cast<double>(vv.v[i]) + (1.0 - beta2) * gi * gi;
                mm.v[i] = static_cast<T>(mi);
                vv.v[i] = static_cast<T>(vi);
                p.v[i] = static_cast<T>(static_cast<double>(p.v[i]) -
                                        lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
            }
        }
    }
};

}  // namespace ptad
