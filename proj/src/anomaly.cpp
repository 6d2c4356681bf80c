#include "ptad/anomaly.hpp"

#include <cmath>
#include <stdexcept>

namespace ptad {

ImageF encode_image(const ImageF& x, int n_steps, const UNetDenoiser<float>& model,
                    const NoiseSchedule& schedule) {
    if (n_steps == 0) return x;
    return ddim_encode(
        x, n_steps, [&](const ImageF& xi, int n) { return model.forward(xi, n); }, schedule);
}

ImageF decode_guided(const ImageF& x_n, int n_steps, const UNetDenoiser<float>& denoiser,
                     const NoisyClassifier<float>& classifier, const GuidanceConfig& guidance,
                     const NoiseSchedule& schedule) {
    ImageF x = x_n;
    for (int n = n_steps; n >= 1; --n) {
        ImageF eps_hat = denoiser.forward(x, n);
        if (guidance.scale > 0.0) {
            const ImageF grad = classifier.input_log_prob_gradient(x, n, guidance.target);
            eps_hat = guided_epsilon(eps_hat, grad, guidance.scale, n, schedule);
        }
        x = ddim_decode_step<float>(x, n, eps_hat, schedule, 0.0, nullptr);
    }
    return x;
}

ImageF normalize_map(const ImageF& raw) {
    float lo = 0.0f, hi = 0.0f;
    bool first = true;
    for (const float v : raw.v) {
        if (!std::isfinite(v)) throw std::runtime_error("normalize_map: non-finite entry");
        if (v < 0.0f) throw std::invalid_argument("normalize_map: negative entry");
        if (first) {
            lo = hi = v;
            first = false;
        } else {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    ImageF out(raw.dims);
    if (hi == lo) return out;  // constant map -> all zeros
    const float span = hi - lo;
    for (std::size_t i = 0; i < raw.numel(); ++i) out.v[i] = (raw.v[i] - lo) / span;
    return out;
}

ImageF binarize_map(const ImageF& normalized, double threshold) {
    if (threshold < 0.0 || threshold > 1.0)
        throw std::invalid_argument("binarize_map: threshold outside [0,1]");
    ImageF mask(normalized.dims);
    for (std::size_t i = 0; i < normalized.numel(); ++i)
        mask.v[i] = normalized.v[i] >= static_cast<float>(threshold) ? 1.0f : 0.0f;
    return mask;
}

AnomalyResult detect(const ImageF& x, const DetectConfig& config,
                     const UNetDenoiser<float>& denoiser, const NoisyClassifier<float>& classifier,
                     const NoiseSchedule& schedule) {
    config.validate(schedule.t_max);
    AnomalyResult r;
    r.config = config;
    const ImageF x_n = encode_image(x, config.noise_level, denoiser, schedule);
    r.reconstruction =
        decode_guided(x_n, config.noise_level, denoiser, classifier, config.guidance, schedule);
    r.raw_map = ImageF(x.dims);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const float d = std::abs(x.v[i] - r.reconstruction.v[i]);
        if (!std::isfinite(d)) throw std::runtime_error("detect: non-finite anomaly map");
        r.raw_map.v[i] = d;
    }
    r.normalized_map = normalize_map(r.raw_map);
    r.mask = binarize_map(r.normalized_map, config.threshold);
    const auto lp = classifier.log_probs(x, 1);
    r.healthy_confidence = std::exp(static_cast<double>(lp[0]));
    return r;
}

}  // namespace ptad
