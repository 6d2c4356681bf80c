#pragma once

#include "ptad/diffusion.hpp"
#include "ptad/net.hpp"
#include "ptad/schedule.hpp"
#include "ptad/tensor.hpp"

namespace ptad {

struct GuidanceConfig {
    double scale = 7.0;  // S = 0 reduces guided decoding to the unguided sampler
    ClassLabel target = ClassLabel::healthy;
};

struct DetectConfig {
    int noise_level = 300;  // encoding steps N <= T
    GuidanceConfig guidance;
    double threshold = 0.35;

    void validate(int t_max) const {
        if (noise_level < 1 || noise_level > t_max)
            throw std::invalid_argument("detect: noise level outside {1..T}");
        if (threshold < 0.0 || threshold > 1.0)
            throw std::invalid_argument("detect: threshold outside [0,1]");
        if (guidance.scale < 0.0) throw std::invalid_argument("detect: guidance scale < 0");
    }
};

struct AnomalyResult {
    ImageF reconstruction;   // synthetic healthy x0
    ImageF raw_map;          // |x - x0| per pixel
    ImageF normalized_map;   // min-max rescaled to [0,1]
    ImageF mask;             // normalized >= threshold, values in {0,1}
    double healthy_confidence = 0.0;  // p(h | x, n=1) on the input
    DetectConfig config;
};

// Deterministic noise encoding of x to level N with the trained predictor.
ImageF encode_image(const ImageF& x, int n_steps, const UNetDenoiser<float>& model,
                    const NoiseSchedule& schedule);

// Classifier-guided deterministic decoding from level N back to a synthetic
// healthy image.
ImageF decode_guided(const ImageF& x_n, int n_steps, const UNetDenoiser<float>& denoiser,
                     const NoisyClassifier<float>& classifier, const GuidanceConfig& guidance,
                     const NoiseSchedule& schedule);

ImageF normalize_map(const ImageF& raw);

ImageF binarize_map(const ImageF& normalized, double threshold);

AnomalyResult detect(const ImageF& x, const DetectConfig& config,
                     const UNetDenoiser<float>& denoiser, const NoisyClassifier<float>& classifier,
                     const NoiseSchedule& schedule);

}  // namespace ptad
