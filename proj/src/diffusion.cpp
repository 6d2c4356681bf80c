#include "ptad/diffusion.hpp"

#include <cmath>
#include <fstream>

#include "ptad/adam.hpp"
#include "ptad/rng.hpp"

namespace ptad {

namespace {

ImageF sample_noise(int h, int w, Rng& rng) {
    ImageF e({h, w});
    for (auto& v : e.v) v = static_cast<float>(rng.normal());
    return e;
}

}  // namespace

float denoiser_loss(const UNetDenoiser<float>& model, const ImageF& x0, int n, const ImageF& eps,
                    const NoiseSchedule& schedule) {
    const ImageF x_n = forward_jump(x0, n, eps, schedule);
    const ImageF eps_hat = model.forward(x_n, n);
    double acc = 0.0;
    for (std::size_t i = 0; i < eps.numel(); ++i) {
        const double d = static_cast<double>(eps.v[i]) - eps_hat.v[i];
        acc += d * d;
    }
    return static_cast<float>(acc);
}

UNetDenoiser<float> train_denoiser(const std::vector<ImageF>& dataset,
                                   const NoiseSchedule& schedule, const NetConfig& arch,
                                   const TrainConfig& cfg, std::vector<TracePoint>* loss_trace) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("train_denoiser: empty dataset");
    for (const auto& im : dataset)
        if (im.dims[0] != arch.height || im.dims[1] != arch.width)
            throw std::invalid_argument("train_denoiser: image shape differs from architecture");

    UNetDenoiser<float> model(arch, cfg.seed);
    AdamState<float> opt(model.params, cfg.learning_rate);
    Rng rng(cfg.seed + 0x9e3779b97f4a7c15ull);

    ParamMap<float> grads = zeros_like(model.params);
    NetCache<float> cache;
    for (long it = 1; it <= cfg.iterations; ++it) {
        for (auto& [name, g] : grads) std::fill(g.v.begin(), g.v.end(), 0.0f);
        double loss = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const ImageF& x0 = dataset[rng.uniform_index(dataset.size())];
            const int n = 1 + static_cast<int>(rng.uniform_index(schedule.t_max));
            const ImageF eps = sample_noise(arch.height, arch.width, rng);
            const ImageF x_n = forward_jump(x0, n, eps, schedule);
            const ImageF eps_hat = model.forward_cached(x_n, n, cache);
            ImageF gout(eps_hat.dims);
            for (std::size_t i = 0; i < gout.numel(); ++i) {
                const float d = eps_hat.v[i] - eps.v[i];
                loss += static_cast<double>(d) * d;
                gout.v[i] = 2.0f * d / cfg.batch_size;
            }
            model.backward(cache, gout, grads);
        }
        loss /= cfg.batch_size;
        if (!std::isfinite(loss))
            throw std::runtime_error("train_denoiser: non-finite loss at iteration " +
                                     std::to_string(it));
        opt.update(model.params, grads);
        if (loss_trace && (it % cfg.log_every == 0 || it == 1))
            loss_trace->push_back({it, loss});
    }
    return model;
}

NoisyClassifier<float> train_classifier(const std::vector<LabeledImage>& dataset,
                                        const NoiseSchedule& schedule, const NetConfig& arch,
                                        const TrainConfig& cfg,
                                        std::vector<TracePoint>* accuracy_trace) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("train_classifier: empty dataset");
    bool has_h = false, has_d = false;
    for (const auto& s : dataset) {
        (s.label == ClassLabel::healthy ? has_h : has_d) = true;
        if (s.image.dims[0] != arch.height || s.image.dims[1] != arch.width)
            throw std::invalid_argument("train_classifier: image shape differs from architecture");
    }
    if (!has_h || !has_d)
        throw std::invalid_argument("train_classifier: dataset must contain both classes");

    NoisyClassifier<float> model(arch, cfg.seed);
    AdamState<float> opt(model.params, cfg.learning_rate);
    Rng rng(cfg.seed + 0x9e3779b97f4a7c15ull);

    ParamMap<float> grads = zeros_like(model.params);
    NetCache<float> cache;
    long correct_window = 0, seen_window = 0;
    for (long it = 1; it <= cfg.iterations; ++it) {
        for (auto& [name, g] : grads) std::fill(g.v.begin(), g.v.end(), 0.0f);
        double loss = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const LabeledImage& s = dataset[rng.uniform_index(dataset.size())];
            const int n = 1 + static_cast<int>(rng.uniform_index(schedule.t_max));
            const ImageF eps = sample_noise(arch.height, arch.width, rng);
            const ImageF x_n = forward_jump(s.image, n, eps, schedule);
            const auto lg = model.forward_cached(x_n, n, cache);
            const auto lp = NoisyClassifier<float>::log_softmax(lg);
            const int t = static_cast<int>(s.label);
            loss -= lp[t];
            // d NLL / d logits = softmax - onehot
            std::array<float, 2> gl{std::exp(lp[0]), std::exp(lp[1])};
            gl[t] -= 1.0f;
            gl[0] /= cfg.batch_size;
            gl[1] /= cfg.batch_size;
            model.backward(cache, gl, grads);
            const int pred = lg[0] >= lg[1] ? 0 : 1;
            correct_window += (pred == t);
            ++seen_window;
        }
        loss /= cfg.batch_size;
        if (!std::isfinite(loss))
            throw std::runtime_error("train_classifier: non-finite loss at iteration " +
                                     std::to_string(it));
        opt.update(model.params, grads);
        if (accuracy_trace && (it % cfg.log_every == 0 || it == 1)) {
            accuracy_trace->push_back({it, static_cast<double>(correct_window) / seen_window});
            correct_window = seen_window = 0;
        }
    }
    return model;
}

void write_trace_csv(const std::string& path, const std::vector<TracePoint>& trace,
                     const std::string& value_name) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("trace: cannot open " + path);
    f << "iteration," << value_name << "\n";
    for (const auto& p : trace) f << p.iteration << "," << p.value << "\n";
}

}  // namespace ptad
