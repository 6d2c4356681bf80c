#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ptad/rng.hpp"
#include "ptad/tensor.hpp"

#include <cblas.h>
#ifdef __GLIBC__
#include <malloc.h>
#endif

extern "C" void openblas_set_num_threads(int);

namespace ptad {

// Encoder-decoder noise predictor and the matching noisy-image classifier
// (the encoder path plus a pooled linear head). Templated on the scalar so
// gradient checks can run the whole thing in double; production code uses
// float.
//
// Stage layout for stages = 2, base_channels = 16 on 32x32 inputs:
//   enc0: 1 -> 16 @32x32, pool
//   enc1: 16 -> 32 @16x16, pool
//   bott: 32 -> 32 @8x8
//   dec1: cat(up(bott), enc1) 64 -> 32 @16x16
//   dec0: cat(up(dec1), enc0) 48 -> 16 @32x32
//   out : 16 -> 1 @32x32 (zero-initialized, no activation)
// Every stage is conv3x3 + per-channel time-embedding injection + SiLU.
struct NetConfig {
    int height = 32;
    int width = 32;
    int stages = 2;
    int base_channels = 16;
    int time_embed_dim = 32;
    int t_max = 1000;

    int channels_at(int i) const { return base_channels << i; }
    int bottleneck_channels() const {
        return stages == 0 ? base_channels : channels_at(stages - 1);
    }
    void validate() const {
        if (height < 1 || width < 1 || base_channels < 1 || t_max < 1)
            throw std::invalid_argument("net: nonpositive config field");
        if (stages < 0 || stages > 6) throw std::invalid_argument("net: bad stage count");
        if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
            throw std::invalid_argument("net: time_embed_dim must be even and >= 2");
        const int div = 1 << stages;
        if (height % div != 0 || width % div != 0)
            throw std::invalid_argument("net: image size not divisible by 2^stages");
    }
};

enum class ClassLabel { healthy = 0, diseased = 1 };

namespace detail {

inline void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
                 const float* b, int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m,
                n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
inline void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
                 const double* b, int ldb, double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m,
                n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

inline struct BlasSingleThread {
    BlasSingleThread() {
        openblas_set_num_threads(1);
#ifdef __GLIBC__
        // keep scratch buffers on the heap instead of mmap'ing them per call;
        // conv workspaces are large enough to cross the default threshold
        mallopt(M_MMAP_THRESHOLD, 128 << 20);
        mallopt(M_TRIM_THRESHOLD, 128 << 20);
#endif
    }
} blas_single_thread_init;

// 3x3 same-padding im2col: col is (cin*9) x (h*w).
template <typename T>
void im2col3(const T* x, int cin, int h, int w, T* col) {
    const int hw = h * w;
    for (int c = 0; c < cin; ++c) {
        const T* xc = x + static_cast<std::size_t>(c) * hw;
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                T* row = col + (static_cast<std::size_t>(c) * 9 + (dy + 1) * 3 + (dx + 1)) * hw;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy;
                    T* out = row + static_cast<std::size_t>(y) * w;
                    if (sy < 0 || sy >= h) {
                        for (int xx = 0; xx < w; ++xx) out[xx] = T(0);
                        continue;
                    }
                    const T* src = xc + static_cast<std::size_t>(sy) * w;
                    for (int xx = 0; xx < w; ++xx) {
                        const int sx = xx + dx;
                        out[xx] = (sx < 0 || sx >= w) ? T(0) : src[sx];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im3(const T* col, int cin, int h, int w, T* x) {
    const int hw = h * w;
    for (int i = 0; i < cin * hw; ++i) x[i] = T(0);
    for (int c = 0; c < cin; ++c) {
        T* xc = x + static_cast<std::size_t>(c) * hw;
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                const T* row = col + (static_cast<std::size_t>(c) * 9 + (dy + 1) * 3 + (dx + 1)) * hw;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h) continue;
                    const T* src = row + static_cast<std::size_t>(y) * w;
                    T* dst = xc + static_cast<std::size_t>(sy) * w;
                    for (int xx = 0; xx < w; ++xx) {
                        const int sx = xx + dx;
                        if (sx >= 0 && sx < w) dst[sx] += src[xx];
                    }
                }
            }
        }
    }
}

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

}  // namespace detail

// Sinusoidal features of the step index n; frequencies span 1 .. 1/t_max.
template <typename T>
std::vector<T> sinusoidal_time_embedding(int n, int dim, int t_max) {
    const int half = dim / 2;
    std::vector<T> e(dim);
    for (int j = 0; j < half; ++j) {
        const double freq =
            std::exp(-std::log(static_cast<double>(t_max)) * j / std::max(1, half - 1));
        e[j] = static_cast<T>(std::sin(n * freq));
        e[half + j] = static_cast<T>(std::cos(n * freq));
    }
    return e;
}

template <typename T>
struct StageCache {
    Tensor<T> in;  // conv input (post-concat for decoder stages)
    Tensor<T> z;   // pre-activation
};

template <typename T>
struct NetCache {
    int n = 0;
    std::vector<T> temb;
    std::vector<StageCache<T>> enc;
    StageCache<T> bott;
    std::vector<StageCache<T>> dec;  // dec[i] operates at encoder stage i's resolution
    Tensor<T> out_in;                // denoiser: input of the output conv
    std::array<T, 2> logits{};       // classifier
    bool valid = false;
};

namespace detail {

// y = silu(conv3x3(x; w, b) + TW*temb + tb), caching x and the pre-activation.
template <typename T>
Tensor<T> stage_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                        const Tensor<T>& tw, const Tensor<T>& tb, const std::vector<T>& temb,
                        StageCache<T>* cache) {
    const int cin = x.dims[0], h = x.dims[1], wd = x.dims[2];
    const int cout = w.dims[0];
    const int hw = h * wd;
    std::vector<T> col(static_cast<std::size_t>(cin) * 9 * hw);
    im2col3(x.data(), cin, h, wd, col.data());
    Tensor<T> z({cout, h, wd});
    gemm(false, false, cout, hw, cin * 9, T(1), w.data(), cin * 9, col.data(), hw, T(0), z.data(),
         hw);
    const int e = static_cast<int>(temb.size());
    for (int c = 0; c < cout; ++c) {
        T proj = b.v[c] + tb.v[c];
        for (int j = 0; j < e; ++j) proj += tw.v[static_cast<std::size_t>(c) * e + j] * temb[j];
        T* zc = z.data() + static_cast<std::size_t>(c) * hw;
        for (int i = 0; i < hw; ++i) zc[i] += proj;
    }
    Tensor<T> y({cout, h, wd});
    for (std::size_t i = 0; i < z.numel(); ++i) y.v[i] = z.v[i] * sigmoid(z.v[i]);
    if (cache) {
        cache->in = x;
        cache->z = std::move(z);
    }
    return y;
}

// Backward through one stage. gy is the gradient at the stage output;
// accumulates parameter gradients and returns the gradient at the input.
template <typename T>
Tensor<T> stage_backward(const StageCache<T>& cache, const Tensor<T>& gy, const Tensor<T>& w,
                         const std::vector<T>& temb, Tensor<T>& gw, Tensor<T>& gb, Tensor<T>& gtw,
                         Tensor<T>& gtb) {
    const int cin = cache.in.dims[0], h = cache.in.dims[1], wd = cache.in.dims[2];
    const int cout = cache.z.dims[0];
    const int hw = h * wd;
    // silu'(z) = s(z) * (1 + z * (1 - s(z)))
    Tensor<T> gz({cout, h, wd});
    for (std::size_t i = 0; i < gz.numel(); ++i) {
        const T s = sigmoid(cache.z.v[i]);
        gz.v[i] = gy.v[i] * s * (T(1) + cache.z.v[i] * (T(1) - s));
    }
    const int e = static_cast<int>(temb.size());
    for (int c = 0; c < cout; ++c) {
        T sum = T(0);
        const T* gzc = gz.data() + static_cast<std::size_t>(c) * hw;
        for (int i = 0; i < hw; ++i) sum += gzc[i];
        gb.v[c] += sum;
        gtb.v[c] += sum;
        for (int j = 0; j < e; ++j) gtw.v[static_cast<std::size_t>(c) * e + j] += sum * temb[j];
    }
    std::vector<T> col(static_cast<std::size_t>(cin) * 9 * hw);
    im2col3(cache.in.data(), cin, h, wd, col.data());
    gemm(false, true, cout, cin * 9, hw, T(1), gz.data(), hw, col.data(), hw, T(1), gw.data(),
         cin * 9);
    std::vector<T> gcol(col.size());
    gemm(true, false, cin * 9, hw, cout, T(1), w.data(), cin * 9, gz.data(), hw, T(0), gcol.data(),
         hw);
    Tensor<T> gx({cin, h, wd});
    col2im3(gcol.data(), cin, h, wd, gx.data());
    return gx;
}

template <typename T>
Tensor<T> avgpool2(const Tensor<T>& x) {
    const int c = x.dims[0], h = x.dims[1], w = x.dims[2];
    Tensor<T> y({c, h / 2, w / 2});
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h / 2; ++i)
            for (int j = 0; j < w / 2; ++j) {
                const T* p = x.data() + (static_cast<std::size_t>(ch) * h + 2 * i) * w + 2 * j;
                y.v[(static_cast<std::size_t>(ch) * (h / 2) + i) * (w / 2) + j] =
                    (p[0] + p[1] + p[w] + p[w + 1]) * T(0.25);
            }
    return y;
}

template <typename T>
Tensor<T> avgpool2_backward(const Tensor<T>& gy, int h, int w) {
    const int c = gy.dims[0];
    Tensor<T> gx({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h / 2; ++i)
            for (int j = 0; j < w / 2; ++j) {
                const T g = gy.v[(static_cast<std::size_t>(ch) * (h / 2) + i) * (w / 2) + j] * T(0.25);
                T* p = gx.data() + (static_cast<std::size_t>(ch) * h + 2 * i) * w + 2 * j;
                p[0] += g;
                p[1] += g;
                p[w] += g;
                p[w + 1] += g;
            }
    return gx;
}

template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
    const int c = x.dims[0], h = x.dims[1], w = x.dims[2];
    Tensor<T> y({c, 2 * h, 2 * w});
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                const T v = x.v[(static_cast<std::size_t>(ch) * h + i) * w + j];
                T* p = y.data() + (static_cast<std::size_t>(ch) * 2 * h + 2 * i) * 2 * w + 2 * j;
                p[0] = v;
                p[1] = v;
                p[2 * w] = v;
                p[2 * w + 1] = v;
            }
    return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& gy) {
    const int c = gy.dims[0], h2 = gy.dims[1], w2 = gy.dims[2];
    Tensor<T> gx({c, h2 / 2, w2 / 2});
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h2 / 2; ++i)
            for (int j = 0; j < w2 / 2; ++j) {
                const T* p = gy.data() + (static_cast<std::size_t>(ch) * h2 + 2 * i) * w2 + 2 * j;
                gx.v[(static_cast<std::size_t>(ch) * (h2 / 2) + i) * (w2 / 2) + j] =
                    p[0] + p[1] + p[w2] + p[w2 + 1];
            }
    return gx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> y({a.dims[0] + b.dims[0], a.dims[1], a.dims[2]});
    std::copy(a.v.begin(), a.v.end(), y.v.begin());
    std::copy(b.v.begin(), b.v.end(), y.v.begin() + static_cast<std::ptrdiff_t>(a.numel()));
    return y;
}

template <typename T>
void init_conv(ParamMap<T>& p, const std::string& name, int cout, int cin, int e, Rng& rng) {
    Tensor<T> w({cout, cin, 3, 3});
    const double s = 1.0 / std::sqrt(static_cast<double>(cin) * 9);
    for (auto& x : w.v) x = static_cast<T>(rng.uniform(-s, s));
    p[name + ".w"] = std::move(w);
    p[name + ".b"] = Tensor<T>({cout});
    Tensor<T> tw({cout, e});
    const double st = 1.0 / std::sqrt(static_cast<double>(e));
    for (auto& x : tw.v) x = static_cast<T>(rng.uniform(-st, st));
    p[name + ".tw"] = std::move(tw);
    p[name + ".tb"] = Tensor<T>({cout});
}

template <typename T>
void check_input(const NetConfig& cfg, const Image<T>& x, int n) {
    if (x.dims.size() != 2 || x.dims[0] != cfg.height || x.dims[1] != cfg.width)
        throw std::invalid_argument("net: input shape does not match configured size");
    if (n < 1 || n > cfg.t_max) throw std::out_of_range("net: step index outside {1..t_max}");
}

}  // namespace detail

template <typename T>
ParamMap<T> zeros_like(const ParamMap<T>& params) {
    ParamMap<T> g;
    for (const auto& [name, t] : params) g.emplace(name, Tensor<T>(t.dims));
    return g;
}

template <typename T>
class UNetDenoiser {
public:
    NetConfig cfg;
    ParamMap<T> params;

    UNetDenoiser() = default;
    explicit UNetDenoiser(const NetConfig& c, std::uint64_t seed = 0) : cfg(c) {
        cfg.validate();
        Rng rng(seed);
        const int e = cfg.time_embed_dim;
        for (int i = 0; i < cfg.stages; ++i)
            detail::init_conv(params, "enc" + std::to_string(i),
                              cfg.channels_at(i), i == 0 ? 1 : cfg.channels_at(i - 1), e, rng);
        detail::init_conv(params, "bott", cfg.bottleneck_channels(),
                          cfg.stages == 0 ? 1 : cfg.bottleneck_channels(), e, rng);
        for (int i = cfg.stages - 1; i >= 0; --i) {
            const int up_ch =
                (i == cfg.stages - 1) ? cfg.bottleneck_channels() : cfg.channels_at(i + 1);
            detail::init_conv(params, "dec" + std::to_string(i), cfg.channels_at(i),
                              up_ch + cfg.channels_at(i), e, rng);
        }
        // zero-initialized head: the untrained model predicts eps = 0
        params["out.w"] = Tensor<T>({1, cfg.stages == 0 ? cfg.bottleneck_channels() : cfg.base_channels, 3, 3});
        params["out.b"] = Tensor<T>({1});
    }

    Image<T> forward(const Image<T>& x, int n) const {
        NetCache<T> c;
        return forward_cached(x, n, c);
    }

    Image<T> forward_cached(const Image<T>& x, int n, NetCache<T>& c) const {
        detail::check_input(cfg, x, n);
        c.enc.assign(cfg.stages, {});
        c.dec.assign(cfg.stages, {});
        c.n = n;
        c.temb = sinusoidal_time_embedding<T>(n, cfg.time_embed_dim, cfg.t_max);
        Tensor<T> a({1, cfg.height, cfg.width}, x.v);
        std::vector<Tensor<T>> skips(cfg.stages);
        for (int i = 0; i < cfg.stages; ++i) {
            skips[i] = stage(a, "enc" + std::to_string(i), c.temb, &c.enc[i]);
            a = detail::avgpool2(skips[i]);
        }
        Tensor<T> u = stage(a, "bott", c.temb, &c.bott);
        for (int i = cfg.stages - 1; i >= 0; --i) {
            Tensor<T> cat = detail::concat_channels(detail::upsample2(u), skips[i]);
            u = stage(cat, "dec" + std::to_string(i), c.temb, &c.dec[i]);
        }
        c.out_in = u;
        Tensor<T> out = conv_out(u);
        c.valid = true;
        return Image<T>({cfg.height, cfg.width}, std::move(out.v));
    }

    // gout: dLoss/dOutput. Accumulates into grads (zeros_like-shaped); when
    // gx is non-null also produces the gradient w.r.t. the input image.
    void backward(const NetCache<T>& c, const Image<T>& gout, ParamMap<T>& grads,
                  Image<T>* gx = nullptr) const {
        if (!c.valid) throw std::logic_error("net: backward before forward");
        const int hw = cfg.height * cfg.width;
        const Tensor<T>& u = c.out_in;
        const int cin = u.dims[0];
        // output conv backward
        std::vector<T> col(static_cast<std::size_t>(cin) * 9 * hw);
        detail::im2col3(u.data(), cin, cfg.height, cfg.width, col.data());
        detail::gemm(false, true, 1, cin * 9, hw, T(1), gout.data(), hw, col.data(), hw, T(1),
                     grads.at("out.w").data(), cin * 9);
        T bsum = T(0);
        for (int i = 0; i < hw; ++i) bsum += gout.v[i];
        grads.at("out.b").v[0] += bsum;
        std::vector<T> gcol(col.size());
        detail::gemm(true, false, cin * 9, hw, 1, T(1), params.at("out.w").data(), cin * 9,
                     gout.data(), hw, T(0), gcol.data(), hw);
        Tensor<T> gu({cin, cfg.height, cfg.width});
        detail::col2im3(gcol.data(), cin, cfg.height, cfg.width, gu.data());

        std::vector<Tensor<T>> gskip(cfg.stages);
        for (int i = 0; i <= cfg.stages - 1; ++i) {
            Tensor<T> gcat = stage_bwd(c.dec[i], gu, "dec" + std::to_string(i), c.temb, grads);
            const int up_ch =
                (i == cfg.stages - 1) ? cfg.bottleneck_channels() : cfg.channels_at(i + 1);
            const int h = c.dec[i].in.dims[1], w = c.dec[i].in.dims[2];
            Tensor<T> gup({up_ch, h, w});
            std::copy(gcat.v.begin(), gcat.v.begin() + static_cast<std::ptrdiff_t>(gup.numel()),
                      gup.v.begin());
            gskip[i] = Tensor<T>({cfg.channels_at(i), h, w});
            std::copy(gcat.v.begin() + static_cast<std::ptrdiff_t>(gup.numel()), gcat.v.end(),
                      gskip[i].v.begin());
            gu = detail::upsample2_backward(gup);
        }
        Tensor<T> ga = stage_bwd(c.bott, gu, "bott", c.temb, grads);
        for (int i = cfg.stages - 1; i >= 0; --i) {
            const int h = c.enc[i].in.dims[1], w = c.enc[i].in.dims[2];
            Tensor<T> ge = detail::avgpool2_backward(ga, h, w);
            for (std::size_t k = 0; k < ge.numel(); ++k) ge.v[k] += gskip[i].v[k];
            ga = stage_bwd(c.enc[i], ge, "enc" + std::to_string(i), c.temb, grads);
        }
        if (gx) *gx = Image<T>({cfg.height, cfg.width}, std::move(ga.v));
    }

private:
    Tensor<T> stage(const Tensor<T>& x, const std::string& name, const std::vector<T>& temb,
                    StageCache<T>* cache) const {
        return detail::stage_forward(x, params.at(name + ".w"), params.at(name + ".b"),
                                     params.at(name + ".tw"), params.at(name + ".tb"), temb, cache);
    }
    Tensor<T> stage_bwd(const StageCache<T>& cache, const Tensor<T>& gy, const std::string& name,
                        const std::vector<T>& temb, ParamMap<T>& grads) const {
        return detail::stage_backward(cache, gy, params.at(name + ".w"), temb,
                                      grads.at(name + ".w"), grads.at(name + ".b"),
                                      grads.at(name + ".tw"), grads.at(name + ".tb"));
    }
    Tensor<T> conv_out(const Tensor<T>& u) const {
        const int cin = u.dims[0], hw = cfg.height * cfg.width;
        std::vector<T> col(static_cast<std::size_t>(cin) * 9 * hw);
        detail::im2col3(u.data(), cin, cfg.height, cfg.width, col.data());
        Tensor<T> out({1, cfg.height, cfg.width});
        detail::gemm(false, false, 1, hw, cin * 9, T(1), params.at("out.w").data(), cin * 9,
                     col.data(), hw, T(0), out.data(), hw);
        const T b = params.at("out.b").v[0];
        for (auto& v : out.v) v += b;
        return out;
    }
};

template <typename T>
class NoisyClassifier {
public:
    NetConfig cfg;
    ParamMap<T> params;

    NoisyClassifier() = default;
    explicit NoisyClassifier(const NetConfig& c, std::uint64_t seed = 0) : cfg(c) {
        cfg.validate();
        Rng rng(seed);
        const int e = cfg.time_embed_dim;
        for (int i = 0; i < cfg.stages; ++i)
            detail::init_conv(params, "enc" + std::to_string(i),
                              cfg.channels_at(i), i == 0 ? 1 : cfg.channels_at(i - 1), e, rng);
        detail::init_conv(params, "bott", cfg.bottleneck_channels(),
                          cfg.stages == 0 ? 1 : cfg.bottleneck_channels(), e, rng);
        const int bc = cfg.bottleneck_channels();
        Tensor<T> hw({2, bc});
        const double s = 1.0 / std::sqrt(static_cast<double>(bc));
        for (auto& x : hw.v) x = static_cast<T>(rng.uniform(-s, s));
        params["head.w"] = std::move(hw);
        params["head.b"] = Tensor<T>({2});
    }

    std::array<T, 2> logits(const Image<T>& x, int n) const {
        NetCache<T> c;
        return forward_cached(x, n, c);
    }

    // (log p(healthy), log p(diseased)) via log-sum-exp.
    std::array<T, 2> log_probs(const Image<T>& x, int n) const {
        return log_softmax(logits(x, n));
    }

    static std::array<T, 2> log_softmax(const std::array<T, 2>& lg) {
        const T m = std::max(lg[0], lg[1]);
        const T lse = m + std::log(std::exp(lg[0] - m) + std::exp(lg[1] - m));
        return {lg[0] - lse, lg[1] - lse};
    }

    std::array<T, 2> forward_cached(const Image<T>& x, int n, NetCache<T>& c) const {
        detail::check_input(cfg, x, n);
        c.enc.assign(cfg.stages, {});
        c.n = n;
        c.temb = sinusoidal_time_embedding<T>(n, cfg.time_embed_dim, cfg.t_max);
        Tensor<T> a({1, cfg.height, cfg.width}, x.v);
        for (int i = 0; i < cfg.stages; ++i)
            a = detail::avgpool2(stage(a, "enc" + std::to_string(i), c.temb, &c.enc[i]));
        Tensor<T> bt = stage(a, "bott", c.temb, &c.bott);
        const int bc = cfg.bottleneck_channels();
        const int hw = bt.dims[1] * bt.dims[2];
        // global max pool: keeps small localized activations from being
        // averaged away by the healthy bulk of the image
        std::vector<T> g(bc);
        for (int ch = 0; ch < bc; ++ch) {
            const T* p = bt.data() + static_cast<std::size_t>(ch) * hw;
            T best = p[0];
            for (int i = 1; i < hw; ++i) best = std::max(best, p[i]);
            g[ch] = best;
        }
        std::array<T, 2> lg{params.at("head.b").v[0], params.at("head.b").v[1]};
        for (int k = 0; k < 2; ++k)
            for (int ch = 0; ch < bc; ++ch)
                lg[k] += params.at("head.w").v[static_cast<std::size_t>(k) * bc + ch] * g[ch];
        c.logits = lg;
        c.valid = true;
        return lg;
    }

    void backward(const NetCache<T>& c, const std::array<T, 2>& glogits, ParamMap<T>& grads,
                  Image<T>* gx = nullptr) const {
        if (!c.valid) throw std::logic_error("net: backward before forward");
        const Tensor<T>& z = c.bott.z;
        const int bc = cfg.bottleneck_channels();
        const int h = z.dims[1], w = z.dims[2];
        const int hw = h * w;
        // recompute the max-pooled activations and argmax positions from z
        std::vector<T> g(bc);
        std::vector<int> arg(bc);
        for (int ch = 0; ch < bc; ++ch) {
            const T* p = z.data() + static_cast<std::size_t>(ch) * hw;
            T best = p[0] * detail::sigmoid(p[0]);
            int best_i = 0;
            for (int i = 1; i < hw; ++i) {
                const T a = p[i] * detail::sigmoid(p[i]);
                if (a > best) {
                    best = a;
                    best_i = i;
                }
            }
            g[ch] = best;
            arg[ch] = best_i;
        }
        for (int k = 0; k < 2; ++k) {
            grads.at("head.b").v[k] += glogits[k];
            for (int ch = 0; ch < bc; ++ch)
                grads.at("head.w").v[static_cast<std::size_t>(k) * bc + ch] += glogits[k] * g[ch];
        }
        Tensor<T> gbt({bc, h, w});
        for (int ch = 0; ch < bc; ++ch) {
            const T gpool = glogits[0] * params.at("head.w").v[ch] +
                            glogits[1] * params.at("head.w").v[static_cast<std::size_t>(bc) + ch];
            gbt.v[static_cast<std::size_t>(ch) * hw + arg[ch]] = gpool;
        }
        Tensor<T> ga = stage_bwd(c.bott, gbt, "bott", c.temb, grads);
        for (int i = cfg.stages - 1; i >= 0; --i) {
            Tensor<T> ge = detail::avgpool2_backward(ga, c.enc[i].in.dims[1], c.enc[i].in.dims[2]);
            ga = stage_bwd(c.enc[i], ge, "enc" + std::to_string(i), c.temb, grads);
        }
        if (gx) *gx = Image<T>({cfg.height, cfg.width}, std::move(ga.v));
    }

    // Gradient of log p(target | x, n) with respect to the input pixels.
    Image<T> input_log_prob_gradient(const Image<T>& x, int n, ClassLabel target) const {
        NetCache<T> c;
        const auto lg = forward_cached(x, n, c);
        const auto lp = log_softmax(lg);
        const int t = static_cast<int>(target);
        if (t != 0 && t != 1) throw std::invalid_argument("net: invalid class tag");
        // d log p_t / d logits = onehot(t) - softmax
        std::array<T, 2> gl{-std::exp(lp[0]), -std::exp(lp[1])};
        gl[t] += T(1);
        ParamMap<T> sink = zeros_like(params);
        Image<T> gx;
        backward(c, gl, sink, &gx);
        return gx;
    }

private:
    Tensor<T> stage(const Tensor<T>& x, const std::string& name, const std::vector<T>& temb,
                    StageCache<T>* cache) const {
        return detail::stage_forward(x, params.at(name + ".w"), params.at(name + ".b"),
                                     params.at(name + ".tw"), params.at(name + ".tb"), temb, cache);
    }
    Tensor<T> stage_bwd(const StageCache<T>& cache, const Tensor<T>& gy, const std::string& name,
                        const std::vector<T>& temb, ParamMap<T>& grads) const {
        return detail::stage_backward(cache, gy, params.at(name + ".w"), temb,
                                      grads.at(name + ".w"), grads.at(name + ".b"),
                                      grads.at(name + ".tw"), grads.at(name + ".tb"));
    }
};

}  // namespace ptad
