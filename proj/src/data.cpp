#include "ptad/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ptad/rng.hpp"

namespace ptad {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::uint32_t kMaxDim = 1u << 20;

struct Sinusoid {
    double kx, ky, phase, amp;
};

bool inside_ellipse(double x, double y, double cx, double cy, double rx, double ry) {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
}

}  // namespace

PhantomSample generate_phantom(std::uint64_t seed, const PhantomParams& params) {
    const int sz = params.size;
    if (sz < 8) throw std::invalid_argument("phantom: canvas too small");
    Rng rng(seed);

    PhantomSample s;
    s.meta.seed = seed;
    s.meta.organ_rx = rng.uniform(params.organ_radius_min, params.organ_radius_max);
    s.meta.organ_ry = rng.uniform(params.organ_radius_min, params.organ_radius_max);
    const double jitter = 3.0;
    s.meta.organ_cx = sz / 2.0 + rng.uniform(-jitter, jitter);
    s.meta.organ_cy = sz / 2.0 + rng.uniform(-jitter, jitter);

    const double base = rng.uniform(0.35, 0.65);
    std::vector<Sinusoid> waves(3);
    for (auto& w : waves) {
        w.kx = rng.uniform(0.5, 1.8);
        w.ky = rng.uniform(0.5, 1.8);
        w.phase = rng.uniform(0.0, 2.0 * kPi);
        w.amp = params.texture_amplitude * rng.uniform(0.4, 1.0);
    }

    s.image = ImageF({sz, sz});
    s.organ_mask = ImageF({sz, sz});
    s.lesion_mask = ImageF({sz, sz});
    for (int y = 0; y < sz; ++y) {
        for (int x = 0; x < sz; ++x) {
            if (!inside_ellipse(x, y, s.meta.organ_cx, s.meta.organ_cy, s.meta.organ_rx,
                                s.meta.organ_ry))
                continue;
            double v = base;
            for (const auto& w : waves)
                v += w.amp * std::sin(2.0 * kPi * (w.kx * x + w.ky * y) / sz + w.phase);
            s.image.v[static_cast<std::size_t>(y) * sz + x] =
                static_cast<float>(std::clamp(v, 0.05, 0.95));
            s.organ_mask.v[static_cast<std::size_t>(y) * sz + x] = 1.0f;
        }
    }

    if (rng.uniform() < params.lesion_probability) {
        const double r = rng.uniform(params.lesion_radius_min, params.lesion_radius_max);
        const double rmin_organ = std::min(s.meta.organ_rx, s.meta.organ_ry);
        if (r + 1.0 >= rmin_organ)
            throw std::invalid_argument("phantom: lesion radius too large for organ");
        int cx = 0, cy = 0;
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            cx = static_cast<int>(std::floor(
                rng.uniform(s.meta.organ_cx - s.meta.organ_rx, s.meta.organ_cx + s.meta.organ_rx)));
            cy = static_cast<int>(std::floor(
                rng.uniform(s.meta.organ_cy - s.meta.organ_ry, s.meta.organ_cy + s.meta.organ_ry)));
            placed = inside_ellipse(cx, cy, s.meta.organ_cx, s.meta.organ_cy,
                                    s.meta.organ_rx - r - 0.5, s.meta.organ_ry - r - 0.5);
        }
        if (!placed) throw std::invalid_argument("phantom: lesion radius too large for organ");
        const double contrast = rng.uniform(params.lesion_contrast_min, params.lesion_contrast_max);
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        s.meta.lesion_cx = cx;
        s.meta.lesion_cy = cy;
        s.meta.lesion_radius = r;
        s.meta.lesion_contrast = sign * contrast;
        const int ri = static_cast<int>(std::ceil(r));
        for (int dy = -ri; dy <= ri; ++dy)
            for (int dx = -ri; dx <= ri; ++dx) {
                if (dx * dx + dy * dy > r * r) continue;
                const int x = cx + dx, y = cy + dy;
                const std::size_t i = static_cast<std::size_t>(y) * sz + x;
                if (s.organ_mask.v[i] == 0.0f) continue;
                s.lesion_mask.v[i] = 1.0f;
                s.image.v[i] = static_cast<float>(
                    std::clamp(static_cast<double>(s.image.v[i]) + sign * contrast, 0.02, 0.98));
            }
        s.label = ClassLabel::diseased;
    }
    return s;
}

namespace {

// Centroid of nonzero pixels, rounded by floor(c + 0.5) per axis.
std::pair<int, int> mask_centroid(const ImageF& mask) {
    double sy = 0, sx = 0;
    long count = 0;
    const int h = mask.dims[0], w = mask.dims[1];
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mask.v[static_cast<std::size_t>(y) * w + x] != 0.0f) {
                sy += y;
                sx += x;
                ++count;
            }
    if (count == 0) throw std::invalid_argument("crop: empty organ mask");
    return {static_cast<int>(std::floor(sy / count + 0.5)),
            static_cast<int>(std::floor(sx / count + 0.5))};
}

ImageF crop_window(const ImageF& image, int cy, int cx, int out_size) {
    const int h = image.dims[0], w = image.dims[1];
    const int sy = cy - out_size / 2, sx = cx - out_size / 2;
    ImageF out({out_size, out_size});
    for (int y = 0; y < out_size; ++y) {
        const int yy = sy + y;
        if (yy < 0 || yy >= h) continue;
        for (int x = 0; x < out_size; ++x) {
            const int xx = sx + x;
            if (xx < 0 || xx >= w) continue;
            out.v[static_cast<std::size_t>(y) * out_size + x] =
                image.v[static_cast<std::size_t>(yy) * w + xx];
        }
    }
    return out;
}

}  // namespace

ImageF center_crop_on_mask(const ImageF& image, const ImageF& organ_mask, int out_size) {
    if (!image.same_shape(organ_mask))
        throw std::invalid_argument("crop: image/mask shape mismatch");
    const auto [cy, cx] = mask_centroid(organ_mask);
    ImageF out = crop_window(image, cy, cx, out_size);
    const ImageF mask_out = crop_window(organ_mask, cy, cx, out_size);
    for (std::size_t i = 0; i < out.numel(); ++i)
        if (mask_out.v[i] == 0.0f) out.v[i] = 0.0f;
    return out;
}

ImageF normalize_intensity(const ImageF& image) {
    float lo = 0, hi = 0;
    bool any = false;
    for (const float v : image.v) {
        if (!std::isfinite(v)) throw std::invalid_argument("normalize: non-finite input");
        if (v == 0.0f) continue;
        if (!any) {
            lo = hi = v;
            any = true;
        } else {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    ImageF out(image.dims);
    if (!any) return out;
    for (std::size_t i = 0; i < image.numel(); ++i) {
        if (image.v[i] == 0.0f) continue;
        out.v[i] = (hi == lo) ? 0.5f : (image.v[i] - lo) / (hi - lo);
    }
    return out;
}

bool keep_slice(const PhantomSample& sample) {
    if (sample.label == ClassLabel::healthy) return true;
    double lesion_sum = 0, healthy_sum = 0;
    long lesion_n = 0, healthy_n = 0;
    for (std::size_t i = 0; i < sample.image.numel(); ++i) {
        if (sample.organ_mask.v[i] == 0.0f) continue;
        if (sample.lesion_mask.v[i] != 0.0f) {
            lesion_sum += sample.image.v[i];
            ++lesion_n;
        } else {
            healthy_sum += sample.image.v[i];
            ++healthy_n;
        }
    }
    if (lesion_n == 0) throw std::invalid_argument("keep_slice: diseased sample with empty mask");
    if (healthy_n == 0) return false;
    return std::abs(healthy_sum / healthy_n - lesion_sum / lesion_n) >= 0.1;
}

std::optional<PhantomSample> make_preprocessed_phantom(std::uint64_t seed,
                                                       const PhantomParams& params, int out_size) {
    PhantomSample raw = generate_phantom(seed, params);
    const auto [cy, cx] = mask_centroid(raw.organ_mask);
    PhantomSample s;
    s.meta = raw.meta;
    s.label = raw.label;
    s.organ_mask = crop_window(raw.organ_mask, cy, cx, out_size);
    s.lesion_mask = crop_window(raw.lesion_mask, cy, cx, out_size);
    ImageF cropped = crop_window(raw.image, cy, cx, out_size);
    for (std::size_t i = 0; i < cropped.numel(); ++i)
        if (s.organ_mask.v[i] == 0.0f) cropped.v[i] = 0.0f;
    s.image = normalize_intensity(cropped);
    if (s.label == ClassLabel::diseased) {
        bool any = false;
        for (const float v : s.lesion_mask.v) any |= (v != 0.0f);
        if (!any) throw std::runtime_error("phantom: lesion lost by cropping");
    }
    if (!keep_slice(s)) return std::nullopt;
    return s;
}

// ---------------------------------------------------------------------------
// Codecs
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::ostream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& f, const char* what) {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error(std::string("codec: truncated payload reading ") + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& f, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(f, u);
}

float get_f32(std::istream& f, const char* what) {
    const std::uint32_t u = get_u32(f, what);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

void put_f64(std::ostream& f, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    put_u32(f, static_cast<std::uint32_t>(u));
    put_u32(f, static_cast<std::uint32_t>(u >> 32));
}

double get_f64(std::istream& f, const char* what) {
    const std::uint64_t lo = get_u32(f, what);
    const std::uint64_t hi = get_u32(f, what);
    const std::uint64_t u = lo | (hi << 32);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

void put_string(std::ostream& f, const std::string& s) {
    put_u32(f, static_cast<std::uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& f, const char* what) {
    const std::uint32_t len = get_u32(f, what);
    if (len > (1u << 24)) throw std::runtime_error(std::string("codec: oversized string in ") + what);
    std::string s(len, '\0');
    if (len && !f.read(s.data(), len))
        throw std::runtime_error(std::string("codec: truncated payload reading ") + what);
    return s;
}

void check_magic(std::istream& f, const char* magic, const char* what) {
    char buf[8] = {};
    const std::size_t n = std::strlen(magic);
    if (!f.read(buf, static_cast<std::streamsize>(n)) || std::memcmp(buf, magic, n) != 0)
        throw std::runtime_error(std::string("codec: bad magic, not a ") + what + " file");
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("codec: cannot create " + path);
    return f;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("codec: cannot open " + path);
    return f;
}

}  // namespace

void write_image(const std::string& path, const ImageF& image) {
    auto f = open_out(path);
    f.write("PTAD1", 5);
    put_u32(f, static_cast<std::uint32_t>(image.dims[0]));
    put_u32(f, static_cast<std::uint32_t>(image.dims[1]));
    for (const float v : image.v) put_f32(f, v);
    if (!f) throw std::runtime_error("codec: write failed for " + path);
}

ImageF read_image(const std::string& path) {
    auto f = open_in(path);
    check_magic(f, "PTAD1", "PTAD image");
    const std::uint32_t h = get_u32(f, "height");
    const std::uint32_t w = get_u32(f, "width");
    if (h == 0 || w == 0 || h > kMaxDim || w > kMaxDim)
        throw std::runtime_error("codec: dimension overflow in " + path);
    ImageF img({static_cast<int>(h), static_cast<int>(w)});
    for (auto& v : img.v) v = get_f32(f, "pixels");
    return img;
}

void write_pgm(const std::string& path, const ImageF& image) {
    auto f = open_out(path);
    f << "P5\n" << image.dims[1] << " " << image.dims[0] << "\n255\n";
    for (const float v : image.v) {
        const int q = std::clamp(static_cast<int>(std::floor(v * 255.0f + 0.5f)), 0, 255);
        f.put(static_cast<char>(q));
    }
    if (!f) throw std::runtime_error("codec: write failed for " + path);
}

namespace {

std::string arch_descriptor(const NetConfig& a, const std::map<std::string, std::string>& meta) {
    std::ostringstream o;
    o << "height=" << a.height << "\nwidth=" << a.width << "\nstages=" << a.stages
      << "\nbase_channels=" << a.base_channels << "\ntime_embed_dim=" << a.time_embed_dim
      << "\nt_max=" << a.t_max << "\n";
    for (const auto& [k, v] : meta) o << k << "=" << v << "\n";
    return o.str();
}

void parse_descriptor(const std::string& desc, NetConfig& a,
                      std::map<std::string, std::string>& meta) {
    std::istringstream in(desc);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
        if (k == "height") a.height = std::stoi(v);
        else if (k == "width") a.width = std::stoi(v);
        else if (k == "stages") a.stages = std::stoi(v);
        else if (k == "base_channels") a.base_channels = std::stoi(v);
        else if (k == "time_embed_dim") a.time_embed_dim = std::stoi(v);
        else if (k == "t_max") a.t_max = std::stoi(v);
        else meta[k] = v;
    }
}

}  // namespace

void write_model(const std::string& path, const ModelFile& model) {
    auto f = open_out(path);
    f.write("PDAD1", 5);
    put_u32(f, 1);  // format version
    put_string(f, model.kind);
    put_u32(f, static_cast<std::uint32_t>(model.schedule.t_max));
    for (const double b : model.schedule.betas) put_f64(f, b);
    put_string(f, arch_descriptor(model.arch, model.meta));
    put_u32(f, static_cast<std::uint32_t>(model.params.size()));
    for (const auto& [name, t] : model.params) {
        put_string(f, name);
        put_u32(f, static_cast<std::uint32_t>(t.dims.size()));
        for (const int d : t.dims) put_u32(f, static_cast<std::uint32_t>(d));
        for (const float v : t.v) put_f32(f, v);
    }
    if (!f) throw std::runtime_error("codec: write failed for " + path);
}

ModelFile read_model(const std::string& path) {
    auto f = open_in(path);
    check_magic(f, "PDAD1", "PDAD model");
    const std::uint32_t version = get_u32(f, "version");
    if (version != 1) throw std::runtime_error("codec: unsupported model format version");
    ModelFile m;
    m.kind = get_string(f, "kind");
    const std::uint32_t t_max = get_u32(f, "t_max");
    if (t_max == 0 || t_max > kMaxDim) throw std::runtime_error("codec: dimension overflow in schedule");
    std::vector<double> betas(t_max);
    for (auto& b : betas) b = get_f64(f, "betas");
    m.schedule = build_schedule_from_betas(std::move(betas));
    parse_descriptor(get_string(f, "descriptor"), m.arch, m.meta);
    const std::uint32_t nblocks = get_u32(f, "block count");
    for (std::uint32_t i = 0; i < nblocks; ++i) {
        const std::string name = get_string(f, "block name");
        const std::uint32_t rank = get_u32(f, "rank");
        if (rank > 8) throw std::runtime_error("codec: dimension overflow in block " + name);
        std::vector<int> dims(rank);
        std::size_t numel = 1;
        for (auto& d : dims) {
            const std::uint32_t x = get_u32(f, "dims");
            if (x == 0 || x > kMaxDim) throw std::runtime_error("codec: dimension overflow in block " + name);
            d = static_cast<int>(x);
            numel *= x;
        }
        Tensor<float> t(dims);
        for (std::size_t k = 0; k < numel; ++k) t.v[k] = get_f32(f, "block data");
        m.params.emplace(name, std::move(t));
    }
    return m;
}

UNetDenoiser<float> denoiser_from_model(const ModelFile& m) {
    if (m.kind != "denoiser") throw std::runtime_error("model: expected a denoiser file");
    UNetDenoiser<float> net(m.arch);
    for (auto& [name, t] : net.params) {
        const auto it = m.params.find(name);
        if (it == m.params.end() || it->second.dims != t.dims)
            throw std::runtime_error("model: missing or misshapen block " + name);
        t = it->second;
    }
    return net;
}

NoisyClassifier<float> classifier_from_model(const ModelFile& m) {
    if (m.kind != "classifier") throw std::runtime_error("model: expected a classifier file");
    NoisyClassifier<float> net(m.arch);
    for (auto& [name, t] : net.params) {
        const auto it = m.params.find(name);
        if (it == m.params.end() || it->second.dims != t.dims)
            throw std::runtime_error("model: missing or misshapen block " + name);
        t = it->second;
    }
    return net;
}

// ---------------------------------------------------------------------------
// Manifests and dataset generation
// ---------------------------------------------------------------------------

std::string ManifestEntry::mask_path() const {
    const auto dot = path.rfind(".ptad");
    return (dot == std::string::npos ? path : path.substr(0, dot)) + ".mask.ptad";
}

std::string label_name(ClassLabel label) {
    return label == ClassLabel::healthy ? "healthy" : "diseased";
}

ClassLabel label_from_name(const std::string& name) {
    if (name == "healthy") return ClassLabel::healthy;
    if (name == "diseased") return ClassLabel::diseased;
    throw std::runtime_error("manifest: unknown label '" + name + "'");
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("manifest: cannot create " + path);
    for (const auto& e : manifest.entries)
        f << e.path << "\t" << label_name(e.label) << "\t" << e.seed << "\n";
}

DatasetManifest read_manifest(const std::string& path, const std::string& split) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("manifest: cannot open " + path);
    DatasetManifest m;
    m.split = split;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream in(line);
        ManifestEntry e;
        std::string label;
        std::string seed;
        if (!std::getline(in, e.path, '\t') || !std::getline(in, label, '\t') ||
            !std::getline(in, seed))
            throw std::runtime_error("manifest: malformed line '" + line + "'");
        e.label = label_from_name(label);
        e.seed = std::stoull(seed);
        m.entries.push_back(std::move(e));
    }
    return m;
}

std::vector<LabeledImage> load_labeled_images(const DatasetManifest& manifest,
                                              const std::string& base_dir) {
    std::vector<LabeledImage> out;
    out.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries)
        out.push_back({read_image(base_dir + "/" + e.path), e.label});
    return out;
}

GeneratedDataset generate_dataset(const std::string& out_dir, int count, std::uint64_t seed,
                                  const PhantomParams& params, int out_size) {
    if (count < 1) throw std::invalid_argument("gen-data: count must be positive");
    std::filesystem::create_directories(out_dir);
    GeneratedDataset ds;
    ds.train.split = "train";
    ds.test.split = "test";
    std::uint64_t next_seed = seed;
    for (int kept = 0; kept < count; ++next_seed) {
        const auto sample = make_preprocessed_phantom(next_seed, params, out_size);
        if (!sample) continue;
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%06d.ptad", kept);
        ManifestEntry e{name, sample->label, next_seed};
        write_image(out_dir + "/" + e.path, sample->image);
        if (sample->label == ClassLabel::diseased)
            write_image(out_dir + "/" + e.mask_path(), sample->lesion_mask);
        // every tenth kept sample is held out: 90/10 split
        (kept % 10 == 9 ? ds.test : ds.train).entries.push_back(std::move(e));
        ++kept;
    }
    write_manifest(out_dir + "/manifest_train.tsv", ds.train);
    write_manifest(out_dir + "/manifest_test.tsv", ds.test);
    return ds;
}

}  // namespace ptad
