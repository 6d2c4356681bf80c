// Acceptance suite: one check per criterion, selectable by number on the
// command line. Each check prints a single PASS/FAIL line with the measured
// quantity and its pinned bound.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ptad/adam.hpp"
#include "ptad/anomaly.hpp"
#include "ptad/data.hpp"
#include "ptad/diffusion.hpp"
#include "ptad/eval.hpp"
#include "ptad/oracle.hpp"
#include "ptad/rng.hpp"

using namespace ptad;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool ok;
    std::string detail;
};

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// ---------------------------------------------------------------------------
// 1. stochastic reverse step == generalized step at sigma = sqrt(beta_tilde)
// ---------------------------------------------------------------------------
Outcome criterion_1() {
    const auto s = build_linear_schedule(kDefaultTMax, kDefaultBetaStart, kDefaultBetaEnd);
    Rng rng(101);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const int n = 1 + static_cast<int>(rng.uniform_index(s.t_max));
        const double x = rng.normal(), eh = rng.normal(), z = rng.normal();
        const double a =
            ddpm_reverse_scalar(x, eh, z, s.alpha(n), s.alpha_bar(n), s.beta(n), s.beta_tilde(n));
        const double b = ddim_decode_scalar(x, eh, z, s.alpha_bar(n), s.alpha_bar(n - 1),
                                            std::sqrt(s.beta_tilde(n)));
        worst = std::max(worst, std::abs(a - b) / std::max(1.0, std::abs(a)));
    }
    std::ostringstream o;
    o << "max relative error " << worst << " (bound 1e-10, 1000 tuples)";
    return {worst < 1e-10, o.str()};
}

// ---------------------------------------------------------------------------
// 2. iterated single steps match the closed-form jump in mean and variance
// ---------------------------------------------------------------------------
Outcome criterion_2() {
    const auto s = build_linear_schedule(kDefaultTMax, kDefaultBetaStart, kDefaultBetaEnd);
    Rng rng(102);
    const double x0 = 3.0;
    const int samples = 100000;
    double worst = 0.0;
    for (const int n : {10, 100, 500}) {
        double sum = 0.0, sum2 = 0.0;
        for (int i = 0; i < samples; ++i) {
            double x = x0;
            for (int k = 1; k <= n; ++k) x = forward_step_scalar(x, rng.normal(), s.beta(k));
            sum += x;
            sum2 += x * x;
        }
        const double mean = sum / samples;
        const double var = sum2 / samples - mean * mean;
        const double want_mean = std::sqrt(s.alpha_bar(n)) * x0;
        const double want_var = 1.0 - s.alpha_bar(n);
        worst = std::max(worst, std::abs(mean - want_mean) / std::abs(want_mean));
        worst = std::max(worst, std::abs(var - want_var) / want_var);
    }
    std::ostringstream o;
    o << "max relative deviation " << worst << " (bound 0.01, 1e5 samples, n in {10,100,500})";
    return {worst < 0.01, o.str()};
}

// ---------------------------------------------------------------------------
// 3. constant-eps encode/decode inverts exactly up to float rounding
// ---------------------------------------------------------------------------
template <typename T>
double frozen_roundtrip(const NoiseSchedule& s) {
    Rng rng(103);
    Image<T> x({4, 4});
    for (auto& v : x.v) v = static_cast<T>(rng.uniform());
    const auto eps_fn = [](const Image<T>& xi, int) {
        Image<T> e(xi.dims);
        std::fill(e.v.begin(), e.v.end(), T(0.25));
        return e;
    };
    return roundtrip_error(x, 100, eps_fn, s);
}

Outcome criterion_3() {
    const auto s = build_linear_schedule(kDefaultTMax, kDefaultBetaStart, kDefaultBetaEnd);
    const double e32 = frozen_roundtrip<float>(s);
    const double e64 = frozen_roundtrip<double>(s);
    std::ostringstream o;
    o << "Linf error " << e32 << " at 32-bit (bound 1e-5), " << e64 << " at 64-bit (bound 1e-12)";
    return {e32 < 1e-5 && e64 < 1e-12, o.str()};
}

// ---------------------------------------------------------------------------
// 4. closed-form Gaussian predictor: bounded roundtrip, improving with T
// ---------------------------------------------------------------------------
Outcome criterion_4() {
    const GaussianWorld world{0.3, 1.0};
    Rng rng(104);

    const auto run = [&](int t, int n_steps) {
        const auto s =
            build_linear_schedule(t, kDefaultBetaStart * kDefaultTMax / t,
                                  kDefaultBetaEnd * kDefaultTMax / t);
        const auto eps_fn = [&](const Image<double>& xi, int n) {
            return gaussian_oracle_eps(xi, n, world, s);
        };
        double worst = 0.0;
        for (int img = 0; img < 100; ++img) {
            Image<double> x({8, 8});
            for (auto& v : x.v) v = world.mean + std::sqrt(world.variance) * rng.normal();
            worst = std::max(worst, roundtrip_error(x, n_steps, eps_fn, s));
        }
        return worst;
    };

    const double e1000 = run(1000, 300);
    const double e500 = run(500, 150);
    const double e250 = run(250, 75);
    std::ostringstream o;
    o << "Linf error " << e1000 << " at T=1000/N=300 (bound 0.05); T sweep " << e250 << " > "
      << e500 << " > " << e1000 << " must decrease";
    return {e1000 < 0.05 && e500 < e250 && e1000 < e500, o.str()};
}

// ---------------------------------------------------------------------------
// 5. backward passes against central finite differences
// ---------------------------------------------------------------------------
Outcome criterion_5() {
    // 64-bit: every parameter of a small denoiser and classifier
    NetConfig tiny;
    tiny.height = tiny.width = 4;
    tiny.stages = 1;
    tiny.base_channels = 2;
    tiny.time_embed_dim = 4;
    tiny.t_max = 50;

    double worst64 = 0.0;
    {
        UNetDenoiser<double> net(tiny, 11);
        Rng wr(105);
        for (auto& v : net.params["out.w"].v) v = wr.uniform(-0.3, 0.3);
        Image<double> x({4, 4}), w({4, 4});
        for (auto& v : x.v) v = wr.normal();
        for (auto& v : w.v) v = wr.normal();
        NetCache<double> cache;
        net.forward_cached(x, 7, cache);
        ParamMap<double> grads = zeros_like(net.params);
        net.backward(cache, w, grads);
        const double h = 1e-6;
        const auto loss = [&] {
            const auto out = net.forward(x, 7);
            double acc = 0;
            for (std::size_t i = 0; i < out.numel(); ++i) acc += out.v[i] * w.v[i];
            return acc;
        };
        for (auto& [name, block] : net.params)
            for (std::size_t i = 0; i < block.numel(); ++i) {
                const double keep = block.v[i];
                block.v[i] = keep + h;
                const double up = loss();
                block.v[i] = keep - h;
                const double dn = loss();
                block.v[i] = keep;
                const double fd = (up - dn) / (2 * h);
                worst64 = std::max(worst64, std::abs(fd - grads.at(name).v[i]) /
                                                std::max(1.0, std::abs(fd)));
            }
    }
    {
        NoisyClassifier<double> net(tiny, 13);
        Rng rng(106);
        Image<double> x({4, 4});
        for (auto& v : x.v) v = rng.normal();
        // input gradient of log p(healthy)
        const auto g = net.input_log_prob_gradient(x, 5, ClassLabel::healthy);
        const double h = 1e-6;
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const double keep = x.v[i];
            x.v[i] = keep + h;
            const double up = net.log_probs(x, 5)[0];
            x.v[i] = keep - h;
            const double dn = net.log_probs(x, 5)[0];
            x.v[i] = keep;
            const double fd = (up - dn) / (2 * h);
            worst64 =
                std::max(worst64, std::abs(fd - g.v[i]) / std::max(1.0, std::abs(fd)));
        }
    }

    // 32-bit: input Jacobian probe of the reference-width net on 8x8 inputs
    NetConfig ref;
    ref.height = ref.width = 8;
    ref.stages = 2;
    ref.base_channels = 16;
    ref.time_embed_dim = 32;
    ref.t_max = kDefaultTMax;
    double worst32 = 0.0;
    {
        UNetDenoiser<float> net(ref, 17);
        Rng wr(107);
        for (auto& v : net.params["out.w"].v) v = static_cast<float>(wr.uniform(-0.3, 0.3));
        Image<float> x({8, 8});
        for (auto& v : x.v) v = static_cast<float>(wr.normal());
        Image<float> probe({8, 8});
        probe.v[20] = 1.0f;
        NetCache<float> cache;
        net.forward_cached(x, 9, cache);
        ParamMap<float> sink = zeros_like(net.params);
        Image<float> gx;
        net.backward(cache, probe, sink, &gx);
        float scale = 0;
        for (const float v : gx.v) scale = std::max(scale, std::abs(v));
        const float h = 1e-2f;
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const float keep = x.v[i];
            x.v[i] = keep + h;
            const float up = net.forward(x, 9).v[20];
            x.v[i] = keep - h;
            const float dn = net.forward(x, 9).v[20];
            x.v[i] = keep;
            const float fd = (up - dn) / (2 * h);
            worst32 = std::max(worst32, static_cast<double>(std::abs(fd - gx.v[i]) /
                                                            std::max(1.0f, scale)));
        }
    }

    std::ostringstream o;
    o << "max relative error " << worst64 << " at 64-bit (bound 1e-6), " << worst32
      << " at 32-bit reference (bound 1e-3)";
    return {worst64 < 1e-6 && worst32 < 1e-3, o.str()};
}

// ---------------------------------------------------------------------------
// 6. trained 1-pixel denoiser approaches the analytic Gaussian predictor
// ---------------------------------------------------------------------------
Outcome criterion_6() {
    const auto s = build_linear_schedule(kDefaultTMax, kDefaultBetaStart, kDefaultBetaEnd);
    const GaussianWorld world{0.0, 1.0};

    Rng data_rng(108);
    std::vector<ImageF> dataset(512, ImageF({1, 1}));
    for (auto& img : dataset) img.v[0] = static_cast<float>(data_rng.normal());

    NetConfig arch;
    arch.height = arch.width = 1;
    arch.stages = 0;
    arch.base_channels = 32;
    arch.time_embed_dim = 32;
    arch.t_max = kDefaultTMax;

    TrainConfig cfg;
    cfg.iterations = 20000;
    cfg.batch_size = 64;
    cfg.learning_rate = 1e-3;
    cfg.seed = 109;
    const auto model = train_denoiser(dataset, s, arch, cfg, nullptr);

    Rng rng(110);
    double gap = 0.0;
    const int trials = 5000;
    for (int i = 0; i < trials; ++i) {
        const int n = 1 + static_cast<int>(rng.uniform_index(s.t_max));
        const double x0 = rng.normal(), eps = rng.normal();
        ImageF xn({1, 1});
        xn.v[0] = static_cast<float>(forward_jump_scalar(x0, eps, s.alpha_bar(n)));
        const double predicted = model.forward(xn, n).v[0];
        const double oracle = gaussian_oracle_eps(xn, n, world, s).v[0];
        gap += (predicted - oracle) * (predicted - oracle);
    }
    gap /= trials;
    std::ostringstream o;
    o << "mean squared gap to the analytic predictor " << gap << " (bound 0.05, 20k iterations)";
    return {gap < 0.05, o.str()};
}

// ---------------------------------------------------------------------------
// 7 + 11. end-to-end phantom experiment via the CLI, repeated for determinism
// ---------------------------------------------------------------------------
int run_cli(const std::string& args) {
    const std::string cmd = std::string(PTAD_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

bool run_pipeline(const fs::path& dir, std::string& error) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string data = (dir / "data").string();
    if (run_cli("gen-data --out " + data + " --count 2000 --seed 42 --size 32") != 0) {
        error = "gen-data failed";
        return false;
    }
    if (run_cli("train-denoiser --data " + data + " --out " + (dir / "denoiser.pdad").string() +
                " --iters 20000 --batch 16 --seed 1 --trace " + (dir / "loss.csv").string()) !=
        0) {
        error = "train-denoiser failed";
        return false;
    }
    if (run_cli("train-classifier --data " + data + " --out " +
                (dir / "classifier.pdad").string() + " --iters 5000 --batch 32 --lr 1e-3 --t-max 300 --seed 2") != 0) {
        error = "train-classifier failed";
        return false;
    }
    if (run_cli("sweep --denoiser " + (dir / "denoiser.pdad").string() + " --classifier " +
                (dir / "classifier.pdad").string() + " --data " + data + " --out " +
                (dir / "sweep.csv").string() +
                " --scales 5,8,10 --noise-levels 100,200,300 --thresholds 0.25,0.35,0.45") != 0) {
        error = "sweep failed";
        return false;
    }
    return true;
}

struct SweepBest {
    double dice = -1.0;
    double accuracy = 0.0;
    std::string cell;
};

bool parse_sweep_csv(const fs::path& path, SweepBest& best, std::string& error) {
    std::ifstream f(path);
    if (!f) {
        error = "missing sweep CSV";
        return false;
    }
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
        std::istringstream in(line);
        std::string s, n, th, dice_s, acc_s;
        std::getline(in, s, ',');
        std::getline(in, n, ',');
        std::getline(in, th, ',');
        std::getline(in, dice_s, ',');
        std::getline(in, acc_s, ',');
        if (dice_s.empty() || dice_s == "error") continue;
        const double d = std::stod(dice_s);
        if (d > best.dice) {
            best.dice = d;
            best.accuracy = std::stod(acc_s);
            best.cell = "S=" + s + " N=" + n + " threshold=" + th;
        }
    }
    if (best.dice < 0.0) {
        error = "sweep CSV has no usable cells";
        return false;
    }
    return true;
}

const fs::path kPipelineDir = "acceptance_e2e";

Outcome criterion_7() {
    const double t0 = now_seconds();
    std::string error;
    if (!run_pipeline(kPipelineDir, error)) return {false, error};
    SweepBest best;
    if (!parse_sweep_csv(kPipelineDir / "sweep.csv", best, error)) return {false, error};
    const double minutes = (now_seconds() - t0) / 60.0;
    std::ostringstream o;
    o << "best mean Dice " << best.dice << " (bound >= 0.40) at " << best.cell
      << ", classifier accuracy " << best.accuracy << " (bound >= 0.85), " << minutes
      << " min (budget 60)";
    return {best.dice >= 0.40 && best.accuracy >= 0.85 && minutes <= 60.0, o.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream buf;
    buf << f.rdbuf();
    return buf.str();
}

Outcome criterion_11() {
    std::string error;
    if (!fs::exists(kPipelineDir / "sweep.csv") && !run_pipeline(kPipelineDir, error))
        return {false, "first pipeline: " + error};
    const fs::path repeat = "acceptance_e2e_repeat";
    if (!run_pipeline(repeat, error)) return {false, "repeat pipeline: " + error};

    long files = 0;
    std::vector<std::string> rel = {"denoiser.pdad", "classifier.pdad", "loss.csv", "sweep.csv",
                                    "data/manifest_train.tsv", "data/manifest_test.tsv"};
    for (const auto& e : fs::directory_iterator(kPipelineDir / "data"))
        if (e.path().extension() == ".ptad")
            rel.push_back("data/" + e.path().filename().string());
    for (const auto& r : rel) {
        ++files;
        if (slurp(kPipelineDir / r) != slurp(repeat / r)) {
            return {false, "file differs between runs: " + r};
        }
    }
    std::ostringstream o;
    o << files << " output files bitwise identical across repeated runs";
    return {true, o.str()};
}

// ---------------------------------------------------------------------------
// 8. S = 0 detection is byte-identical to an explicitly unguided run
// ---------------------------------------------------------------------------
Outcome criterion_8() {
    const fs::path dir = "acceptance_guidance";
    fs::remove_all(dir);
    fs::create_directories(dir);

    NetConfig arch;
    arch.height = arch.width = 16;
    arch.stages = 1;
    arch.base_channels = 4;
    arch.time_embed_dim = 8;
    arch.t_max = 100;

    ModelFile dm;
    dm.kind = "denoiser";
    dm.arch = arch;
    dm.schedule = build_linear_schedule(100, 1e-3, 0.02);
    UNetDenoiser<float> den(arch, 21);
    Rng wr(111);
    for (auto& v : den.params.at("out.w").v) v = static_cast<float>(wr.uniform(-0.1, 0.1));
    dm.params = den.params;
    write_model((dir / "denoiser.pdad").string(), dm);

    ModelFile cm = dm;
    cm.kind = "classifier";
    cm.params = NoisyClassifier<float>(arch, 23).params;
    write_model((dir / "classifier.pdad").string(), cm);

    PhantomParams params;
    params.size = 28;
    const auto sample = make_preprocessed_phantom(5, params, 16);
    if (!sample) return {false, "fixture phantom rejected by the filter"};
    write_image((dir / "input.ptad").string(), sample->image);

    const std::string common = "detect --denoiser " + (dir / "denoiser.pdad").string() +
                               " --classifier " + (dir / "classifier.pdad").string() +
                               " --input " + (dir / "input.ptad").string() +
                               " --noise-level 40 --threshold 0.35 ";
    if (run_cli(common + "--scale 0 --out " + (dir / "a").string()) != 0)
        return {false, "detect with S=0 failed"};
    if (run_cli(common + "--scale 9 --no-guidance --out " + (dir / "b").string()) != 0)
        return {false, "unguided detect failed"};

    long files = 0;
    for (const char* name :
         {"reconstruction.ptad", "anomaly_raw.ptad", "anomaly_norm.ptad", "mask.ptad",
          "reconstruction.pgm", "anomaly_norm.pgm", "mask.pgm"}) {
        ++files;
        if (slurp(dir / "a" / name) != slurp(dir / "b" / name))
            return {false, std::string("output differs: ") + name};
    }
    std::ostringstream o;
    o << files << " detect outputs byte-identical between S=0 and the unguided path";
    return {true, o.str()};
}

// ---------------------------------------------------------------------------
// 9. Dice formula vs exhaustive set computation on all 3x3 mask pairs
// ---------------------------------------------------------------------------
Outcome criterion_9() {
    long checked = 0;
    for (unsigned ai = 0; ai < 512; ++ai) {
        ImageF a({3, 3});
        for (int i = 0; i < 9; ++i) a.v[i] = (ai >> i) & 1u ? 1.0f : 0.0f;
        for (unsigned bi = 0; bi < 512; ++bi) {
            ImageF b({3, 3});
            for (int i = 0; i < 9; ++i) b.v[i] = (bi >> i) & 1u ? 1.0f : 0.0f;
            const int na = __builtin_popcount(ai), nb = __builtin_popcount(bi);
            const int inter = __builtin_popcount(ai & bi);
            const double expect = (na + nb == 0) ? 1.0 : 2.0 * inter / (na + nb);
            const double got = dice(a, b);
            if (got != expect) return {false, "formula mismatch on a 3x3 pair"};
            if (dice(b, a) != got) return {false, "asymmetric result on a 3x3 pair"};
            ++checked;
        }
    }
    std::ostringstream o;
    o << checked << " mask pairs match the set-based computation, including both-empty = 1";
    return {checked == 512 * 512, o.str()};
}

// ---------------------------------------------------------------------------
// 10. sweep bookkeeping on a rigged 5-case fixture
// ---------------------------------------------------------------------------
Outcome criterion_10() {
    const fs::path dir = "acceptance_protocol";
    fs::remove_all(dir);
    fs::create_directories(dir);

    NetConfig arch;
    arch.height = arch.width = 4;
    arch.stages = 1;
    arch.base_channels = 2;
    arch.time_embed_dim = 4;
    arch.t_max = 10;
    const auto s = build_linear_schedule(10, 1e-4, 0.02);

    // five cases: three diseased, two healthy
    DatasetManifest manifest;
    manifest.split = "test";
    Rng rng(112);
    for (int i = 0; i < 5; ++i) {
        ImageF img({4, 4});
        for (auto& v : img.v) v = static_cast<float>(rng.uniform());
        char name[32];
        std::snprintf(name, sizeof(name), "case_%d.ptad", i);
        const ClassLabel label = i < 3 ? ClassLabel::diseased : ClassLabel::healthy;
        ManifestEntry e{name, label, static_cast<std::uint64_t>(i)};
        write_image((dir / e.path).string(), img);
        if (label == ClassLabel::diseased) {
            ImageF truth({4, 4});
            truth.v[i] = 1.0f;
            truth.v[i + 5] = 1.0f;
            write_image((dir / e.mask_path()).string(), truth);
        }
        manifest.entries.push_back(std::move(e));
    }

    // rigged classifier: constant "diseased" prediction regardless of input
    NoisyClassifier<float> clf(arch, 25);
    std::fill(clf.params.at("head.w").v.begin(), clf.params.at("head.w").v.end(), 0.0f);
    clf.params.at("head.b").v = {0.0f, 3.0f};

    UNetDenoiser<float> den(arch, 27);
    Rng wr(113);
    for (auto& v : den.params.at("out.w").v) v = static_cast<float>(wr.uniform(-0.2, 0.2));

    const std::vector<double> thresholds = {0.1, 0.3, 0.5, 0.7, 0.9};
    const SweepReport rep =
        sweep({0.0, 2.0}, {2, 5}, thresholds, manifest, dir.string(), den, clf, s);

    long groups = 0;
    for (std::size_t i = 0; i < rep.rows.size(); i += thresholds.size()) {
        ++groups;
        long prev_area = -1;
        for (std::size_t k = 0; k < thresholds.size(); ++k) {
            const SweepRow& row = rep.rows[i + k];
            if (!row.error.empty()) return {false, "sweep cell failed: " + row.error};
            if (row.included + row.excluded != 5)
                return {false, "included + excluded != cohort size"};
            if (row.included != 3) return {false, "rigged classifier must include all diseased"};
            if (prev_area >= 0 && row.total_mask_area > prev_area)
                return {false, "mask area grew with a rising threshold"};
            prev_area = row.total_mask_area;
        }
    }
    std::ostringstream o;
    o << groups << " (S,N) groups: mask area non-increasing over thresholds, "
      << "included+excluded = 5 in every row";
    return {groups == 4, o.str()};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: acceptance <criterion-number>...\n";
        return 2;
    }
    int failures = 0;
    for (int i = 1; i < argc; ++i) {
        const int crit = std::atoi(argv[i]);
        Outcome r{false, "unknown criterion"};
        switch (crit) {
            case 1: r = criterion_1(); break;
            case 2: r = criterion_2(); break;
            case 3: r = criterion_3(); break;
            case 4: r = criterion_4(); break;
            case 5: r = criterion_5(); break;
            case 6: r = criterion_6(); break;
            case 7: r = criterion_7(); break;
            case 8: r = criterion_8(); break;
            case 9: r = criterion_9(); break;
            case 10: r = criterion_10(); break;
            case 11: r = criterion_11(); break;
            default: break;
        }
        std::cout << (r.ok ? "PASS" : "FAIL") << " criterion " << crit << ": " << r.detail
                  << std::endl;
        failures += !r.ok;
    }
    return failures == 0 ? 0 : 1;
}
