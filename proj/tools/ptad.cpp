// Command-line front end: data generation, training, detection, sweeping and
// self-testing, all reproducible from (config, seed).

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ptad/anomaly.hpp"
#include "ptad/data.hpp"
#include "ptad/diffusion.hpp"
#include "ptad/eval.hpp"
#include "ptad/selftest.hpp"

namespace fs = std::filesystem;
using namespace ptad;

namespace {

// Echo of the fully resolved configuration; re-running with run.meta as the
// config file reproduces the run.
void write_run_meta(const CLI::App* sub, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot create " + path);
    f << "subcommand=" << sub->get_name() << "\n";
    for (const auto* opt : sub->get_options()) {
        const std::string name = opt->get_single_name();
        if (name == "help" || name == "config") continue;
        std::string value;
        if (!opt->results().empty()) {
            std::ostringstream o;
            for (std::size_t i = 0; i < opt->results().size(); ++i)
                o << (i ? "," : "") << opt->results()[i];
            value = o.str();
        } else {
            value = opt->get_default_str();
        }
        f << name << "=" << value << "\n";
    }
}

template <typename T>
std::vector<T> parse_list(const std::string& s) {
    std::vector<T> out;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        if (tok.empty()) continue;
        if constexpr (std::is_same_v<T, int>)
            out.push_back(std::stoi(tok));
        else
            out.push_back(std::stod(tok));
    }
    if (out.empty()) throw std::runtime_error("empty list argument '" + s + "'");
    return out;
}

NetConfig arch_for(int size, int t_max, int stages, int base_channels, int time_embed_dim) {
    NetConfig a;
    a.height = a.width = size;
    a.t_max = t_max;
    a.stages = stages;
    a.base_channels = base_channels;
    a.time_embed_dim = time_embed_dim;
    a.validate();
    return a;
}

std::map<std::string, std::string> train_meta(const TrainConfig& cfg, double beta_start,
                                              double beta_end) {
    std::map<std::string, std::string> m;
    m["train_iterations"] = std::to_string(cfg.iterations);
    m["train_batch_size"] = std::to_string(cfg.batch_size);
    m["train_learning_rate"] = std::to_string(cfg.learning_rate);
    m["train_seed"] = std::to_string(cfg.seed);
    m["beta_start"] = std::to_string(beta_start);
    m["beta_end"] = std::to_string(beta_end);
    return m;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"weakly supervised anomaly detection with diffusion models"};
    app.require_subcommand(1);
    app.set_config("--config")->description("flat key=value config file");
    app.allow_config_extras(false);

    // --- gen-data ---
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic phantom dataset");
    std::string gen_out;
    int gen_count = 2000, gen_size = 32;
    std::uint64_t gen_seed = 0;
    double gen_lesion_prob = 0.5;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--count", gen_count, "number of kept samples")->capture_default_str();
    gen->add_option("--seed", gen_seed, "generator seed")->capture_default_str();
    gen->add_option("--size", gen_size, "output image size")->capture_default_str();
    gen->add_option("--lesion-prob", gen_lesion_prob, "lesion probability")->capture_default_str();

    // --- shared training options ---
    struct TrainArgs {
        std::string data, out, trace;
        long iters;
        int t_max = kDefaultTMax, batch = 32, stages = 2, base_channels = 16, time_embed = 32;
        double lr = 1e-4, beta_start = kDefaultBetaStart, beta_end = kDefaultBetaEnd;
        std::uint64_t seed = 0;
    };
    auto add_train_options = [](CLI::App* sub, TrainArgs& a) {
        sub->add_option("--data", a.data, "dataset directory (uses manifest_train.tsv)")->required();
        sub->add_option("--out", a.out, "model file to write")->required();
        sub->add_option("--iters", a.iters, "training iterations")->capture_default_str();
        sub->add_option("--t-max", a.t_max, "diffusion steps T")->capture_default_str();
        sub->add_option("--batch", a.batch, "batch size")->capture_default_str();
        sub->add_option("--lr", a.lr, "learning rate")->capture_default_str();
        sub->add_option("--seed", a.seed, "training seed")->capture_default_str();
        sub->add_option("--beta-start", a.beta_start, "schedule start")->capture_default_str();
        sub->add_option("--beta-end", a.beta_end, "schedule end")->capture_default_str();
        sub->add_option("--stages", a.stages, "downsampling stages")->capture_default_str();
        sub->add_option("--base-channels", a.base_channels, "first-stage width")->capture_default_str();
        sub->add_option("--time-embed-dim", a.time_embed, "time embedding size")->capture_default_str();
        sub->add_option("--trace", a.trace, "optional loss/accuracy trace CSV");
    };
    auto* td = app.add_subcommand("train-denoiser", "train the noise predictor");
    TrainArgs td_args;
    td_args.iters = 20000;
    add_train_options(td, td_args);
    auto* tc = app.add_subcommand("train-classifier", "train the noisy-image classifier");
    TrainArgs tc_args;
    tc_args.iters = 10000;
    add_train_options(tc, tc_args);

    // --- detect ---
    auto* det = app.add_subcommand("detect", "run anomaly detection on one image");
    std::string det_denoiser, det_classifier, det_input, det_out;
    double det_scale = 7.0, det_threshold = 0.35;
    int det_noise = 300;
    bool det_no_guidance = false;
    det->add_option("--denoiser", det_denoiser, "denoiser model file")->required();
    det->add_option("--classifier", det_classifier, "classifier model file")->required();
    det->add_option("--input", det_input, "input PTAD image")->required();
    det->add_option("--out", det_out, "output directory")->required();
    det->add_option("--scale", det_scale, "guidance scale S")->capture_default_str();
    det->add_option("--noise-level", det_noise, "encoding steps N")->capture_default_str();
    det->add_option("--threshold", det_threshold, "binarization threshold")->capture_default_str();
    det->add_flag("--no-guidance", det_no_guidance, "decode without the classifier");

    // --- sweep ---
    auto* sw = app.add_subcommand("sweep", "hyperparameter sweep over a test cohort");
    std::string sw_denoiser, sw_classifier, sw_data, sw_out;
    std::string sw_scales = "5,8,10", sw_noise = "100,200,300", sw_thresholds = "0.25,0.35,0.45";
    sw->add_option("--denoiser", sw_denoiser, "denoiser model file")->required();
    sw->add_option("--classifier", sw_classifier, "classifier model file")->required();
    sw->add_option("--data", sw_data, "dataset directory (uses manifest_test.tsv)")->required();
    sw->add_option("--out", sw_out, "CSV report path")->required();
    sw->add_option("--scales", sw_scales, "guidance scales")->capture_default_str();
    sw->add_option("--noise-levels", sw_noise, "noise levels")->capture_default_str();
    sw->add_option("--thresholds", sw_thresholds, "thresholds")->capture_default_str();

    auto* st = app.add_subcommand("selftest", "oracle and identity property suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed()) {
            PhantomParams params;
            params.lesion_probability = gen_lesion_prob;
            params.size = gen_size + 12;
            generate_dataset(gen_out, gen_count, gen_seed, params, gen_size);
            write_run_meta(gen, gen_out + "/run.meta");
            std::cout << "wrote " << gen_count << " samples to " << gen_out << "\n";
        }

        auto run_training = [&](const TrainArgs& a, bool classifier_mode, CLI::App* sub) {
            const auto manifest = read_manifest(a.data + "/manifest_train.tsv", "train");
            auto labeled = load_labeled_images(manifest, a.data);
            if (labeled.empty()) throw std::runtime_error("training manifest is empty");
            const int size = labeled.front().image.dims[0];
            const NetConfig arch =
                arch_for(size, a.t_max, a.stages, a.base_channels, a.time_embed);
            const NoiseSchedule schedule =
                build_linear_schedule(a.t_max, a.beta_start, a.beta_end);
            TrainConfig cfg;
            cfg.iterations = a.iters;
            cfg.batch_size = a.batch;
            cfg.learning_rate = a.lr;
            cfg.seed = a.seed;

            ModelFile file;
            file.arch = arch;
            file.schedule = schedule;
            file.meta = train_meta(cfg, a.beta_start, a.beta_end);
            std::vector<TracePoint> trace;
            if (classifier_mode) {
                const auto model = train_classifier(labeled, schedule, arch, cfg, &trace);
                file.kind = "classifier";
                file.params = model.params;
                if (!a.trace.empty()) write_trace_csv(a.trace, trace, "accuracy");
            } else {
                std::vector<ImageF> images;
                images.reserve(labeled.size());
                for (auto& s : labeled) images.push_back(std::move(s.image));
                const auto model = train_denoiser(images, schedule, arch, cfg, &trace);
                file.kind = "denoiser";
                file.params = model.params;
                if (!a.trace.empty()) write_trace_csv(a.trace, trace, "loss");
            }
            write_model(a.out, file);
            write_run_meta(sub, a.out + ".run.meta");
            std::cout << "wrote " << file.kind << " model to " << a.out << "\n";
        };
        if (td->parsed()) run_training(td_args, false, td);
        if (tc->parsed()) run_training(tc_args, true, tc);

        if (det->parsed()) {
            const ModelFile dm = read_model(det_denoiser);
            const ModelFile cm = read_model(det_classifier);
            const auto denoiser = denoiser_from_model(dm);
            const auto classifier = classifier_from_model(cm);
            const ImageF input = read_image(det_input);
            DetectConfig cfg;
            cfg.noise_level = det_noise;
            cfg.guidance.scale = det_no_guidance ? 0.0 : det_scale;
            cfg.threshold = det_threshold;
            const auto t0 = std::chrono::steady_clock::now();
            const AnomalyResult r = detect(input, cfg, denoiser, classifier, dm.schedule);
            const double ms = std::chrono::duration<double, std::milli>(
                                  std::chrono::steady_clock::now() - t0)
                                  .count();
            fs::create_directories(det_out);
            write_image(det_out + "/reconstruction.ptad", r.reconstruction);
            write_pgm(det_out + "/reconstruction.pgm", r.reconstruction);
            write_image(det_out + "/anomaly_raw.ptad", r.raw_map);
            write_image(det_out + "/anomaly_norm.ptad", r.normalized_map);
            write_pgm(det_out + "/anomaly_norm.pgm", r.normalized_map);
            write_image(det_out + "/mask.ptad", r.mask);
            write_pgm(det_out + "/mask.pgm", r.mask);
            std::ofstream meta(det_out + "/detect.meta");
            meta << "scale=" << cfg.guidance.scale << "\nnoise_level=" << cfg.noise_level
                 << "\nthreshold=" << cfg.threshold
                 << "\nhealthy_confidence=" << r.healthy_confidence
                 << "\nelapsed_ms=" << ms << "\n";
            write_run_meta(det, det_out + "/run.meta");
            std::cout << "healthy confidence " << r.healthy_confidence << ", outputs in "
                      << det_out << "\n";
        }

        if (sw->parsed()) {
            const ModelFile dm = read_model(sw_denoiser);
            const ModelFile cm = read_model(sw_classifier);
            const auto denoiser = denoiser_from_model(dm);
            const auto classifier = classifier_from_model(cm);
            const auto manifest = read_manifest(sw_data + "/manifest_test.tsv", "test");
            const SweepReport report =
                sweep(parse_list<double>(sw_scales), parse_list<int>(sw_noise),
                      parse_list<double>(sw_thresholds), manifest, sw_data, denoiser, classifier,
                      dm.schedule);
            write_sweep_csv(sw_out, report);
            write_run_meta(sw, sw_out + ".run.meta");
            std::cout << "wrote " << report.rows.size() << " sweep rows to " << sw_out << "\n";
        }

        if (st->parsed()) {
            const int failures = run_selftest(std::cout);
            if (failures > 0) return 2;
        }
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 2;
    }
    return 0;
}
