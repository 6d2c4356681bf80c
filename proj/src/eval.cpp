#include "ptad/eval.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace ptad {

double dice(const ImageF& mask_a, const ImageF& mask_b) {
    if (!mask_a.same_shape(mask_b)) throw std::invalid_argument("dice: shape mismatch");
    long a = 0, b = 0, inter = 0;
    for (std::size_t i = 0; i < mask_a.numel(); ++i) {
        const float x = mask_a.v[i], y = mask_b.v[i];
        if ((x != 0.0f && x != 1.0f) || (y != 0.0f && y != 1.0f))
            throw std::invalid_argument("dice: masks must be binary");
        a += x != 0.0f;
        b += y != 0.0f;
        inter += (x != 0.0f && y != 0.0f);
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

namespace {

long positive_area(const ImageF& mask) {
    long n = 0;
    for (const float v : mask.v) n += (v != 0.0f);
    return n;
}

struct ClassifiedCase {
    CaseRecord record;
    ImageF image;
    ImageF truth_mask;  // diseased only
};

// Classification and ground truth are independent of (S, N, threshold), so
// sweeps run this once.
std::vector<ClassifiedCase> classify_cohort(const DatasetManifest& manifest,
                                            const std::string& base_dir,
                                            const NoisyClassifier<float>& classifier) {
    std::vector<ClassifiedCase> cases;
    cases.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) {
        ClassifiedCase c;
        c.record.path = e.path;
        c.record.label = e.label;
        c.image = read_image(base_dir + "/" + e.path);
        const auto lp = classifier.log_probs(c.image, 1);
        c.record.healthy_confidence = std::exp(static_cast<double>(lp[0]));
        c.record.predicted = lp[0] >= lp[1] ? ClassLabel::healthy : ClassLabel::diseased;
        c.record.correct = c.record.predicted == e.label;
        if (e.label == ClassLabel::diseased) {
            c.truth_mask = read_image(base_dir + "/" + e.mask_path());
            if (positive_area(c.truth_mask) == 0)
                throw std::runtime_error("eval: diseased sample without mask pixels: " + e.path);
        }
        cases.push_back(std::move(c));
    }
    return cases;
}

CohortResult aggregate(std::vector<CaseRecord> records) {
    CohortResult r;
    long correct = 0;
    double dice_sum = 0.0;
    for (auto& rec : records) {
        correct += rec.correct;
        if (rec.included) {
            ++r.included;
            dice_sum += rec.dice_score;
            r.total_mask_area += rec.mask_area;
        } else {
            ++r.excluded;
        }
    }
    r.accuracy = records.empty() ? 0.0 : static_cast<double>(correct) / records.size();
    if (r.included > 0) r.mean_dice = dice_sum / r.included;
    r.cases = std::move(records);
    return r;
}

}  // namespace

CohortResult evaluate_cohort(const DatasetManifest& manifest, const std::string& base_dir,
                             const UNetDenoiser<float>& denoiser,
                             const NoisyClassifier<float>& classifier, const DetectConfig& config,
                             const NoiseSchedule& schedule) {
    auto cases = classify_cohort(manifest, base_dir, classifier);
    std::vector<CaseRecord> records;
    records.reserve(cases.size());
    for (auto& c : cases) {
        if (c.record.correct && c.record.label == ClassLabel::diseased) {
            const AnomalyResult res = detect(c.image, config, denoiser, classifier, schedule);
            c.record.included = true;
            c.record.dice_score = dice(res.mask, c.truth_mask);
            c.record.mask_area = positive_area(res.mask);
        }
        records.push_back(std::move(c.record));
    }
    return aggregate(std::move(records));
}

SweepReport sweep(const std::vector<double>& scales, const std::vector<int>& noise_levels,
                  const std::vector<double>& thresholds, const DatasetManifest& manifest,
                  const std::string& base_dir, const UNetDenoiser<float>& denoiser,
                  const NoisyClassifier<float>& classifier, const NoiseSchedule& schedule) {
    if (scales.empty() || noise_levels.empty() || thresholds.empty())
        throw std::invalid_argument("sweep: empty grid");
    const auto cases = classify_cohort(manifest, base_dir, classifier);

    SweepReport report;
    for (const double s : scales) {
        for (const int n : noise_levels) {
            // reconstructions depend only on (S, N); cache the normalized maps
            std::vector<ImageF> norm_maps;
            std::string cell_error;
            try {
                DetectConfig probe;
                probe.noise_level = n;
                probe.guidance.scale = s;
                probe.validate(schedule.t_max);
                for (const auto& c : cases) {
                    if (!(c.record.correct && c.record.label == ClassLabel::diseased)) continue;
                    const ImageF x_n = encode_image(c.image, n, denoiser, schedule);
                    const ImageF x0 =
                        decode_guided(x_n, n, denoiser, classifier, probe.guidance, schedule);
                    ImageF raw(c.image.dims);
                    for (std::size_t i = 0; i < raw.numel(); ++i)
                        raw.v[i] = std::abs(c.image.v[i] - x0.v[i]);
                    norm_maps.push_back(normalize_map(raw));
                }
            } catch (const std::exception& ex) {
                cell_error = ex.what();
            }
            for (const double th : thresholds) {
                SweepRow row;
                row.scale = s;
                row.noise_level = n;
                row.threshold = th;
                if (!cell_error.empty()) {
                    row.error = cell_error;
                    report.rows.push_back(std::move(row));
                    continue;
                }
                try {
                    std::vector<CaseRecord> records;
                    std::size_t map_idx = 0;
                    for (const auto& c : cases) {
                        CaseRecord rec = c.record;
                        if (rec.correct && rec.label == ClassLabel::diseased) {
                            const ImageF mask = binarize_map(norm_maps[map_idx++], th);
                            rec.included = true;
                            rec.dice_score = dice(mask, c.truth_mask);
                            rec.mask_area = positive_area(mask);
                        }
                        records.push_back(std::move(rec));
                    }
                    const CohortResult agg = aggregate(std::move(records));
                    row.mean_dice = agg.mean_dice;
                    row.accuracy = agg.accuracy;
                    row.included = agg.included;
                    row.excluded = agg.excluded;
                    row.total_mask_area = agg.total_mask_area;
                } catch (const std::exception& ex) {
                    row.error = ex.what();
                }
                report.rows.push_back(std::move(row));
            }
        }
    }
    return report;
}

void write_sweep_csv(const std::string& path, const SweepReport& report) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("sweep: cannot create " + path);
    f << "S,N,threshold,dice,accuracy,included,excluded\n";
    for (const auto& r : report.rows) {
        f << r.scale << "," << r.noise_level << "," << r.threshold << ",";
        if (!r.error.empty())
            f << "error," << "," << ",";
        else {
            if (r.mean_dice) f << *r.mean_dice;
            f << "," << r.accuracy << "," << r.included << "," << r.excluded;
        }
        f << "\n";
    }
}

void write_case_records(const std::string& path, const CohortResult& result) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("eval: cannot create " + path);
    for (const auto& c : result.cases) {
        f << "path=" << c.path << "\nlabel=" << label_name(c.label)
          << "\npredicted=" << label_name(c.predicted) << "\ncorrect=" << (c.correct ? 1 : 0)
          << "\nhealthy_confidence=" << c.healthy_confidence
          << "\nincluded=" << (c.included ? 1 : 0);
        if (c.included) f << "\ndice=" << c.dice_score << "\nmask_area=" << c.mask_area;
        f << "\n\n";
    }
}

}  // namespace ptad
