#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ptad/anomaly.hpp"
#include "ptad/data.hpp"

namespace ptad {

// Overlap 2|A∩B| / (|A|+|B|); both-empty pairs agree perfectly and score 1.
double dice(const ImageF& mask_a, const ImageF& mask_b);

struct CaseRecord {
    std::string path;
    ClassLabel label = ClassLabel::healthy;
    ClassLabel predicted = ClassLabel::healthy;
    bool correct = false;
    double healthy_confidence = 0.0;
    bool included = false;  // correctly classified diseased: enters the Dice average
    double dice_score = 0.0;
    long mask_area = 0;  // positive pixels of the predicted mask
};

struct CohortResult {
    std::vector<CaseRecord> cases;
    double accuracy = 0.0;
    long included = 0;
    long excluded = 0;
    std::optional<double> mean_dice;  // absent when no case is included
    long total_mask_area = 0;
};

CohortResult evaluate_cohort(const DatasetManifest& manifest, const std::string& base_dir,
                             const UNetDenoiser<float>& denoiser,
                             const NoisyClassifier<float>& classifier, const DetectConfig& config,
                             const NoiseSchedule& schedule);

struct SweepRow {
    double scale = 0.0;
    int noise_level = 0;
    double threshold = 0.0;
    std::optional<double> mean_dice;
    double accuracy = 0.0;
    long included = 0;
    long excluded = 0;
    long total_mask_area = 0;
    std::string error;  // nonempty marks a failed cell
};

struct SweepReport {
    std::vector<SweepRow> rows;
};

// One row per (S, N, threshold); anomaly maps are computed once per (S, N)
// and rethresholded, which is bitwise identical to evaluating each cell
// independently.
SweepReport sweep(const std::vector<double>& scales, const std::vector<int>& noise_levels,
                  const std::vector<double>& thresholds, const DatasetManifest& manifest,
                  const std::string& base_dir, const UNetDenoiser<float>& denoiser,
                  const NoisyClassifier<float>& classifier, const NoiseSchedule& schedule);

// Header: S,N,threshold,dice,accuracy,included,excluded. An absent mean Dice
// is an empty field; a failed cell carries the marker "error".
void write_sweep_csv(const std::string& path, const SweepReport& report);

void write_case_records(const std::string& path, const CohortResult& result);

}  // namespace ptad
