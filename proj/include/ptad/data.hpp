#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ptad/diffusion.hpp"
#include "ptad/net.hpp"
#include "ptad/schedule.hpp"
#include "ptad/tensor.hpp"

namespace ptad {

// ---------------------------------------------------------------------------
// Synthetic phantoms: elliptical organ blob with low-frequency texture on a
// zero background, optionally carrying an interior disk lesion whose mean
// intensity differs from the surrounding tissue by a sampled contrast.
// ---------------------------------------------------------------------------

struct PhantomParams {
    int size = 44;  // generation canvas; the pipeline crops to the output size
    double organ_radius_min = 9.0;
    double organ_radius_max = 13.0;
    double texture_amplitude = 0.12;
    double lesion_probability = 0.5;
    double lesion_radius_min = 2.5;
    double lesion_radius_max = 4.5;
    double lesion_contrast_min = 0.05;
    double lesion_contrast_max = 0.30;
};

struct PhantomMeta {
    std::uint64_t seed = 0;
    double organ_cx = 0, organ_cy = 0, organ_rx = 0, organ_ry = 0;
    int lesion_cx = 0, lesion_cy = 0;
    double lesion_radius = 0, lesion_contrast = 0;
};

struct PhantomSample {
    ImageF image;
    ImageF lesion_mask;  // binary, subset of the organ region
    ImageF organ_mask;   // binary
    ClassLabel label = ClassLabel::healthy;
    PhantomMeta meta;
};

PhantomSample generate_phantom(std::uint64_t seed, const PhantomParams& params);

// Crop window of out_size centered at the organ-mask centroid (rounded by
// floor(c + 0.5) per axis), zero-padded at borders; pixels outside the organ
// are set to zero.
ImageF center_crop_on_mask(const ImageF& image, const ImageF& organ_mask, int out_size);

// Min-max rescale over nonzero (organ) pixels only; background stays zero;
// a constant organ maps to 0.5 everywhere inside it.
ImageF normalize_intensity(const ImageF& image);

// Filter rule for diseased slices: keep only when the healthy-region and
// lesion mean intensities differ by at least 0.1. Healthy slices always pass.
bool keep_slice(const PhantomSample& sample);

// Full generation pipeline: phantom -> crop -> normalize -> filter.
// Returns nothing when the filter rejects the slice.
std::optional<PhantomSample> make_preprocessed_phantom(std::uint64_t seed,
                                                       const PhantomParams& params, int out_size);

// ---------------------------------------------------------------------------
// File codecs
// ---------------------------------------------------------------------------

// Raw image container: magic "PTAD1", u32le height, u32le width, then
// row-major f32le pixels. Masks use the same container with {0,1} values.
void write_image(const std::string& path, const ImageF& image);
ImageF read_image(const std::string& path);

// 8-bit binary PGM (P5, maxval 255) with round-half-up quantization.
void write_pgm(const std::string& path, const ImageF& image);

// Model container: magic "PDAD1", u32le format version, kind string,
// the full beta table, a key=value architecture descriptor, then named
// parameter blocks (u32 name length, name bytes, u32 rank, u32 dims,
// f32le data).
struct ModelFile {
    std::string kind;  // "denoiser" or "classifier"
    NetConfig arch;
    NoiseSchedule schedule;
    std::map<std::string, std::string> meta;  // recorded config (seed, lr, ...)
    ParamMap<float> params;
};

void write_model(const std::string& path, const ModelFile& model);
ModelFile read_model(const std::string& path);

UNetDenoiser<float> denoiser_from_model(const ModelFile& m);
NoisyClassifier<float> classifier_from_model(const ModelFile& m);

// ---------------------------------------------------------------------------
// Dataset manifests: one `path<TAB>label<TAB>seed` line per sample. Diseased
// samples carry a ground-truth mask at <path minus .ptad>.mask.ptad.
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::string path;
    ClassLabel label = ClassLabel::healthy;
    std::uint64_t seed = 0;

    std::string mask_path() const;
    bool has_mask() const { return label == ClassLabel::diseased; }
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::string split;  // "train" or "test"
};

void write_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::string& path, const std::string& split);

std::vector<LabeledImage> load_labeled_images(const DatasetManifest& manifest,
                                              const std::string& base_dir);

// Generate `count` kept samples, write them under out_dir with a 90/10
// train/test split (every tenth kept sample goes to test).
struct GeneratedDataset {
    DatasetManifest train;
    DatasetManifest test;
};
GeneratedDataset generate_dataset(const std::string& out_dir, int count, std::uint64_t seed,
                                  const PhantomParams& params, int out_size);

std::string label_name(ClassLabel label);
ClassLabel label_from_name(const std::string& name);

}  // namespace ptad
