#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ptad/eval.hpp"

using namespace ptad;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
    const fs::path p = fs::temp_directory_path() / "ptad_test_eval";
    fs::create_directories(p);
    return p;
}

ImageF mask_from_bits(unsigned bits, int h, int w) {
    ImageF m({h, w});
    for (std::size_t i = 0; i < m.numel(); ++i) m.v[i] = (bits >> i) & 1u ? 1.0f : 0.0f;
    return m;
}

NetConfig tiny_arch() {
    NetConfig a;
    a.height = a.width = 4;
    a.stages = 1;
    a.base_channels = 2;
    a.time_embed_dim = 4;
    a.t_max = 10;
    return a;
}

// Classifier whose prediction ignores the input: zero head weights, fixed bias.
NoisyClassifier<float> constant_classifier(float healthy_logit, float diseased_logit) {
    NoisyClassifier<float> clf(tiny_arch(), 1);
    auto& w = clf.params.at("head.w");
    std::fill(w.v.begin(), w.v.end(), 0.0f);
    clf.params.at("head.b").v = {healthy_logit, diseased_logit};
    return clf;
}

// Four-case fixture: two healthy, two diseased with truth areas 3 and 5.
DatasetManifest write_fixture(const fs::path& dir) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    DatasetManifest m;
    m.split = "test";
    for (int i = 0; i < 4; ++i) {
        ImageF img({4, 4});
        for (std::size_t k = 0; k < img.numel(); ++k)
            img.v[k] = 0.1f + 0.05f * static_cast<float>(i) + 0.01f * static_cast<float>(k);
        char name[32];
        std::snprintf(name, sizeof(name), "case_%d.ptad", i);
        const ClassLabel label = i < 2 ? ClassLabel::healthy : ClassLabel::diseased;
        ManifestEntry e{name, label, static_cast<std::uint64_t>(i)};
        write_image((dir / e.path).string(), img);
        if (label == ClassLabel::diseased) {
            ImageF truth({4, 4});
            const int area = i == 2 ? 3 : 5;
            for (int k = 0; k < area; ++k) truth.v[k] = 1.0f;
            write_image((dir / e.mask_path()).string(), truth);
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

DetectConfig fast_config(double threshold) {
    DetectConfig c;
    c.noise_level = 1;
    c.guidance.scale = 0.0;
    c.threshold = threshold;
    return c;
}

}  // namespace

TEST_CASE("dice hand examples") {
    // |A| = 4, |B| = 6, |A ∩ B| = 2 -> 2*2/10 = 0.4
    ImageF a({2, 5}), b({2, 5});
    for (int i = 0; i < 4; ++i) a.v[i] = 1.0f;
    for (int i = 2; i < 8; ++i) b.v[i] = 1.0f;
    CHECK(dice(a, b) == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(dice(b, a) == doctest::Approx(0.4).epsilon(1e-12));

    CHECK(dice(a, a) == 1.0);
    const ImageF empty({2, 5});
    CHECK(dice(empty, empty) == 1.0);  // both empty: perfect agreement
    CHECK(dice(a, empty) == 0.0);

    ImageF nonbinary({2, 5});
    nonbinary.v[0] = 0.5f;
    CHECK_THROWS(dice(a, nonbinary));
    CHECK_THROWS(dice(a, ImageF({5, 2})));
}

TEST_CASE("dice agrees with popcount arithmetic on every 3x3 mask pair") {
    for (unsigned ai = 0; ai < 512; ++ai) {
        const ImageF a = mask_from_bits(ai, 3, 3);
        for (unsigned bi = 0; bi < 512; ++bi) {
            const ImageF b = mask_from_bits(bi, 3, 3);
            const int na = __builtin_popcount(ai), nb = __builtin_popcount(bi);
            const int inter = __builtin_popcount(ai & bi);
            const double expect = (na + nb == 0) ? 1.0 : 2.0 * inter / (na + nb);
            const double got = dice(a, b);
            if (got != expect) {
                REQUIRE(got == expect);  // fail loudly with the offending pair
            }
        }
    }
}

TEST_CASE("cohort with an always-healthy classifier includes nothing") {
    const auto dir = scratch_dir() / "fixture_a";
    const auto manifest = write_fixture(dir);
    const auto s = build_linear_schedule(10, 1e-4, 0.02);
    UNetDenoiser<float> den(tiny_arch(), 2);
    const auto clf = constant_classifier(1.0f, 0.0f);

    const CohortResult r = evaluate_cohort(manifest, dir.string(), den, clf, fast_config(0.35), s);
    CHECK(r.cases.size() == 4);
    CHECK(r.accuracy == doctest::Approx(0.5).epsilon(1e-12));  // healthy right, diseased wrong
    CHECK(r.included == 0);
    CHECK(r.excluded == 4);
    CHECK_FALSE(r.mean_dice.has_value());  // absent, not zero
    CHECK(r.total_mask_area == 0);
    for (const auto& c : r.cases) {
        CHECK(c.predicted == ClassLabel::healthy);
        CHECK(c.healthy_confidence == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-6));
    }
}

TEST_CASE("cohort with an always-diseased classifier at threshold zero") {
    const auto dir = scratch_dir() / "fixture_b";
    const auto manifest = write_fixture(dir);
    const auto s = build_linear_schedule(10, 1e-4, 0.02);
    UNetDenoiser<float> den(tiny_arch(), 2);
    const auto clf = constant_classifier(0.0f, 2.0f);

    // threshold 0 turns the whole 16-pixel frame on, so each included case
    // scores 2a/(a+16) against its truth area a
    const CohortResult r = evaluate_cohort(manifest, dir.string(), den, clf, fast_config(0.0), s);
    CHECK(r.accuracy == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.included == 2);
    CHECK(r.excluded == 2);
    REQUIRE(r.mean_dice.has_value());
    const double expect = 0.5 * (2.0 * 3 / (3 + 16) + 2.0 * 5 / (5 + 16));
    CHECK(*r.mean_dice == doctest::Approx(expect).epsilon(1e-12));
    CHECK(r.total_mask_area == 32);

    long included_seen = 0;
    for (const auto& c : r.cases) {
        if (!c.included) continue;
        ++included_seen;
        CHECK(c.label == ClassLabel::diseased);
        CHECK(c.correct);
        CHECK(c.mask_area == 16);
    }
    CHECK(included_seen == 2);
}

TEST_CASE("sweep matches single-cell evaluation and orders rows by the grid") {
    const auto dir = scratch_dir() / "fixture_c";
    const auto manifest = write_fixture(dir);
    const auto s = build_linear_schedule(10, 1e-4, 0.02);
    UNetDenoiser<float> den(tiny_arch(), 2);
    const auto clf = constant_classifier(0.0f, 2.0f);

    const SweepReport rep =
        sweep({0.0, 1.0}, {1}, {0.0, 0.5}, manifest, dir.string(), den, clf, s);
    REQUIRE(rep.rows.size() == 4);
    CHECK(rep.rows[0].scale == 0.0);
    CHECK(rep.rows[0].threshold == 0.0);
    CHECK(rep.rows[1].threshold == 0.5);
    CHECK(rep.rows[2].scale == 1.0);

    const CohortResult direct =
        evaluate_cohort(manifest, dir.string(), den, clf, fast_config(0.0), s);
    REQUIRE(rep.rows[0].error.empty());
    REQUIRE(rep.rows[0].mean_dice.has_value());
    CHECK(*rep.rows[0].mean_dice == *direct.mean_dice);  // bitwise: same code path
    CHECK(rep.rows[0].accuracy == direct.accuracy);
    CHECK(rep.rows[0].included == 2);
    CHECK(rep.rows[0].total_mask_area == direct.total_mask_area);

    CHECK_THROWS(sweep({}, {1}, {0.5}, manifest, dir.string(), den, clf, s));
    CHECK_THROWS(sweep({0.0}, {}, {0.5}, manifest, dir.string(), den, clf, s));
    CHECK_THROWS(sweep({0.0}, {1}, {}, manifest, dir.string(), den, clf, s));
}

TEST_CASE("sweep marks invalid cells instead of aborting the grid") {
    const auto dir = scratch_dir() / "fixture_d";
    const auto manifest = write_fixture(dir);
    const auto s = build_linear_schedule(10, 1e-4, 0.02);
    UNetDenoiser<float> den(tiny_arch(), 2);
    const auto clf = constant_classifier(0.0f, 2.0f);

    // noise level 99 exceeds t_max = 10 and must fail only its own rows
    const SweepReport rep = sweep({0.0}, {99, 1}, {0.35}, manifest, dir.string(), den, clf, s);
    REQUIRE(rep.rows.size() == 2);
    CHECK_FALSE(rep.rows[0].error.empty());
    CHECK(rep.rows[1].error.empty());

    const auto csv_path = (dir / "sweep.csv").string();
    write_sweep_csv(csv_path, rep);
    std::ifstream f(csv_path);
    std::string line;
    std::getline(f, line);
    CHECK(line == "S,N,threshold,dice,accuracy,included,excluded");
    std::getline(f, line);
    CHECK(line.find("error") != std::string::npos);
    std::getline(f, line);
    CHECK(line.find("error") == std::string::npos);
}

TEST_CASE("case records are written with one block per case") {
    const auto dir = scratch_dir() / "fixture_e";
    const auto manifest = write_fixture(dir);
    const auto s = build_linear_schedule(10, 1e-4, 0.02);
    UNetDenoiser<float> den(tiny_arch(), 2);
    const auto clf = constant_classifier(0.0f, 2.0f);
    const CohortResult r = evaluate_cohort(manifest, dir.string(), den, clf, fast_config(0.0), s);

    const auto path = (dir / "cases.txt").string();
    write_case_records(path, r);
    std::ifstream f(path);
    std::stringstream buf;
    buf << f.rdbuf();
    const std::string text = buf.str();
    CHECK(text.find("path=case_0.ptad") != std::string::npos);
    CHECK(text.find("path=case_3.ptad") != std::string::npos);
    CHECK(text.find("predicted=diseased") != std::string::npos);
    CHECK(text.find("dice=") != std::string::npos);
    CHECK(text.find("mask_area=16") != std::string::npos);
}
