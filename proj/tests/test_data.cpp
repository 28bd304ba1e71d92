#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "aedet/data.h"

#include <filesystem>
#include <fstream>

using namespace aedet;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("aedet_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Pixels whose dominant deviation from the noisy background marks them as
// part of a shape. Shapes force one channel to an extreme (0.02 or 0.98)
// while background noise stays within [0, background_noise] of 0.5.
bool pixel_on_shape(const Tensor<float>& img, int i, int j) {
    for (int c = 0; c < 3; ++c) {
        float v = img.at(0, c, i, j);
        if (v < 0.25f || v > 0.75f) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("scene generation is a pure function of seed and index") {
    SceneSpec spec;
    spec.seed = 99;
    for (std::uint64_t idx : {0ull, 7ull, 123ull}) {
        Scene a = generate_scene(spec, idx);
        Scene b = generate_scene(spec, idx);
        CHECK(a.image.v == b.image.v);
        REQUIRE(a.labels.size() == b.labels.size());
        for (std::size_t k = 0; k < a.labels.size(); ++k) {
            CHECK(a.labels[k].class_id == b.labels[k].class_id);
            CHECK(a.labels[k].cx == b.labels[k].cx);
            CHECK(a.labels[k].w == b.labels[k].w);
        }
    }
    // different seeds diverge
    SceneSpec other = spec;
    other.seed = 100;
    CHECK(generate_scene(spec, 0).image.v != generate_scene(other, 0).image.v);
    // index is not just an offset into one stream
    CHECK(generate_scene(spec, 1).image.v != generate_scene(other, 0).image.v);
}

TEST_CASE("scene invariants over 200 scenes") {
    SceneSpec spec;
    spec.seed = 5;
    int with_multiple = 0;
    for (std::uint64_t idx = 0; idx < 200; ++idx) {
        Scene s = generate_scene(spec, idx);
        CHECK(s.image.shape == Shape{1, 3, 64, 64});
        for (float v : s.image.v) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        REQUIRE(s.labels.size() >= 1);
        REQUIRE(s.labels.size() <= 4);
        if (s.labels.size() > 1) ++with_multiple;
        for (const BoxLabel& b : s.labels) {
            b.validate();
            CHECK(b.class_id >= 0);
            CHECK(b.class_id < kNumShapeClasses);
            CHECK(b.x0() >= 0.0);
            CHECK(b.x1() <= 1.0);
            CHECK(b.y0() >= 0.0);
            CHECK(b.y1() <= 1.0);
        }
        // pairwise overlap cap
        for (std::size_t i = 0; i < s.labels.size(); ++i)
            for (std::size_t j = i + 1; j < s.labels.size(); ++j)
                CHECK(iou(s.labels[i], s.labels[j]) <= spec.max_overlap_iou + 1e-12);
    }
    CHECK(with_multiple > 20);
}

TEST_CASE("labels are tight boxes of the rendered shape pixels") {
    SceneSpec spec;
    spec.seed = 31;
    spec.min_objects = 1;
    spec.max_objects = 1;  // a single shape keeps the pixel test unambiguous
    spec.background_noise = 0.0;
    const int S = spec.image_size;
    for (std::uint64_t idx = 0; idx < 50; ++idx) {
        Scene s = generate_scene(spec, idx);
        REQUIRE(s.labels.size() == 1);
        const BoxLabel& b = s.labels[0];
        int pi0 = S, pi1 = -1, pj0 = S, pj1 = -1;
        for (int i = 0; i < S; ++i)
            for (int j = 0; j < S; ++j)
                if (pixel_on_shape(s.image, i, j)) {
                    pi0 = std::min(pi0, i);
                    pi1 = std::max(pi1, i);
                    pj0 = std::min(pj0, j);
                    pj1 = std::max(pj1, j);
                }
        REQUIRE(pi1 >= 0);
        // tight box in normalized units covers exactly those pixels
        CHECK(b.x0() == doctest::Approx(static_cast<double>(pj0) / S).epsilon(1e-9));
        CHECK(b.x1() == doctest::Approx(static_cast<double>(pj1 + 1) / S).epsilon(1e-9));
        CHECK(b.y0() == doctest::Approx(static_cast<double>(pi0) / S).epsilon(1e-9));
        CHECK(b.y1() == doctest::Approx(static_cast<double>(pi1 + 1) / S).epsilon(1e-9));
    }
}

TEST_CASE("size modes both appear and each class is common") {
    SceneSpec spec;
    spec.seed = 77;
    int small = 0, large = 0;
    int per_class[kNumShapeClasses] = {0, 0, 0};
    int total = 0;
    for (std::uint64_t idx = 0; idx < 500; ++idx) {
        Scene s = generate_scene(spec, idx);
        for (const BoxLabel& b : s.labels) {
            double frac = b.area();
            if (frac < 0.01)
                ++small;
            else if (frac > 0.09)
                ++large;
            ++per_class[b.class_id];
            ++total;
        }
    }
    // both size buckets are well represented (acceptance needs >= 10% each)
    CHECK(small > total / 10);
    CHECK(large > total / 10);
    for (int c = 0; c < kNumShapeClasses; ++c) CHECK(per_class[c] > total / 10);
}

TEST_CASE("ppm round trip is lossless after the first quantization") {
    fs::path dir = temp_dir("ppm");
    SceneSpec spec;
    spec.seed = 3;
    Scene s = generate_scene(spec, 0);
    write_ppm(dir / "a.ppm", s.image);
    Tensor<float> back = read_ppm(dir / "a.ppm");
    CHECK(back.shape == s.image.shape);
    // one quantization step only: re-writing reproduces the same bytes
    write_ppm(dir / "b.ppm", back);
    CHECK(sha256_file(dir / "a.ppm") == sha256_file(dir / "b.ppm"));
    for (std::size_t i = 0; i < back.size(); ++i)
        CHECK(std::abs(back.v[i] - s.image.v[i]) <= 0.5f / 255.0f + 1e-6f);
    fs::remove_all(dir);
}

TEST_CASE("dataset write, open, and checksum validation") {
    fs::path dir = temp_dir("ds");
    SceneSpec spec;
    spec.seed = 11;
    DatasetManifest m = write_dataset(spec, 12, dir);
    CHECK(m.count == 12);
    CHECK(m.checksum.size() == 64);

    Dataset ds = Dataset::open(dir);
    REQUIRE(ds.size() == 12);

    SUBCASE("on-disk scenes match in-memory generation up to quantization") {
        Dataset mem = Dataset::in_memory(spec, 12);
        for (std::size_t i = 0; i < 12; ++i) {
            Scene a = ds.get(i), b = mem.get(i);
            REQUIRE(a.labels.size() == b.labels.size());
            for (std::size_t k = 0; k < a.labels.size(); ++k) {
                CHECK(a.labels[k].class_id == b.labels[k].class_id);
                CHECK(a.labels[k].cx == doctest::Approx(b.labels[k].cx));
                CHECK(a.labels[k].w == doctest::Approx(b.labels[k].w));
            }
            for (std::size_t p = 0; p < a.image.size(); ++p)
                CHECK(std::abs(a.image.v[p] - b.image.v[p]) <= 0.5f / 255.0f + 1e-6f);
        }
    }
    SUBCASE("regenerating produces identical bytes") {
        fs::path dir2 = temp_dir("ds2");
        DatasetManifest m2 = write_dataset(spec, 12, dir2);
        CHECK(m2.checksum == m.checksum);
        fs::remove_all(dir2);
    }
    SUBCASE("a tampered image is reported by name") {
        fs::path victim = dir / "000003.ppm";
        REQUIRE(fs::exists(victim));
        std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(40);
        char c;
        f.seekg(40);
        f.get(c);
        f.seekp(40);
        f.put(static_cast<char>(c ^ 0x7f));
        f.close();
        try {
            Dataset::open(dir);
            FAIL("tampered dataset accepted");
        } catch (const DatasetError& e) {
            CHECK(std::string(e.what()).find("000003") != std::string::npos);
        }
    }
    SUBCASE("a missing manifest is an error") {
        fs::remove(dir / "manifest.json");
        CHECK_THROWS_AS(Dataset::open(dir), DatasetError);
    }
    fs::remove_all(dir);
}

TEST_CASE("degenerate requests") {
    fs::path dir = temp_dir("edge");
    SceneSpec spec;
    SUBCASE("count zero round trips") {
        write_dataset(spec, 0, dir);
        Dataset ds = Dataset::open(dir);
        CHECK(ds.size() == 0);
    }
    SUBCASE("invalid spec rejected") {
        spec.min_objects = 5;
        spec.max_objects = 2;
        CHECK_THROWS_AS(write_dataset(spec, 1, dir), DatasetError);
    }
    SUBCASE("overcrowded spec fails loudly rather than spinning") {
        SceneSpec cramped;
        cramped.min_objects = 3;
        cramped.max_objects = 3;
        cramped.large_min = 0.9;
        cramped.large_max = 0.95;
        cramped.small_min = 0.9;
        cramped.small_max = 0.95;
        cramped.max_overlap_iou = 0.0;
        CHECK_THROWS_AS(
            [&] {
                for (std::uint64_t i = 0; i < 20; ++i) generate_scene(cramped, i);
            }(),
            GenerationError);
    }
    fs::remove_all(dir);
}
