#pragma once

#include "aedet/boxes.h"
#include "aedet/tensor.h"

#include <filesystem>
#include <string>
#include <vector>

namespace aedet {

struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Scene recipe for the synthetic shape dataset. Rendering is a pure
/// function of (seed, index); shapes are hard-edged so the labels are
/// the exact tight boxes of the rendered pixels.
struct SceneSpec {
    std::uint64_t seed = 1;
    int image_size = 64;
    int min_objects = 1, max_objects = 2;
    // side-length ranges of the two size modes, fractions of the image
    double small_min = 0.08, small_max = 0.16;
    double large_min = 0.30, large_max = 0.55;
    double small_mode_prob = 0.35;
    double background_noise = 0.05;
    double max_overlap_iou = 0.5;

    void validate() const {
        if (image_size < 8) throw DatasetError("image_size too small");
        if (min_objects < 0 || max_objects < min_objects)
            throw DatasetError("bad objects-per-image range");
        if (small_min <= 0 || small_max < small_min || large_max < large_min)
            throw DatasetError("bad size-mode ranges");
        if (small_mode_prob < 0 || small_mode_prob > 1)
            throw DatasetError("small_mode_prob must be in [0,1]");
    }
};

struct Scene {
    Tensor<float> image;  // 1x3xSxS, values in [0,1]
    std::vector<BoxLabel> labels;
};

inline constexpr const char* kShapeClassNames[] = {"rectangle", "disk", "triangle"};
inline constexpr int kNumShapeClasses = 3;

Scene generate_scene(const SceneSpec& spec, std::uint64_t index);

// --- on-disk format ---------------------------------------------------------
// %06d.ppm (binary 8-bit P6), labels.json, manifest.json
// {spec, count, checksum, files:[{name, sha256}]}

struct DatasetManifest {
    SceneSpec spec;
    std::uint64_t count = 0;
    std::string checksum;  // sha256 over per-file hashes in index order
};

DatasetManifest write_dataset(const SceneSpec& spec, std::uint64_t count,
                              const std::filesystem::path& dir);

class Dataset {
  public:
    /// Validates the manifest checksum before returning.
    static Dataset open(const std::filesystem::path& dir);

    /// In-memory dataset (used by tests and the trainer's generate-on-the-fly path).
    static Dataset in_memory(const SceneSpec& spec, std::uint64_t count);

    std::size_t size() const;
    Scene get(std::size_t index) const;  // pixels in [0,1]
    const SceneSpec& spec() const { return spec_; }

  private:
    SceneSpec spec_;
    std::uint64_t count_ = 0;
    std::filesystem::path dir_;  // empty for in-memory
    std::vector<std::vector<BoxLabel>> labels_;
    bool in_memory_ = false;
};

// PPM P6 helpers (8-bit, quantized with round-to-nearest)
void write_ppm(const std::filesystem::path& path, const Tensor<float>& image);
Tensor<float> read_ppm(const std::filesystem::path& path);

std::string sha256_file(const std::filesystem::path& path);
std::string sha256_bytes(const void* data, std::size_t len);

}  // namespace aedet
