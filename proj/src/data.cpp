#include "aedet/data.h"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <random>

namespace aedet {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

struct ShapeInstance {
    int class_id;            // 0 rect, 1 disk, 2 triangle
    double cx, cy, side_w, side_h;  // nominal extent, normalized
    double px[3], py[3];     // triangle vertices, normalized
    float color[3];
};

// Pixel-center membership test, hard edges.
bool covers(const ShapeInstance& s, double x, double y) {
    switch (s.class_id) {
        case 0:
            return std::abs(x - s.cx) <= s.side_w / 2 && std::abs(y - s.cy) <= s.side_h / 2;
        case 1: {
            double dx = (x - s.cx) / (s.side_w / 2), dy = (y - s.cy) / (s.side_h / 2);
            return dx * dx + dy * dy <= 1.0;
        }
        case 2: {
            auto cross = [](double ax, double ay, double bx, double by) {
                return ax * by - ay * bx;
            };
            double d0 = cross(s.px[1] - s.px[0], s.py[1] - s.py[0], x - s.px[0], y - s.py[0]);
            double d1 = cross(s.px[2] - s.px[1], s.py[2] - s.py[1], x - s.px[1], y - s.py[1]);
            double d2 = cross(s.px[0] - s.px[2], s.py[0] - s.py[2], x - s.px[2], y - s.py[2]);
            bool neg = d0 < 0 || d1 < 0 || d2 < 0;
            bool pos = d0 > 0 || d1 > 0 || d2 > 0;
            return !(neg && pos);
        }
    }
    return false;
}

}  // namespace

Scene generate_scene(const SceneSpec& spec, std::uint64_t index) {
    spec.validate();
    const int S = spec.image_size;
    std::mt19937_64 rng(splitmix64(spec.seed) ^ splitmix64(index + 0x51ED270B));
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    Scene scene;
    scene.image = Tensor<float>(Shape{1, 3, S, S});
    float base[3] = {static_cast<float>(0.35 + 0.3 * uni(rng)),
                     static_cast<float>(0.35 + 0.3 * uni(rng)),
                     static_cast<float>(0.35 + 0.3 * uni(rng))};
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < S; ++i)
            for (int j = 0; j < S; ++j) {
                double noise = (uni(rng) * 2 - 1) * spec.background_noise;
                scene.image.at(0, c, i, j) =
                    std::clamp(base[c] + static_cast<float>(noise), 0.0f, 1.0f);
            }

    int target = spec.min_objects +
                 (spec.max_objects > spec.min_objects
                      ? static_cast<int>(rng() % (spec.max_objects - spec.min_objects + 1))
                      : 0);
    std::vector<BoxLabel> placed;
    for (int obj = 0; obj < target; ++obj) {
        bool ok = false;
        for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
            ShapeInstance sh;
            sh.class_id = static_cast<int>(rng() % kNumShapeClasses);
            bool small = uni(rng) < spec.small_mode_prob;
            double lo = small ? spec.small_min : spec.large_min;
            double hi = small ? spec.small_max : spec.large_max;
            sh.side_w = lo + (hi - lo) * uni(rng);
            sh.side_h = lo + (hi - lo) * uni(rng);
            sh.cx = uni(rng);
            sh.cy = uni(rng);
            if (sh.class_id == 2) {
                // vertices on the nominal box border, one per edge region
                double x0 = sh.cx - sh.side_w / 2, y0 = sh.cy - sh.side_h / 2;
                sh.px[0] = x0 + sh.side_w * uni(rng);
                sh.py[0] = y0;
                sh.px[1] = x0;
                sh.py[1] = y0 + sh.side_h * (0.4 + 0.6 * uni(rng));
                sh.px[2] = x0 + sh.side_w;
                sh.py[2] = y0 + sh.side_h * (0.4 + 0.6 * uni(rng));
            }
            for (int c = 0; c < 3; ++c) sh.color[c] = static_cast<float>(uni(rng));
            // force one channel to an extreme so the shape stands out from the background
            sh.color[static_cast<std::size_t>(rng() % 3)] = uni(rng) < 0.5 ? 0.02f : 0.98f;

            // render into a mask and take the tight pixel box
            int jmin = S, jmax = -1, imin = S, imax = -1;
            std::vector<std::uint8_t> mask(static_cast<std::size_t>(S) * S, 0);
            for (int i = 0; i < S; ++i)
                for (int j = 0; j < S; ++j) {
                    double x = (j + 0.5) / S, y = (i + 0.5) / S;
                    if (covers(sh, x, y)) {
                        mask[static_cast<std::size_t>(i) * S + j] = 1;
                        jmin = std::min(jmin, j);
                        jmax = std::max(jmax, j);
                        imin = std::min(imin, i);
                        imax = std::max(imax, i);
                    }
                }
            if (jmax < 0 || jmax - jmin < 1 || imax - imin < 1) continue;  // degenerate

            BoxLabel label;
            label.class_id = sh.class_id;
            label.cx = (jmin + jmax + 1) / (2.0 * S);
            label.cy = (imin + imax + 1) / (2.0 * S);
            label.w = static_cast<double>(jmax - jmin + 1) / S;
            label.h = static_cast<double>(imax - imin + 1) / S;

            bool overlaps = false;
            for (const BoxLabel& other : placed)
                if (iou(label, other) > spec.max_overlap_iou) {
                    overlaps = true;
                    break;
                }
            if (overlaps) continue;

            for (int i = imin; i <= imax; ++i)
                for (int j = jmin; j <= jmax; ++j)
                    if (mask[static_cast<std::size_t>(i) * S + j])
                        for (int c = 0; c < 3; ++c) scene.image.at(0, c, i, j) = sh.color[c];
            placed.push_back(label);
            ok = true;
        }
        if (!ok && spec.min_objects > 0 && static_cast<int>(placed.size()) < spec.min_objects)
            throw GenerationError("scene rejection loop exceeded 1000 attempts");
    }
    scene.labels = std::move(placed);
    return scene;
}

// --- sha256 -----------------------------------------------------------------

std::string sha256_bytes(const void* data, std::size_t len) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int dlen = 0;
    EVP_Digest(data, len, digest, &dlen, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < dlen; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xF];
    }
    return out;
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DatasetError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return sha256_bytes(bytes.data(), bytes.size());
}

// --- PPM --------------------------------------------------------------------

void write_ppm(const std::filesystem::path& path, const Tensor<float>& image) {
    const int S = image.shape.h;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DatasetError("cannot write " + path.string());
    os << "P6\n" << image.shape.w << " " << S << "\n255\n";
    for (int i = 0; i < S; ++i)
        for (int j = 0; j < image.shape.w; ++j)
            for (int c = 0; c < 3; ++c) {
                float v = std::clamp(image.at(0, c, i, j), 0.0f, 1.0f);
                os.put(static_cast<char>(static_cast<int>(std::lround(v * 255.0f))));
            }
    if (!os) throw DatasetError("write failed for " + path.string());
}

Tensor<float> read_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DatasetError("cannot open " + path.string());
    std::string magic;
    int w, h, maxval;
    is >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255) throw DatasetError("unsupported PPM in " + path.string());
    is.get();  // single whitespace after header
    Tensor<float> image(Shape{1, 3, h, w});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int c = 0; c < 3; ++c) {
                int byte = is.get();
                if (byte < 0) throw DatasetError("truncated PPM " + path.string());
                image.at(0, c, i, j) = static_cast<float>(byte) / 255.0f;
            }
    return image;
}

// --- manifest / dataset ------------------------------------------------------

namespace {

json spec_to_json(const SceneSpec& s) {
    return json{{"seed", s.seed},
                {"image_size", s.image_size},
                {"min_objects", s.min_objects},
                {"max_objects", s.max_objects},
                {"small_min", s.small_min},
                {"small_max", s.small_max},
                {"large_min", s.large_min},
                {"large_max", s.large_max},
                {"small_mode_prob", s.small_mode_prob},
                {"background_noise", s.background_noise},
                {"max_overlap_iou", s.max_overlap_iou}};
}

SceneSpec spec_from_json(const json& j) {
    SceneSpec s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.image_size = j.at("image_size").get<int>();
    s.min_objects = j.at("min_objects").get<int>();
    s.max_objects = j.at("max_objects").get<int>();
    s.small_min = j.at("small_min").get<double>();
    s.small_max = j.at("small_max").get<double>();
    s.large_min = j.at("large_min").get<double>();
    s.large_max = j.at("large_max").get<double>();
    s.small_mode_prob = j.value("small_mode_prob", 0.5);
    s.background_noise = j.at("background_noise").get<double>();
    s.max_overlap_iou = j.at("max_overlap_iou").get<double>();
    return s;
}

std::string image_name(std::uint64_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06llu.ppm", static_cast<unsigned long long>(index));
    return buf;
}

}  // namespace

DatasetManifest write_dataset(const SceneSpec& spec, std::uint64_t count,
                              const std::filesystem::path& dir) {
    spec.validate();
    std::filesystem::create_directories(dir);

    json labels = json::array();
    std::vector<std::pair<std::string, std::string>> files;  // name, sha256
    for (std::uint64_t i = 0; i < count; ++i) {
        Scene scene = generate_scene(spec, i);
        std::string name = image_name(i);
        write_ppm(dir / name, scene.image);
        files.emplace_back(name, sha256_file(dir / name));
        json per_image = json::array();
        for (const BoxLabel& b : scene.labels)
            per_image.push_back(json{{"class_id", b.class_id},
                                     {"cx", b.cx},
                                     {"cy", b.cy},
                                     {"w", b.w},
                                     {"h", b.h}});
        labels.push_back(per_image);
    }
    {
        std::ofstream os(dir / "labels.json");
        if (!os) throw DatasetError("cannot write " + (dir / "labels.json").string());
        os << labels.dump(0) << "\n";
    }
    files.emplace_back("labels.json", sha256_file(dir / "labels.json"));

    std::string concat;
    for (const auto& [name, hash] : files) concat += hash;
    DatasetManifest manifest{spec, count, sha256_bytes(concat.data(), concat.size())};

    json jm{{"spec", spec_to_json(spec)}, {"count", count}, {"checksum", manifest.checksum}};
    json jfiles = json::array();
    for (const auto& [name, hash] : files) jfiles.push_back(json{{"name", name}, {"sha256", hash}});
    jm["files"] = jfiles;
    std::ofstream os(dir / "manifest.json");
    if (!os) throw DatasetError("cannot write " + (dir / "manifest.json").string());
    os << jm.dump(2) << "\n";
    return manifest;
}

Dataset Dataset::open(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw DatasetError("missing manifest.json in " + dir.string());
    json jm = json::parse(is);
    Dataset d;
    d.spec_ = spec_from_json(jm.at("spec"));
    d.count_ = jm.at("count").get<std::uint64_t>();
    d.dir_ = dir;

    std::string concat;
    for (const auto& jf : jm.at("files")) {
        auto name = jf.at("name").get<std::string>();
        auto expected = jf.at("sha256").get<std::string>();
        std::string actual = sha256_file(dir / name);
        if (actual != expected)
            throw DatasetError("corrupt dataset: checksum mismatch in " + name);
        concat += expected;
    }
    if (sha256_bytes(concat.data(), concat.size()) != jm.at("checksum").get<std::string>())
        throw DatasetError("corrupt dataset: manifest checksum mismatch");

    std::ifstream ls(dir / "labels.json");
    if (!ls) throw DatasetError("missing labels.json in " + dir.string());
    json jl = json::parse(ls);
    for (const auto& per_image : jl) {
        std::vector<BoxLabel> boxes;
        for (const auto& jb : per_image) {
            BoxLabel b;
            b.class_id = jb.at("class_id").get<int>();
            b.cx = jb.at("cx").get<double>();
            b.cy = jb.at("cy").get<double>();
            b.w = jb.at("w").get<double>();
            b.h = jb.at("h").get<double>();
            boxes.push_back(b);
        }
        d.labels_.push_back(std::move(boxes));
    }
    if (d.labels_.size() != d.count_) throw DatasetError("labels.json length != manifest count");
    return d;
}

Dataset Dataset::in_memory(const SceneSpec& spec, std::uint64_t count) {
    Dataset d;
    d.spec_ = spec;
    d.count_ = count;
    d.in_memory_ = true;
    return d;
}

std::size_t Dataset::size() const { return count_; }

Scene Dataset::get(std::size_t index) const {
    if (index >= count_) throw DatasetError("dataset index out of range");
    if (in_memory_) return generate_scene(spec_, index);
    Scene s;
    s.image = read_ppm(dir_ / image_name(index));
    s.labels = labels_[index];
    return s;
}

}  // namespace aedet
