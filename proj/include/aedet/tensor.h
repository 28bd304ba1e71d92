#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace aedet {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Rank-4 shape (batch, channels, rows, cols).
struct Shape {
    int n = 1, c = 1, h = 1, w = 1;

    std::size_t size() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    bool operator==(const Shape&) const = default;
    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

/// Dense row-major rank-4 tensor. T is float for training, double for
/// the verification suites.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(s), v(s.size(), T(0)) {}
    Tensor(Shape s, T fill) : shape(s), v(s.size(), fill) {}

    static Tensor zeros(Shape s) { return Tensor(s); }
    static Tensor full(Shape s, T x) { return Tensor(s, x); }
    static Tensor scalar(T x) { return Tensor(Shape{1, 1, 1, 1}, x); }

    std::size_t size() const { return v.size(); }

    T& at(int n, int c, int h, int w) {
        return v[((static_cast<std::size_t>(n) * shape.c + c) * shape.h + h) * shape.w + w];
    }
    T at(int n, int c, int h, int w) const {
        return v[((static_cast<std::size_t>(n) * shape.c + c) * shape.h + h) * shape.w + w];
    }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    bool all_finite() const {
        for (T x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

inline void require_finite(const Tensor<float>& t, const char* where) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite values in ") + where);
}
inline void require_finite(const Tensor<double>& t, const char* where) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite values in ") + where);
}

// ---------------------------------------------------------------------------
// "AETN" tensor container: little-endian binary, shared by checkpoints.
// Layout: magic "AETN", u32 version, u32 entry count, then per tensor:
// u32 name length, name bytes, u32 ndim, u32 dims, raw float32 data.
// ---------------------------------------------------------------------------

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kTensorFormatVersion = 1;

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t x) {
    unsigned char b[4] = {static_cast<unsigned char>(x),
                          static_cast<unsigned char>(x >> 8),
                          static_cast<unsigned char>(x >> 16),
                          static_cast<unsigned char>(x >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw CheckpointError("truncated tensor file");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
           (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}
}  // namespace detail

using TensorMap = std::map<std::string, Tensor<float>>;

inline void write_tensors(std::ostream& os, const TensorMap& tensors) {
    os.write("AETN", 4);
    detail::put_u32(os, kTensorFormatVersion);
    detail::put_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        std::uint32_t dims[4] = {static_cast<std::uint32_t>(t.shape.n),
                                 static_cast<std::uint32_t>(t.shape.c),
                                 static_cast<std::uint32_t>(t.shape.h),
                                 static_cast<std::uint32_t>(t.shape.w)};
        detail::put_u32(os, 4);
        for (std::uint32_t d : dims) detail::put_u32(os, d);
        for (float x : t.v) {
            std::uint32_t bits;
            static_assert(sizeof(bits) == sizeof(x));
            std::memcpy(&bits, &x, 4);
            detail::put_u32(os, bits);
        }
    }
}

inline TensorMap read_tensors(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "AETN")
        throw CheckpointError("bad magic bytes, not an AETN tensor file");
    std::uint32_t version = detail::get_u32(is);
    if (version != kTensorFormatVersion)
        throw CheckpointError("unsupported tensor format version " + std::to_string(version));
    std::uint32_t count = detail::get_u32(is);
    TensorMap out;
    for (std::uint32_t e = 0; e < count; ++e) {
        std::uint32_t name_len = detail::get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw CheckpointError("truncated tensor file");
        std::uint32_t ndim = detail::get_u32(is);
        if (ndim != 4) throw CheckpointError("unexpected tensor rank " + std::to_string(ndim));
        Shape s;
        s.n = static_cast<int>(detail::get_u32(is));
        s.c = static_cast<int>(detail::get_u32(is));
        s.h = static_cast<int>(detail::get_u32(is));
        s.w = static_cast<int>(detail::get_u32(is));
        Tensor<float> t(s);
        for (float& x : t.v) {
            std::uint32_t bits = detail::get_u32(is);
            std::memcpy(&x, &bits, 4);
        }
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

inline void save_tensor_file(const std::string& path, const TensorMap& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open " + path + " for writing");
    write_tensors(os, tensors);
    if (!os) throw CheckpointError("write failed for " + path);
}

inline TensorMap load_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open " + path);
    return read_tensors(is);
}

}  // namespace aedet
