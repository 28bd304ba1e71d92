#pragma once

#include "aedet/autodiff.h"
#include "aedet/boxes.h"

#include <string>
#include <vector>

// The assisted-excitation layer: a training-only addition of a
// ground-truth-masked excitation field to a mid-network activation
// tensor, annealed to zero over the course of training. With the
// annealing factor at zero the layer is the identity and never looks at
// labels, so the inference network is unchanged.

namespace aedet {

enum class ExcitationStrategy {
    PerChannelExcite,      // e = (g/d) * a, per channel
    OutOfBoxSuppress,      // e = -(1-g) * a
    ChannelAverageExcite,  // e = (g/d) * sum_c a, identical across channels
};

inline const char* strategy_name(ExcitationStrategy s) {
    switch (s) {
        case ExcitationStrategy::PerChannelExcite: return "per_channel_excite";
        case ExcitationStrategy::OutOfBoxSuppress: return "out_of_box_suppress";
        case ExcitationStrategy::ChannelAverageExcite: return "channel_average_excite";
    }
    return "?";
}

inline ExcitationStrategy parse_strategy(const std::string& s) {
    if (s == "per_channel_excite" || s == "eq2") return ExcitationStrategy::PerChannelExcite;
    if (s == "out_of_box_suppress" || s == "eq3") return ExcitationStrategy::OutOfBoxSuppress;
    if (s == "channel_average_excite" || s == "eq4")
        return ExcitationStrategy::ChannelAverageExcite;
    throw UsageError("unknown excitation strategy: " + s);
}

struct ExcitationSchedule {
    int max_iteration = 1;              // annealing horizon T_max
    bool per_iteration = false;         // default: t counts epochs

    /// Cosine annealing 0.5*(1+cos(pi*t/T_max)), clamped to exactly 0
    /// for t >= T_max.
    double alpha(double t) const {
        if (t >= max_iteration) return 0.0;
        if (t <= 0) return 1.0;
        return 0.5 * (1.0 + std::cos(M_PI * t / max_iteration));
    }
};

struct ExcitationConfig {
    ExcitationStrategy strategy = ExcitationStrategy::ChannelAverageExcite;
    int stage = 4;                      // AE inserted after this backbone stage (1-based)
    ExcitationSchedule schedule;
    bool detach_excitation = false;     // ablation: block gradients through e
};

/// Binary grid marking cells overlapped by any ground-truth box.
struct BoxMap {
    int rows = 0, cols = 0;
    std::vector<std::uint8_t> grid;  // row-major, values in {0,1}

    std::uint8_t at(int i, int j) const { return grid[static_cast<std::size_t>(i) * cols + j]; }
};

/// Cell (i,j) is set iff the open-interior intersection between the
/// cell extent and some box is strictly positive; boundary touching
/// does not count.
inline BoxMap rasterize_box_map(const std::vector<BoxLabel>& boxes, int grid_rows,
                                int grid_cols) {
    if (grid_rows < 1 || grid_cols < 1) throw UsageError("rasterize_box_map: empty grid");
    BoxMap m{grid_rows, grid_cols, std::vector<std::uint8_t>(
                                       static_cast<std::size_t>(grid_rows) * grid_cols, 0)};
    for (const BoxLabel& b : boxes) {
        b.validate();
        // cell j spans [j/cols, (j+1)/cols) horizontally
        double x0 = std::max(b.x0(), 0.0), x1 = std::min(b.x1(), 1.0);
        double y0 = std::max(b.y0(), 0.0), y1 = std::min(b.y1(), 1.0);
        int j0 = std::max(0, static_cast<int>(std::floor(x0 * grid_cols)));
        int j1 = std::min(grid_cols - 1, static_cast<int>(std::ceil(x1 * grid_cols)) - 1);
        int i0 = std::max(0, static_cast<int>(std::floor(y0 * grid_rows)));
        int i1 = std::min(grid_rows - 1, static_cast<int>(std::ceil(y1 * grid_rows)) - 1);
        for (int i = i0; i <= i1; ++i)
            for (int j = j0; j <= j1; ++j) {
                double cx0 = static_cast<double>(j) / grid_cols;
                double cx1 = static_cast<double>(j + 1) / grid_cols;
                double cy0 = static_cast<double>(i) / grid_rows;
                double cy1 = static_cast<double>(i + 1) / grid_rows;
                double iw = std::min(x1, cx1) - std::max(x0, cx0);
                double ih = std::min(y1, cy1) - std::max(y0, cy0);
                if (iw > 0 && ih > 0) m.grid[static_cast<std::size_t>(i) * grid_cols + j] = 1;
            }
    }
    return m;
}

inline double alpha_schedule(double t, int max_iteration) {
    if (max_iteration <= 0) throw UsageError("alpha_schedule: max_iteration must be positive");
    return ExcitationSchedule{max_iteration}.alpha(t);
}

namespace detail {
/// Box maps for a batch as an n×1×h×w mask tensor of 0/1 values.
template <typename T>
Tensor<T> batch_mask(const std::vector<std::vector<BoxLabel>>& boxes_per_image, int n, int h,
                     int w) {
    Tensor<T> mask(Shape{n, 1, h, w});
    for (int b = 0; b < n; ++b) {
        BoxMap m = rasterize_box_map(boxes_per_image[b], h, w);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) mask.at(b, 0, i, j) = static_cast<T>(m.at(i, j));
    }
    return mask;
}
}  // namespace detail

/// Excitation field e for a batch activation and per-image 0/1 mask
/// (n×1×h×w). Built from tape primitives so gradients flow through e.
template <typename T>
VarPtr<T> compute_excitation(Tape<T>& tape, const VarPtr<T>& a, const Tensor<T>& g,
                             ExcitationStrategy strategy) {
    const Shape& s = a->val.shape;
    if (g.shape.h != s.h || g.shape.w != s.w || g.shape.n != s.n)
        throw ShapeError("compute_excitation: mask " + g.shape.str() +
                         " does not match activation " + s.str());
    const T inv_d = T(1) / T(s.c);
    switch (strategy) {
        case ExcitationStrategy::PerChannelExcite:
            return scalar_mul(tape, mask_mul(tape, a, g), inv_d);
        case ExcitationStrategy::OutOfBoxSuppress: {
            Tensor<T> inv(g.shape);
            for (std::size_t i = 0; i < inv.size(); ++i) inv.v[i] = T(1) - g.v[i];
            return scalar_mul(tape, mask_mul(tape, a, inv), T(-1));
        }
        case ExcitationStrategy::ChannelAverageExcite:
            // (g/d)*sum_c a == g * mean_c a
            return mask_mul(tape, broadcast_channels(tape, channel_mean(tape, a), s.c), g);
    }
    throw UsageError("unknown strategy");
}

/// The AE layer: a + alpha(t) * e. With alpha == 0 the input var is
/// returned untouched and labels are never read.
template <typename T>
VarPtr<T> ae_forward(Tape<T>& tape, const VarPtr<T>& a,
                     const std::vector<std::vector<BoxLabel>>* boxes_per_image,
                     const ExcitationConfig& config, double t) {
    double alpha = config.schedule.alpha(t);
    if (alpha == 0.0) return a;
    if (boxes_per_image == nullptr)
        throw UsageError("ae_forward: labels required while excitation is active");
    const Shape& s = a->val.shape;
    if (static_cast<int>(boxes_per_image->size()) != s.n)
        throw UsageError("ae_forward: label batch size does not match activations");
    Tensor<T> g = detail::batch_mask<T>(*boxes_per_image, s.n, s.h, s.w);
    VarPtr<T> src = config.detach_excitation ? detach(a) : a;
    VarPtr<T> e = compute_excitation(tape, src, g, config.strategy);
    return elementwise_add(tape, a, scalar_mul(tape, e, static_cast<T>(alpha)));
}

}  // namespace aedet
