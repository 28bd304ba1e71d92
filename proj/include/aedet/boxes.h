#pragma once

#include <algorithm>
#include <stdexcept>

namespace aedet {

struct LabelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Ground-truth box in image-normalized center/size units.
struct BoxLabel {
    int class_id = 0;
    double cx = 0, cy = 0, w = 0, h = 0;

    double area() const { return w * h; }
    double x0() const { return cx - w / 2; }
    double y0() const { return cy - h / 2; }
    double x1() const { return cx + w / 2; }
    double y1() const { return cy + h / 2; }

    void validate() const {
        if (w <= 0 || h <= 0) throw LabelError("degenerate box: non-positive extent");
        if (cx < 0 || cx > 1 || cy < 0 || cy > 1)
            throw LabelError("box center outside the image");
        if (x1() <= 0 || x0() >= 1 || y1() <= 0 || y0() >= 1)
            throw LabelError("box does not intersect the image");
    }
};

inline double iou(const BoxLabel& a, const BoxLabel& b) {
    if (a.w <= 0 || a.h <= 0 || b.w <= 0 || b.h <= 0)
        throw LabelError("iou of a degenerate box");
    double ix = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
    double iy = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
    double inter = ix * iy;
    double uni = a.area() + b.area() - inter;
    return inter / uni;
}

}  // namespace aedet
