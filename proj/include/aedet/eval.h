#pragma once

#include "aedet/data.h"
#include "aedet/model.h"

#include <map>
#include <vector>

namespace aedet {

struct MetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Greedy per-class NMS: score order (ties by earlier index), keep a
/// detection iff IoU with every kept same-class detection <= threshold.
std::vector<Detection> nms(const std::vector<Detection>& detections, double iou_threshold);

/// A detection with the image it came from, for dataset-level matching.
struct ScoredDetection {
    int image_id = 0;
    Detection det;
};
struct GroundTruth {
    int image_id = 0;
    BoxLabel box;
};

enum class ApInterp { Coco101, Voc11 };

/// Greedy matching in score order: a detection is TP iff its best-IoU
/// unmatched same-class same-image GT has IoU >= threshold (that GT is
/// then consumed). AP is the area under the interpolated PR curve.
/// Single-class semantics: boxes' class_id fields are compared.
double average_precision(std::vector<ScoredDetection> detections,
                         const std::vector<GroundTruth>& ground_truth, double iou_threshold,
                         ApInterp interp = ApInterp::Coco101);

struct EvalReport {
    double ap = 0;    // mean over IoU thresholds 0.50:0.05:0.95
    double ap50 = 0;
    double ap75 = 0;
    std::vector<std::pair<double, double>> threshold_curve;  // (iou threshold, AP)
    double ap50_small = 0, ap50_medium = 0, ap50_large = 0;  // GT area <1%, 1-9%, >9%
    std::map<int, std::vector<std::pair<double, double>>> pr_points;  // class -> (recall, precision) at IoU 0.5
};

struct EvalOptions {
    double conf_threshold = 0.05;
    double nms_threshold = 0.5;
    ApInterp interp = ApInterp::Coco101;
};

/// Decode + NMS over the whole dataset (alpha forced to 0; labels are
/// used only as ground truth), then APs at each threshold and the
/// size-bucket AP50 breakdown.
EvalReport evaluate(const Model& model, const Dataset& dataset, const EvalOptions& options = {});

/// Same aggregation for pre-computed per-image detections (used by the
/// oracle-detector tests).
EvalReport evaluate_detections(const std::vector<ScoredDetection>& detections,
                               const std::vector<GroundTruth>& ground_truth, int num_classes,
                               ApInterp interp = ApInterp::Coco101);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

}  // namespace aedet
