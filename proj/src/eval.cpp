#include "aedet/eval.h"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <numeric>

namespace aedet {

using nlohmann::json;

std::vector<Detection> nms(const std::vector<Detection>& detections, double iou_threshold) {
    if (iou_threshold <= 0 || iou_threshold > 1)
        throw MetricError("nms threshold must be in (0,1]");
    std::vector<std::size_t> order(detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return detections[a].score > detections[b].score;
    });
    std::vector<Detection> kept;
    for (std::size_t i : order) {
        const Detection& d = detections[i];
        bool suppressed = false;
        for (const Detection& k : kept) {
            if (k.class_id != d.class_id) continue;
            if (iou(k.box, d.box) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

namespace {

double pr_curve_area(const std::vector<std::uint8_t>& tp_flags, std::size_t num_gt,
                     ApInterp interp) {
    if (num_gt == 0) return tp_flags.empty() ? 1.0 : 0.0;
    std::vector<double> precision, recall;
    std::size_t tp = 0;
    for (std::size_t i = 0; i < tp_flags.size(); ++i) {
        tp += tp_flags[i];
        precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
    }
    // precision envelope: running max from the right
    for (std::size_t i = precision.size(); i-- > 1;)
        precision[i - 1] = std::max(precision[i - 1], precision[i]);

    auto precision_at = [&](double r) {
        for (std::size_t i = 0; i < recall.size(); ++i)
            if (recall[i] >= r) return precision[i];
        return 0.0;
    };
    if (interp == ApInterp::Voc11) {
        double s = 0;
        for (int k = 0; k <= 10; ++k) s += precision_at(k / 10.0);
        return s / 11.0;
    }
    double s = 0;
    for (int k = 0; k <= 100; ++k) s += precision_at(k / 100.0);
    return s / 101.0;
}

struct Matching {
    std::vector<std::uint8_t> tp_flags;  // in score order
    std::vector<int> matched_gt;         // index into GT list, -1 for FP
};

Matching greedy_match(std::vector<ScoredDetection>& detections,
                      const std::vector<GroundTruth>& ground_truth, double iou_threshold) {
    std::stable_sort(detections.begin(), detections.end(),
                     [](const ScoredDetection& a, const ScoredDetection& b) {
                         return a.det.score > b.det.score;
                     });
    std::vector<std::uint8_t> gt_used(ground_truth.size(), 0);
    Matching m;
    for (const ScoredDetection& sd : detections) {
        int best = -1;
        double best_iou = -1;
        for (std::size_t g = 0; g < ground_truth.size(); ++g) {
            if (gt_used[g]) continue;
            if (ground_truth[g].image_id != sd.image_id) continue;
            if (ground_truth[g].box.class_id != sd.det.class_id) continue;
            double v = iou(sd.det.box, ground_truth[g].box);
            if (v > best_iou) {
                best_iou = v;
                best = static_cast<int>(g);
            }
        }
        bool tp = best >= 0 && best_iou >= iou_threshold;
        if (tp) gt_used[best] = 1;
        m.tp_flags.push_back(tp ? 1 : 0);
        m.matched_gt.push_back(tp ? best : -1);
    }
    return m;
}

}  // namespace

double average_precision(std::vector<ScoredDetection> detections,
                         const std::vector<GroundTruth>& ground_truth, double iou_threshold,
                         ApInterp interp) {
    Matching m = greedy_match(detections, ground_truth, iou_threshold);
    return pr_curve_area(m.tp_flags, ground_truth.size(), interp);
}

EvalReport evaluate_detections(const std::vector<ScoredDetection>& detections,
                               const std::vector<GroundTruth>& ground_truth, int num_classes,
                               ApInterp interp) {
    EvalReport report;
    auto class_mean_ap = [&](double threshold) {
        double sum = 0;
        int counted = 0;
        for (int cls = 0; cls < num_classes; ++cls) {
            std::vector<ScoredDetection> dets;
            std::vector<GroundTruth> gts;
            for (const auto& d : detections)
                if (d.det.class_id == cls) dets.push_back(d);
            for (const auto& g : ground_truth)
                if (g.box.class_id == cls) gts.push_back(g);
            if (gts.empty() && dets.empty()) continue;  // AP 1 by convention, excluded
            sum += average_precision(dets, gts, threshold, interp);
            ++counted;
        }
        return counted ? sum / counted : 1.0;
    };

    for (int k = 0; k < 10; ++k) {
        double thr = 0.5 + 0.05 * k;
        double ap = class_mean_ap(thr);
        report.threshold_curve.emplace_back(thr, ap);
        report.ap += ap / 10.0;
        if (k == 0) report.ap50 = ap;
        if (k == 5) report.ap75 = ap;
    }

    // Size buckets at IoU 0.5: GT restricted to the bucket; detections
    // that match an out-of-bucket GT are ignored rather than counted as FP.
    auto bucket_of = [](double area) { return area < 0.01 ? 0 : (area <= 0.09 ? 1 : 2); };
    double bucket_ap[3];
    for (int bucket = 0; bucket < 3; ++bucket) {
        double sum = 0;
        int counted = 0;
        for (int cls = 0; cls < num_classes; ++cls) {
            std::vector<ScoredDetection> dets;
            std::vector<GroundTruth> all_gts, bucket_gts;
            for (const auto& g : ground_truth)
                if (g.box.class_id == cls) {
                    all_gts.push_back(g);
                    if (bucket_of(g.box.area()) == bucket) bucket_gts.push_back(g);
                }
            for (const auto& d : detections)
                if (d.det.class_id == cls) dets.push_back(d);
            if (bucket_gts.empty()) continue;
            // match against all GT, drop detections assigned outside the bucket
            std::vector<ScoredDetection> sorted = dets;
            Matching m = greedy_match(sorted, all_gts, 0.5);
            std::vector<std::uint8_t> flags;
            std::size_t in_bucket_tp_gt = 0;
            for (std::size_t i = 0; i < sorted.size(); ++i) {
                if (m.matched_gt[i] >= 0) {
                    if (bucket_of(all_gts[m.matched_gt[i]].box.area()) != bucket)
                        continue;  // ignored
                    flags.push_back(1);
                    ++in_bucket_tp_gt;
                } else {
                    flags.push_back(0);
                }
            }
            (void)in_bucket_tp_gt;
            sum += pr_curve_area(flags, bucket_gts.size(), interp);
            ++counted;
        }
        bucket_ap[bucket] = counted ? sum / counted : 0.0;
    }
    report.ap50_small = bucket_ap[0];
    report.ap50_medium = bucket_ap[1];
    report.ap50_large = bucket_ap[2];

    // PR points per class at IoU 0.5
    for (int cls = 0; cls < num_classes; ++cls) {
        std::vector<ScoredDetection> dets;
        std::vector<GroundTruth> gts;
        for (const auto& d : detections)
            if (d.det.class_id == cls) dets.push_back(d);
        for (const auto& g : ground_truth)
            if (g.box.class_id == cls) gts.push_back(g);
        if (gts.empty()) continue;
        Matching m = greedy_match(dets, gts, 0.5);
        std::size_t tp = 0;
        std::vector<std::pair<double, double>> points;
        for (std::size_t i = 0; i < m.tp_flags.size(); ++i) {
            tp += m.tp_flags[i];
            points.emplace_back(static_cast<double>(tp) / gts.size(),
                                static_cast<double>(tp) / (i + 1));
        }
        report.pr_points[cls] = std::move(points);
    }
    return report;
}

EvalReport evaluate(const Model& model, const Dataset& dataset, const EvalOptions& options) {
    if (dataset.size() == 0) throw MetricError("evaluate: empty dataset");
    std::vector<ScoredDetection> detections;
    std::vector<GroundTruth> ground_truth;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        Scene scene = dataset.get(i);
        Tape<float> tape;
        auto images = make_var<float>(scene.image, false);
        // alpha forced to 0: inference path, labels never enter the net
        double t_off = model.ae ? model.ae->schedule.max_iteration : 0.0;
        auto raw = model.forward(tape, images, nullptr, t_off);
        auto dets = decode_predictions(raw->val, model.config, options.conf_threshold);
        for (const Detection& d : nms(dets, options.nms_threshold))
            detections.push_back({static_cast<int>(i), d});
        for (const BoxLabel& b : scene.labels)
            ground_truth.push_back({static_cast<int>(i), b});
    }
    return evaluate_detections(detections, ground_truth, model.config.num_classes,
                               options.interp);
}

std::string report_to_json(const EvalReport& r) {
    json j{{"ap", r.ap},
           {"ap50", r.ap50},
           {"ap75", r.ap75},
           {"ap50_small", r.ap50_small},
           {"ap50_medium", r.ap50_medium},
           {"ap50_large", r.ap50_large}};
    json curve = json::array();
    for (auto [thr, ap] : r.threshold_curve) curve.push_back(json{{"threshold", thr}, {"ap", ap}});
    j["threshold_curve"] = curve;
    json pr = json::object();
    for (const auto& [cls, points] : r.pr_points) {
        json arr = json::array();
        for (auto [rec, prec] : points) arr.push_back(json{{"recall", rec}, {"precision", prec}});
        pr[std::to_string(cls)] = arr;
    }
    j["pr_points"] = pr;
    return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
    json j = json::parse(text);
    EvalReport r;
    r.ap = j.at("ap").get<double>();
    r.ap50 = j.at("ap50").get<double>();
    r.ap75 = j.at("ap75").get<double>();
    r.ap50_small = j.at("ap50_small").get<double>();
    r.ap50_medium = j.at("ap50_medium").get<double>();
    r.ap50_large = j.at("ap50_large").get<double>();
    for (const auto& p : j.at("threshold_curve"))
        r.threshold_curve.emplace_back(p.at("threshold").get<double>(), p.at("ap").get<double>());
    return r;
}

}  // namespace aedet
