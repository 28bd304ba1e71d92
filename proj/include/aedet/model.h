#pragma once

#include "aedet/autodiff.h"
#include "aedet/boxes.h"
#include "aedet/excitation.h"

#include <iostream>
#include <optional>
#include <random>

namespace aedet {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DetectorConfig {
    int input_size = 64;                              // square input, pixels
    std::vector<int> stage_widths = {16, 32, 64, 128};
    std::vector<std::pair<double, double>> anchors = {{1.0, 1.0}, {2.5, 2.5}};  // cell units
    int num_classes = 3;

    int stage_count() const { return static_cast<int>(stage_widths.size()); }
    int head_stride() const { return 1 << stage_count(); }
    int grid() const { return input_size / head_stride(); }
    int head_channels() const {
        return static_cast<int>(anchors.size()) * (5 + num_classes);
    }

    void validate() const {
        if (stage_widths.empty()) throw ConfigError("detector needs at least one stage");
        if (anchors.empty()) throw ConfigError("detector needs at least one anchor");
        for (auto [w, h] : anchors)
            if (w <= 0 || h <= 0) throw ConfigError("anchor priors must be positive");
        if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
        if (input_size % head_stride() != 0)
            throw ConfigError("input_size must be divisible by the head stride " +
                              std::to_string(head_stride()));
        if (grid() < 1) throw ConfigError("input too small for the stage count");
    }
};

struct Detection {
    int class_id = 0;
    double score = 0;
    BoxLabel box;  // normalized image units
};

/// Per-(cell,anchor) regression/objectness/class targets.
struct GridTarget {
    int grid = 0;
    int anchors = 0;
    std::vector<std::uint8_t> responsible;  // [cell*anchors + a]
    std::vector<float> tx, ty;              // offset in [0,1) within cell
    std::vector<float> tw, th;              // log ratio to anchor prior
    std::vector<int> cls;

    std::size_t slots() const { return responsible.size(); }
    std::size_t slot(int ci, int cj, int a) const {
        return (static_cast<std::size_t>(ci) * grid + cj) * anchors + a;
    }
};

/// Assign each box to the cell containing its center and the
/// highest-shape-IoU anchor (ties to the lower index). On a slot
/// conflict the larger-area box wins and a warning is emitted.
inline GridTarget encode_targets(const std::vector<BoxLabel>& boxes,
                                 const DetectorConfig& config,
                                 std::ostream* warn = nullptr) {
    const int G = config.grid();
    const int A = static_cast<int>(config.anchors.size());
    GridTarget t;
    t.grid = G;
    t.anchors = A;
    std::size_t n = static_cast<std::size_t>(G) * G * A;
    t.responsible.assign(n, 0);
    t.tx.assign(n, 0);
    t.ty.assign(n, 0);
    t.tw.assign(n, 0);
    t.th.assign(n, 0);
    t.cls.assign(n, 0);
    std::vector<double> slot_area(n, 0.0);

    for (BoxLabel b : boxes) {
        b.validate();
        // clip to image, keep center formulation
        double x0 = std::max(0.0, b.x0()), x1 = std::min(1.0, b.x1());
        double y0 = std::max(0.0, b.y0()), y1 = std::min(1.0, b.y1());
        b.cx = (x0 + x1) / 2;
        b.cy = (y0 + y1) / 2;
        b.w = x1 - x0;
        b.h = y1 - y0;

        int cj = std::min(G - 1, static_cast<int>(b.cx * G));
        int ci = std::min(G - 1, static_cast<int>(b.cy * G));
        double bw = b.w * G, bh = b.h * G;  // cell units
        int best_a = 0;
        double best_iou = -1;
        for (int a = 0; a < A; ++a) {
            auto [aw, ah] = config.anchors[a];
            double iw = std::min(bw, aw), ih = std::min(bh, ah);
            double inter = iw * ih;
            double shape_iou = inter / (bw * bh + aw * ah - inter);
            if (shape_iou > best_iou) {
                best_iou = shape_iou;
                best_a = a;
            }
        }
        std::size_t s = t.slot(ci, cj, best_a);
        if (t.responsible[s]) {
            if (warn)
                *warn << "warning: duplicate assignment at cell (" << ci << "," << cj
                      << ") anchor " << best_a << ", keeping larger box\n";
            if (b.area() <= slot_area[s]) continue;
        }
        auto [aw, ah] = config.anchors[best_a];
        t.responsible[s] = 1;
        slot_area[s] = b.area();
        t.tx[s] = static_cast<float>(b.cx * G - cj);
        t.ty[s] = static_cast<float>(b.cy * G - ci);
        t.tw[s] = static_cast<float>(std::log(bw / aw));
        t.th[s] = static_cast<float>(std::log(bh / ah));
        t.cls[s] = b.class_id;
    }
    return t;
}

/// Head layout: channel block a*(5+C) holds [tx,ty,tw,th,to,classes...].
inline std::vector<Detection> decode_predictions(const Tensor<float>& raw,
                                                 const DetectorConfig& config,
                                                 double conf_threshold, int batch_item = 0) {
    const int G = config.grid();
    const int A = static_cast<int>(config.anchors.size());
    const int C = config.num_classes;
    std::vector<Detection> out;
    auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    for (int ci = 0; ci < G; ++ci)
        for (int cj = 0; cj < G; ++cj)
            for (int a = 0; a < A; ++a) {
                int base = a * (5 + C);
                double tx = raw.at(batch_item, base + 0, ci, cj);
                double ty = raw.at(batch_item, base + 1, ci, cj);
                double tw = raw.at(batch_item, base + 2, ci, cj);
                double th = raw.at(batch_item, base + 3, ci, cj);
                double to = raw.at(batch_item, base + 4, ci, cj);
                // softmax over class logits
                double mx = -1e30;
                for (int k = 0; k < C; ++k)
                    mx = std::max(mx, static_cast<double>(raw.at(batch_item, base + 5 + k, ci, cj)));
                double z = 0;
                int best_k = 0;
                double best_e = -1;
                for (int k = 0; k < C; ++k) {
                    double e = std::exp(raw.at(batch_item, base + 5 + k, ci, cj) - mx);
                    z += e;
                    if (e > best_e) {
                        best_e = e;
                        best_k = k;
                    }
                }
                double score = sigmoid(to) * (best_e / z);
                if (score < conf_threshold) continue;
                auto [aw, ah] = config.anchors[a];
                Detection d;
                d.class_id = best_k;
                d.score = score;
                d.box.class_id = best_k;
                d.box.cx = (cj + sigmoid(tx)) / G;
                d.box.cy = (ci + sigmoid(ty)) / G;
                d.box.w = aw * std::exp(tw) / G;
                d.box.h = ah * std::exp(th) / G;
                out.push_back(d);
            }
    return out;
}

struct LossWeights {
    double lambda_coord = 5.0;
    double lambda_noobj = 0.5;
};

template <typename T>
struct LossParts {
    VarPtr<T> total;
    double box = 0, obj = 0, cls = 0;
};

/// YOLOv2-style sum-squared detection loss over one image's head tensor.
/// Backward is hand-written and covered by the finite-difference suite.
template <typename T>
LossParts<T> detection_loss(Tape<T>& tape, const VarPtr<T>& raw, const GridTarget& target,
                            const LossWeights& weights = {}, int batch_item = 0) {
    const int G = target.grid;
    const int A = target.anchors;
    const int C = raw->val.shape.c / A - 5;
    if (raw->val.shape.c != A * (5 + C) || raw->val.shape.h != G || raw->val.shape.w != G)
        throw ShapeError("detection_loss: head tensor " + raw->val.shape.str() +
                         " inconsistent with target grid");
    auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };

    double box_loss = 0, obj_loss = 0, cls_loss = 0;
    // Backward writes directly into raw->grad; stash per-slot values.
    struct SlotGrad {
        int base, ci, cj;
        double dtx, dty, dtw, dth, dto;
        std::vector<double> dcls;
    };
    auto grads = std::make_shared<std::vector<SlotGrad>>();

    for (int ci = 0; ci < G; ++ci)
        for (int cj = 0; cj < G; ++cj)
            for (int a = 0; a < A; ++a) {
                std::size_t s = target.slot(ci, cj, a);
                int base = a * (5 + C);
                double to = raw->val.at(batch_item, base + 4, ci, cj);
                double so = sigmoid(to);
                SlotGrad sg{base, ci, cj, 0, 0, 0, 0, 0, {}};
                if (target.responsible[s]) {
                    double tx = raw->val.at(batch_item, base + 0, ci, cj);
                    double ty = raw->val.at(batch_item, base + 1, ci, cj);
                    double tw = raw->val.at(batch_item, base + 2, ci, cj);
                    double th = raw->val.at(batch_item, base + 3, ci, cj);
                    double sx = sigmoid(tx), sy = sigmoid(ty);
                    double ex = sx - target.tx[s], ey = sy - target.ty[s];
                    double ew = tw - target.tw[s], eh = th - target.th[s];
                    box_loss += weights.lambda_coord * (ex * ex + ey * ey + ew * ew + eh * eh);
                    sg.dtx = weights.lambda_coord * 2 * ex * sx * (1 - sx);
                    sg.dty = weights.lambda_coord * 2 * ey * sy * (1 - sy);
                    sg.dtw = weights.lambda_coord * 2 * ew;
                    sg.dth = weights.lambda_coord * 2 * eh;
                    obj_loss += (so - 1) * (so - 1);
                    sg.dto = 2 * (so - 1) * so * (1 - so);
                    // softmax cross-entropy over class logits
                    double mx = -1e300;
                    for (int k = 0; k < C; ++k)
                        mx = std::max(mx, static_cast<double>(
                                              raw->val.at(batch_item, base + 5 + k, ci, cj)));
                    double z = 0;
                    for (int k = 0; k < C; ++k)
                        z += std::exp(raw->val.at(batch_item, base + 5 + k, ci, cj) - mx);
                    sg.dcls.resize(C);
                    for (int k = 0; k < C; ++k) {
                        double p = std::exp(raw->val.at(batch_item, base + 5 + k, ci, cj) - mx) / z;
                        sg.dcls[k] = p - (k == target.cls[s] ? 1.0 : 0.0);
                        if (k == target.cls[s]) cls_loss += -std::log(std::max(p, 1e-300));
                    }
                } else {
                    obj_loss += weights.lambda_noobj * so * so;
                    sg.dto = weights.lambda_noobj * 2 * so * so * (1 - so);
                }
                grads->push_back(std::move(sg));
            }

    double total = box_loss + obj_loss + cls_loss;
    if (!std::isfinite(total)) throw NumericError("detection_loss: non-finite loss");
    auto y = make_var<T>(Tensor<T>::scalar(static_cast<T>(total)), raw->requires_grad);
    if (y->requires_grad) {
        int CC = C;
        tape.record([raw, y, grads, batch_item, CC] {
            T g = y->grad.v[0];
            for (const auto& sg : *grads) {
                raw->grad.at(batch_item, sg.base + 0, sg.ci, sg.cj) += g * static_cast<T>(sg.dtx);
                raw->grad.at(batch_item, sg.base + 1, sg.ci, sg.cj) += g * static_cast<T>(sg.dty);
                raw->grad.at(batch_item, sg.base + 2, sg.ci, sg.cj) += g * static_cast<T>(sg.dtw);
                raw->grad.at(batch_item, sg.base + 3, sg.ci, sg.cj) += g * static_cast<T>(sg.dth);
                raw->grad.at(batch_item, sg.base + 4, sg.ci, sg.cj) += g * static_cast<T>(sg.dto);
                for (std::size_t k = 0; k < sg.dcls.size(); ++k)
                    raw->grad.at(batch_item, sg.base + 5 + static_cast<int>(k), sg.ci, sg.cj) +=
                        g * static_cast<T>(sg.dcls[k]);
            }
            (void)CC;
        });
    }
    LossParts<T> parts;
    parts.total = y;
    parts.box = box_loss;
    parts.obj = obj_loss;
    parts.cls = cls_loss;
    return parts;
}

// --- the staged backbone -----------------------------------------------

/// Stage s: 3x3 conv stride 1, leaky-ReLU(0.1), 3x3 conv stride 2,
/// leaky-ReLU(0.1). Each stage halves the resolution. Head is a 1x1 conv.
struct Model {
    DetectorConfig config;
    std::optional<ExcitationConfig> ae;

    struct ConvParams {
        VarPtr<float> w, b;
    };
    std::vector<ConvParams> convs;  // 2 per stage, then head

    static Model build(const DetectorConfig& config, std::optional<ExcitationConfig> ae,
                       std::uint64_t seed) {
        config.validate();
        if (ae && (ae->stage < 1 || ae->stage > config.stage_count()))
            throw ConfigError("AE stage " + std::to_string(ae->stage) +
                              " does not exist in a " + std::to_string(config.stage_count()) +
                              "-stage model");
        Model m;
        m.config = config;
        m.ae = ae;
        std::mt19937_64 rng(seed);
        int in_ch = 3;
        for (int s = 0; s < config.stage_count(); ++s) {
            int w = config.stage_widths[s];
            m.convs.push_back(init_conv(rng, w, in_ch, 3));
            m.convs.push_back(init_conv(rng, w, w, 3));
            in_ch = w;
        }
        m.convs.push_back(init_conv(rng, config.head_channels(), in_ch, 1));
        // Start objectness biased towards "no object": most cells are empty, so this
        // keeps the early no-object loss small and the first epochs stable.
        for (std::size_t a = 0; a < config.anchors.size(); ++a)
            m.convs.back().b->val.v[a * (5 + config.num_classes) + 4] = -2.0f;
        return m;
    }

    /// Raw head tensor. boxes may be null whenever alpha(t) == 0.
    VarPtr<float> forward(Tape<float>& tape, const VarPtr<float>& images,
                          const std::vector<std::vector<BoxLabel>>* boxes, double t) const {
        VarPtr<float> x = images;
        for (int s = 0; s < config.stage_count(); ++s) {
            x = conv2d(tape, x, convs[2 * s].w, convs[2 * s].b, 1, 1);
            x = leaky_relu(tape, x, 0.1f);
            x = conv2d(tape, x, convs[2 * s + 1].w, convs[2 * s + 1].b, 2, 1);
            x = leaky_relu(tape, x, 0.1f);
            if (ae && ae->stage == s + 1) x = ae_forward(tape, x, boxes, *ae, t);
        }
        const auto& head = convs.back();
        return conv2d(tape, x, head.w, head.b, 1, 0);
    }

    std::vector<VarPtr<float>> parameters() const {
        std::vector<VarPtr<float>> p;
        for (const auto& c : convs) {
            p.push_back(c.w);
            p.push_back(c.b);
        }
        return p;
    }

    TensorMap state_dict() const {
        TensorMap tensors;
        for (std::size_t i = 0; i < convs.size(); ++i) {
            tensors["conv" + std::to_string(i) + ".w"] = convs[i].w->val;
            tensors["conv" + std::to_string(i) + ".b"] = convs[i].b->val;
        }
        return tensors;
    }

    void load_state_dict(const TensorMap& tensors) {
        for (std::size_t i = 0; i < convs.size(); ++i) {
            auto wk = "conv" + std::to_string(i) + ".w";
            auto bk = "conv" + std::to_string(i) + ".b";
            auto wi = tensors.find(wk), bi = tensors.find(bk);
            if (wi == tensors.end() || bi == tensors.end())
                throw CheckpointError("checkpoint missing tensor " + wk);
            if (!(wi->second.shape == convs[i].w->val.shape))
                throw CheckpointError("checkpoint shape mismatch for " + wk);
            convs[i].w->val = wi->second;
            convs[i].b->val = bi->second;
        }
    }

  private:
    static ConvParams init_conv(std::mt19937_64& rng, int out_ch, int in_ch, int k) {
        float bound = std::sqrt(2.0f / (in_ch * k * k));
        std::uniform_real_distribution<float> dist(-bound, bound);
        Tensor<float> w(Shape{out_ch, in_ch, k, k});
        for (float& x : w.v) x = dist(rng);
        Tensor<float> b(Shape{1, 1, 1, out_ch});
        return {make_var<float>(std::move(w), true), make_var<float>(std::move(b), true)};
    }
};

}  // namespace aedet
