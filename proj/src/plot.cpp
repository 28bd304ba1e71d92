#include "aedet/plot.h"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace aedet {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

struct Svg {
    std::ostringstream body;
    double width, height;

    Svg(double w, double h) : width(w), height(h) {}

    void line(double x1, double y1, double x2, double y2, const std::string& color,
              double sw = 1) {
        body << "<line x1='" << x1 << "' y1='" << y1 << "' x2='" << x2 << "' y2='" << y2
             << "' stroke='" << color << "' stroke-width='" << sw << "'/>\n";
    }
    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color) {
        body << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
        for (auto [x, y] : pts) body << x << "," << y << " ";
        body << "'/>\n";
    }
    void rect(double x, double y, double w, double h, const std::string& fill) {
        body << "<rect x='" << x << "' y='" << y << "' width='" << w << "' height='" << h
             << "' fill='" << fill << "'/>\n";
    }
    void text(double x, double y, const std::string& s, int size = 11,
              const std::string& anchor = "start") {
        body << "<text x='" << x << "' y='" << y << "' font-size='" << size
             << "' font-family='sans-serif' text-anchor='" << anchor << "'>" << s << "</text>\n";
    }
    void save(const std::filesystem::path& path) {
        std::ofstream os(path);
        if (!os) throw PlotError("cannot write " + path.string());
        os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
           << "' viewBox='0 0 " << width << " " << height << "'>\n"
           << "<rect width='100%' height='100%' fill='white'/>\n"
           << body.str() << "</svg>\n";
        if (!os) throw PlotError("write failed for " + path.string());
    }
};

struct Axes {
    double x0 = 60, y0 = 40, plot_w = 480, plot_h = 320;
    double xmin, xmax, ymin, ymax;

    double px(double x) const { return x0 + (x - xmin) / (xmax - xmin) * plot_w; }
    double py(double y) const { return y0 + plot_h - (y - ymin) / (ymax - ymin) * plot_h; }

    void draw(Svg& svg, const std::string& xlabel, const std::string& ylabel) const {
        svg.line(x0, y0 + plot_h, x0 + plot_w, y0 + plot_h, "black");
        svg.line(x0, y0, x0, y0 + plot_h, "black");
        for (int k = 0; k <= 5; ++k) {
            double fx = xmin + (xmax - xmin) * k / 5.0;
            double fy = ymin + (ymax - ymin) * k / 5.0;
            std::ostringstream sx, sy;
            sx << std::setprecision(3) << fx;
            sy << std::setprecision(3) << fy;
            svg.line(px(fx), y0 + plot_h, px(fx), y0 + plot_h + 4, "black");
            svg.text(px(fx), y0 + plot_h + 16, sx.str(), 10, "middle");
            svg.line(x0 - 4, py(fy), x0, py(fy), "black");
            svg.text(x0 - 8, py(fy) + 4, sy.str(), 10, "end");
        }
        svg.text(x0 + plot_w / 2, y0 + plot_h + 32, xlabel, 12, "middle");
        svg.text(16, y0 - 10, ylabel, 12);
    }
};

}  // namespace

void plot_ap_iou(const std::vector<std::pair<std::string, EvalReport>>& reports,
                 const std::filesystem::path& out) {
    if (reports.empty()) throw PlotError("ap-iou plot: no reports given");
    for (const auto& [label, r] : reports)
        if (r.threshold_curve.empty())
            throw PlotError("ap-iou plot: report \"" + label + "\" has no threshold_curve");
    Svg svg(640, 420);
    Axes ax{.xmin = 0.5, .xmax = 0.95, .ymin = 0, .ymax = 1};
    ax.draw(svg, "IoU threshold", "AP");
    int ci = 0;
    for (const auto& [label, r] : reports) {
        std::string color = kPalette[ci % 8];
        std::vector<std::pair<double, double>> pts;
        for (auto [thr, ap] : r.threshold_curve) pts.emplace_back(ax.px(thr), ax.py(ap));
        svg.polyline(pts, color);
        svg.rect(ax.x0 + ax.plot_w - 150, ax.y0 + 10 + 16 * ci, 10, 10, color);
        svg.text(ax.x0 + ax.plot_w - 135, ax.y0 + 19 + 16 * ci, label);
        ++ci;
    }
    svg.save(out);
}

void plot_size_buckets(const std::vector<std::pair<std::string, EvalReport>>& reports,
                       const std::filesystem::path& out) {
    if (reports.empty()) throw PlotError("size-bucket plot: no reports given");
    Svg svg(640, 420);
    Axes ax{.xmin = 0, .xmax = 3, .ymin = 0, .ymax = 1};
    ax.draw(svg, "object size bucket", "AP50");
    const char* buckets[3] = {"small", "medium", "large"};
    double group_w = ax.plot_w / 3.0;
    double bar_w = group_w * 0.8 / static_cast<double>(reports.size());
    for (int b = 0; b < 3; ++b) {
        svg.text(ax.x0 + group_w * (b + 0.5), ax.y0 + ax.plot_h + 16, buckets[b], 10, "middle");
        int ci = 0;
        for (const auto& [label, r] : reports) {
            double v = b == 0 ? r.ap50_small : (b == 1 ? r.ap50_medium : r.ap50_large);
            double x = ax.x0 + group_w * b + group_w * 0.1 + bar_w * ci;
            svg.rect(x, ax.py(v), bar_w - 2, ax.py(0) - ax.py(v), kPalette[ci % 8]);
            ++ci;
        }
    }
    int ci = 0;
    for (const auto& [label, r] : reports) {
        svg.rect(ax.x0 + 10, ax.y0 + 10 + 16 * ci, 10, 10, kPalette[ci % 8]);
        svg.text(ax.x0 + 25, ax.y0 + 19 + 16 * ci, label);
        ++ci;
    }
    svg.save(out);
}

void plot_schedule(int max_iteration, int epochs, const std::filesystem::path& out) {
    if (max_iteration < 1 || epochs < 1) throw PlotError("schedule plot: bad horizon");
    Svg svg(640, 420);
    Axes ax{.xmin = 0, .xmax = static_cast<double>(epochs), .ymin = 0, .ymax = 1};
    ax.draw(svg, "epoch", "alpha");
    std::vector<std::pair<double, double>> pts;
    for (int k = 0; k <= 400; ++k) {
        double t = epochs * k / 400.0;
        pts.emplace_back(ax.px(t), ax.py(alpha_schedule(t, max_iteration)));
    }
    svg.polyline(pts, kPalette[0]);
    svg.save(out);
}

void plot_heatmap(const Model& model, const Scene& scene, double t,
                  const std::filesystem::path& out) {
    // Forward to the AE stage, capturing the channel mean before and
    // after the excitation is added.
    int ae_stage = model.ae ? model.ae->stage : model.config.stage_count();
    Tape<float> tape;
    auto x = make_var<float>(scene.image, false);
    for (int s = 0; s < ae_stage; ++s) {
        x = conv2d(tape, x, model.convs[2 * s].w, model.convs[2 * s].b, 1, 1);
        x = leaky_relu(tape, x, 0.1f);
        x = conv2d(tape, x, model.convs[2 * s + 1].w, model.convs[2 * s + 1].b, 2, 1);
        x = leaky_relu(tape, x, 0.1f);
    }
    auto before = channel_mean(tape, x);
    VarPtr<float> after_full = x;
    if (model.ae) {
        std::vector<std::vector<BoxLabel>> boxes{scene.labels};
        after_full = ae_forward(tape, x, &boxes, *model.ae, t);
    }
    auto after = channel_mean(tape, after_full);

    float lo = 1e30f, hi = -1e30f;
    for (float v : before->val.v) lo = std::min(lo, v), hi = std::max(hi, v);
    for (float v : after->val.v) lo = std::min(lo, v), hi = std::max(hi, v);
    if (hi <= lo) hi = lo + 1e-6f;

    const int H = before->val.shape.h, W = before->val.shape.w;
    const double cell = 240.0 / std::max(H, W);
    Svg svg(2 * 260 + 60, 240 + 80);
    auto panel = [&](const Tensor<float>& m, double x0, const std::string& title) {
        svg.text(x0 + 120, 30, title, 12, "middle");
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                double v = (m.at(0, 0, i, j) - lo) / (hi - lo);
                int r = static_cast<int>(255 * v);
                int b = static_cast<int>(255 * (1 - v));
                std::ostringstream color;
                color << "rgb(" << r << ",0," << b << ")";
                svg.rect(x0 + j * cell, 40 + i * cell, cell, cell, color.str());
            }
    };
    panel(before->val, 30, "before excitation");
    panel(after->val, 320, "after excitation");
    svg.save(out);
}

}  // namespace aedet
