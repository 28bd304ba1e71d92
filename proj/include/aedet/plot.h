#pragma once

#include "aedet/eval.h"
#include "aedet/train.h"

#include <filesystem>
#include <string>
#include <vector>

namespace aedet {

struct PlotError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// AP-vs-IoU-threshold curves, one per labeled report.
void plot_ap_iou(const std::vector<std::pair<std::string, EvalReport>>& reports,
                 const std::filesystem::path& out);

/// Grouped bars of AP50 per size bucket (small / medium / large).
void plot_size_buckets(const std::vector<std::pair<std::string, EvalReport>>& reports,
                       const std::filesystem::path& out);

/// The annealing curve alpha(t) over [0, epochs].
void plot_schedule(int max_iteration, int epochs, const std::filesystem::path& out);

/// Channel-averaged activation at the AE stage, before and after the
/// excitation is added, for one image at progress t.
void plot_heatmap(const Model& model, const Scene& scene, double t,
                  const std::filesystem::path& out);

}  // namespace aedet
