#pragma once

#include "aedet/eval.h"
#include "aedet/model.h"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace aedet {

struct TrainConfig {
    int epochs = 60;
    int batch_size = 16;
    double learning_rate = 1e-3;
    double weight_decay = 5e-4;
    std::uint64_t seed = 1;
    std::optional<ExcitationConfig> ae;
    int eval_every = 6;  // epochs between evals/checkpoints; final epoch always evals
    std::filesystem::path output_dir = "run";
    LossWeights loss_weights;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (learning_rate <= 0) throw ConfigError("learning_rate must be positive");
        if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    }
};

/// Classic Adam with the L2 term folded into the gradient.
struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long long step = 0;
    std::vector<Tensor<float>> m, v;  // one pair per parameter

    static AdamState init(const std::vector<VarPtr<float>>& params) {
        AdamState s;
        for (const auto& p : params) {
            s.m.emplace_back(p->val.shape);
            s.v.emplace_back(p->val.shape);
        }
        return s;
    }
};

void adam_step(const std::vector<VarPtr<float>>& params, AdamState& state, double lr,
               double weight_decay);

struct EpochMetrics {
    int epoch = 0;
    double alpha = 0;
    double loss_total = 0, loss_box = 0, loss_obj = 0, loss_cls = 0;
    double ap = 0, ap50 = 0, ap75 = 0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,alpha,loss_total,loss_box,loss_obj,loss_cls,ap,ap50,ap75";

struct TrainResult {
    Model model;
    std::vector<EpochMetrics> metrics;
    std::filesystem::path final_checkpoint;
};

// Checkpoint = AETN tensor container (weights + Adam moments) plus a
// JSON sidecar (<path>.json) with configs, epoch, seed and step count.
void save_checkpoint(const Model& model, const AdamState& state, const TrainConfig& config,
                     int epoch, const std::filesystem::path& path);

struct Checkpoint {
    Model model;
    AdamState state;
    TrainConfig config;
    DetectorConfig detector;
    int epoch = 0;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Full training loop: seeded shuffles, one alpha per epoch, Adam
/// updates, a metrics row per epoch (metrics.csv), checkpoints at
/// eval_every and at the end. Resumes from resume_from if given.
TrainResult train(const DetectorConfig& detector, const Dataset& train_set,
                  const Dataset& val_set, const TrainConfig& config,
                  const std::filesystem::path* resume_from = nullptr);

struct AblationRow {
    int stage = 0;               // 0 for the no-AE baseline
    std::string strategy;        // "none" for baseline
    std::uint64_t seed = 0;
    double ap = 0, ap50 = 0, ap75 = 0;
    bool failed = false;
    std::filesystem::path checkpoint;
};

inline constexpr const char* kAblationHeader = "stage,strategy,seed,ap,ap50,ap75";

/// One run per (stage, strategy, seed) plus a no-AE baseline per seed.
/// Failures are recorded and the sweep continues. Writes ablation.csv
/// and ablation.txt under base.output_dir.
std::vector<AblationRow> run_ablation(const DetectorConfig& detector, const Dataset& train_set,
                                      const Dataset& val_set, const TrainConfig& base,
                                      const std::vector<int>& stages,
                                      const std::vector<ExcitationStrategy>& strategies,
                                      const std::vector<std::uint64_t>& seeds);

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<EpochMetrics>& metrics);

}  // namespace aedet
