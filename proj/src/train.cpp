#include "aedet/train.h"

#include "aedet/config.h"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

namespace aedet {

using nlohmann::json;

// Amplitude of the per-epoch training-input noise; matches the scale of the
// dataset's own background noise.
constexpr float kInputNoise = 0.05f;

void adam_step(const std::vector<VarPtr<float>>& params, AdamState& state, double lr,
               double weight_decay) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& param = params[p];
        for (std::size_t i = 0; i < param->val.size(); ++i) {
            double g = param->grad.v[i];
            if (!std::isfinite(g))
                throw NumericError("adam_step: non-finite gradient in parameter " +
                                   std::to_string(p));
            g += weight_decay * param->val.v[i];
            double m = state.m[p].v[i] = state.beta1 * state.m[p].v[i] + (1 - state.beta1) * g;
            double v = state.v[p].v[i] = state.beta2 * state.v[p].v[i] + (1 - state.beta2) * g * g;
            double update = lr * (m / bc1) / (std::sqrt(v / bc2) + state.eps);
            if (!std::isfinite(update))
                throw NumericError("adam_step: non-finite update in parameter " +
                                   std::to_string(p));
            param->val.v[i] -= static_cast<float>(update);
        }
    }
}

namespace {

std::string fmt(double x) {
    std::ostringstream os;
    os << std::setprecision(17) << x;
    return os.str();
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<EpochMetrics>& metrics) {
    std::ofstream os(path);
    if (!os) throw DatasetError("cannot write " + path.string());
    os << kMetricsHeader << "\n";
    for (const auto& m : metrics)
        os << m.epoch << "," << fmt(m.alpha) << "," << fmt(m.loss_total) << ","
           << fmt(m.loss_box) << "," << fmt(m.loss_obj) << "," << fmt(m.loss_cls) << ","
           << fmt(m.ap) << "," << fmt(m.ap50) << "," << fmt(m.ap75) << "\n";
}

void save_checkpoint(const Model& model, const AdamState& state, const TrainConfig& config,
                     int epoch, const std::filesystem::path& path) {
    TensorMap tensors = model.state_dict();
    for (std::size_t p = 0; p < state.m.size(); ++p) {
        tensors["adam.m." + std::to_string(p)] = state.m[p];
        tensors["adam.v." + std::to_string(p)] = state.v[p];
    }
    save_tensor_file(path.string(), tensors);

    json sidecar{{"format_version", 1},
                 {"epoch", epoch},
                 {"seed", config.seed},
                 {"adam_step", state.step},
                 {"model", detector_to_json(model.config)},
                 {"ae", model.ae ? excitation_to_json(*model.ae) : json(nullptr)},
                 {"train", train_to_json(config)}};
    std::ofstream os(path.string() + ".json");
    if (!os) throw CheckpointError("cannot write sidecar for " + path.string());
    os << sidecar.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream side(path.string() + ".json");
    if (!side) throw CheckpointError("missing checkpoint sidecar " + path.string() + ".json");
    json sidecar = json::parse(side);
    if (sidecar.at("format_version").get<int>() != 1)
        throw CheckpointError("unsupported checkpoint format version");

    Checkpoint ckpt;
    ckpt.detector = detector_from_json(sidecar.at("model"));
    std::optional<ExcitationConfig> ae;
    if (!sidecar.at("ae").is_null()) ae = excitation_from_json(sidecar.at("ae"));
    ckpt.config = train_from_json(sidecar.at("train"));
    ckpt.config.ae = ae;
    ckpt.config.seed = sidecar.at("seed").get<std::uint64_t>();
    ckpt.epoch = sidecar.at("epoch").get<int>();

    ckpt.model = Model::build(ckpt.detector, ae, /*seed=*/ckpt.config.seed);
    TensorMap tensors = load_tensor_file(path.string());
    ckpt.model.load_state_dict(tensors);
    ckpt.state = AdamState::init(ckpt.model.parameters());
    ckpt.state.step = sidecar.at("adam_step").get<long long>();
    for (std::size_t p = 0; p < ckpt.state.m.size(); ++p) {
        auto mi = tensors.find("adam.m." + std::to_string(p));
        auto vi = tensors.find("adam.v." + std::to_string(p));
        if (mi == tensors.end() || vi == tensors.end())
            throw CheckpointError("checkpoint missing Adam state for parameter " +
                                  std::to_string(p));
        ckpt.state.m[p] = mi->second;
        ckpt.state.v[p] = vi->second;
    }
    return ckpt;
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a + 0x9E3779B97F4A7C15ull * (b + 1);
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace

TrainResult train(const DetectorConfig& detector, const Dataset& train_set,
                  const Dataset& val_set, const TrainConfig& config,
                  const std::filesystem::path* resume_from) {
    config.validate();
    detector.validate();
    if (train_set.size() == 0) throw DatasetError("train: empty dataset");
    std::filesystem::create_directories(config.output_dir);

    Model model = Model::build(detector, config.ae, config.seed);
    AdamState state = AdamState::init(model.parameters());
    int start_epoch = 0;
    std::vector<EpochMetrics> metrics;

    if (resume_from) {
        Checkpoint ckpt = load_checkpoint(*resume_from);
        model = ckpt.model;
        state = ckpt.state;
        start_epoch = ckpt.epoch + 1;
    }
    auto params = model.parameters();

    // Preload and pre-encode the training set.
    std::vector<Scene> scenes;
    std::vector<GridTarget> targets;
    scenes.reserve(train_set.size());
    for (std::size_t i = 0; i < train_set.size(); ++i) {
        scenes.push_back(train_set.get(i));
        targets.push_back(encode_targets(scenes.back().labels, detector, &std::cerr));
        if (scenes.back().image.shape.h != detector.input_size)
            throw DatasetError("dataset image size does not match detector input size");
    }

    const int iters_per_epoch =
        static_cast<int>((train_set.size() + config.batch_size - 1) / config.batch_size);
    EpochMetrics last_eval;  // carries ap columns between evals

    for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
        double alpha = 0.0;
        if (config.ae && !config.ae->schedule.per_iteration)
            alpha = config.ae->schedule.alpha(epoch);

        std::vector<std::size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 shuffle_rng(mix(config.seed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        // Fresh input noise each epoch (same family as the dataset's background
        // noise) so the fixed training set is not memorized pixel-for-pixel.
        // Seeded by (seed, epoch) only, so resumed runs see identical noise.
        std::mt19937_64 noise_rng(mix(config.seed ^ 0x9E3779B97F4A7C15ULL,
                                      static_cast<std::uint64_t>(epoch)));
        std::uniform_real_distribution<float> noise_dist(-kInputNoise, kInputNoise);

        double ep_total = 0, ep_box = 0, ep_obj = 0, ep_cls = 0;
        for (int it = 0; it < iters_per_epoch; ++it) {
            std::size_t begin = static_cast<std::size_t>(it) * config.batch_size;
            std::size_t end = std::min(train_set.size(), begin + config.batch_size);
            int bs = static_cast<int>(end - begin);

            double t_progress = epoch;
            if (config.ae && config.ae->schedule.per_iteration)
                t_progress = static_cast<double>(epoch) * iters_per_epoch + it;

            Tensor<float> batch(Shape{bs, 3, detector.input_size, detector.input_size});
            std::vector<std::vector<BoxLabel>> batch_boxes(bs);
            for (int b = 0; b < bs; ++b) {
                const Scene& s = scenes[order[begin + b]];
                std::copy(s.image.v.begin(), s.image.v.end(),
                          batch.v.begin() + static_cast<std::size_t>(b) * s.image.size());
                batch_boxes[b] = s.labels;
            }
            for (float& x : batch.v) x = std::clamp(x + noise_dist(noise_rng), 0.0f, 1.0f);

            Tape<float> tape;
            auto images = make_var<float>(std::move(batch), false);
            auto raw = model.forward(tape, images, &batch_boxes, t_progress);

            VarPtr<float> total;
            double batch_box = 0, batch_obj = 0, batch_cls = 0;
            for (int b = 0; b < bs; ++b) {
                auto parts = detection_loss<float>(tape, raw, targets[order[begin + b]],
                                                   config.loss_weights, b);
                batch_box += parts.box;
                batch_obj += parts.obj;
                batch_cls += parts.cls;
                total = total ? elementwise_add(tape, total, parts.total) : parts.total;
            }
            auto loss = scalar_mul(tape, total, 1.0f / bs);
            double loss_value = loss->val.v[0];
            if (!std::isfinite(loss_value)) {
                save_checkpoint(model, state, config, epoch, config.output_dir / "crash.ckpt");
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                                   ", crash checkpoint written");
            }
            for (auto& p : params) p->zero_grad();
            tape.backward(loss);
            adam_step(params, state, config.learning_rate, config.weight_decay);

            ep_total += loss_value * bs;
            ep_box += batch_box;
            ep_obj += batch_obj;
            ep_cls += batch_cls;
        }

        EpochMetrics row;
        row.epoch = epoch;
        row.alpha = alpha;
        row.loss_total = ep_total / static_cast<double>(train_set.size());
        row.loss_box = ep_box / static_cast<double>(train_set.size());
        row.loss_obj = ep_obj / static_cast<double>(train_set.size());
        row.loss_cls = ep_cls / static_cast<double>(train_set.size());

        bool is_last = epoch + 1 == config.epochs;
        if ((epoch + 1) % config.eval_every == 0 || is_last) {
            EvalReport report = evaluate(model, val_set);
            row.ap = report.ap;
            row.ap50 = report.ap50;
            row.ap75 = report.ap75;
            last_eval = row;
            save_checkpoint(model, state, config, epoch,
                            config.output_dir /
                                (is_last ? "final.ckpt"
                                         : "epoch" + std::to_string(epoch) + ".ckpt"));
        } else {
            row.ap = last_eval.ap;
            row.ap50 = last_eval.ap50;
            row.ap75 = last_eval.ap75;
        }
        metrics.push_back(row);
        write_metrics_csv(config.output_dir / "metrics.csv", metrics);
    }

    TrainResult result;
    result.model = model;
    result.metrics = std::move(metrics);
    result.final_checkpoint = config.output_dir / "final.ckpt";
    return result;
}

std::vector<AblationRow> run_ablation(const DetectorConfig& detector, const Dataset& train_set,
                                      const Dataset& val_set, const TrainConfig& base,
                                      const std::vector<int>& stages,
                                      const std::vector<ExcitationStrategy>& strategies,
                                      const std::vector<std::uint64_t>& seeds) {
    if (stages.empty() || strategies.empty() || seeds.empty())
        throw ConfigError("run_ablation: empty sweep list");
    std::filesystem::create_directories(base.output_dir);
    std::vector<AblationRow> rows;

    auto one_run = [&](std::optional<ExcitationConfig> ae, std::uint64_t seed,
                       const std::string& tag) {
        AblationRow row;
        row.stage = ae ? ae->stage : 0;
        row.strategy = ae ? strategy_name(ae->strategy) : "none";
        row.seed = seed;
        TrainConfig cfg = base;
        cfg.seed = seed;
        cfg.ae = ae;
        cfg.output_dir = base.output_dir / tag;
        try {
            TrainResult result = train(detector, train_set, val_set, cfg);
            const EpochMetrics& last = result.metrics.back();
            row.ap = last.ap;
            row.ap50 = last.ap50;
            row.ap75 = last.ap75;
            row.checkpoint = result.final_checkpoint;
        } catch (const std::exception& e) {
            std::cerr << "ablation run " << tag << " failed: " << e.what() << "\n";
            row.failed = true;
        }
        rows.push_back(row);
    };

    for (std::uint64_t seed : seeds) one_run(std::nullopt, seed, "baseline_s" + std::to_string(seed));
    for (int stage : stages)
        for (ExcitationStrategy strategy : strategies)
            for (std::uint64_t seed : seeds) {
                ExcitationConfig ae;
                ae.stage = stage;
                ae.strategy = strategy;
                ae.schedule.max_iteration = std::max(1, static_cast<int>(0.8 * base.epochs));
                one_run(ae, seed,
                        "stage" + std::to_string(stage) + "_" + strategy_name(strategy) + "_s" +
                            std::to_string(seed));
            }

    // CSV
    {
        std::ofstream os(base.output_dir / "ablation.csv");
        os << kAblationHeader << "\n";
        for (const auto& r : rows)
            os << r.stage << "," << r.strategy << "," << r.seed << "," << fmt(r.ap) << ","
               << fmt(r.ap50) << "," << fmt(r.ap75) << "\n";
    }
    // aligned text table, mean +- std over seeds per configuration
    {
        std::ofstream os(base.output_dir / "ablation.txt");
        os << std::left << std::setw(8) << "stage" << std::setw(26) << "strategy" << std::setw(22)
           << "AP" << std::setw(22) << "AP50" << std::setw(22) << "AP75" << "\n";
        auto stat = [&](const std::vector<double>& xs) {
            double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
            double var = 0;
            for (double x : xs) var += (x - mean) * (x - mean);
            double sd = xs.size() > 1 ? std::sqrt(var / (xs.size() - 1)) : 0.0;
            std::ostringstream s;
            s << std::fixed << std::setprecision(3) << mean << " +- " << sd;
            return s.str();
        };
        auto emit_group = [&](int stage, const std::string& strategy) {
            std::vector<double> ap, ap50, ap75;
            for (const auto& r : rows)
                if (r.stage == stage && r.strategy == strategy && !r.failed) {
                    ap.push_back(r.ap);
                    ap50.push_back(r.ap50);
                    ap75.push_back(r.ap75);
                }
            if (ap.empty()) return;
            os << std::left << std::setw(8) << (stage == 0 ? std::string("-") : std::to_string(stage))
               << std::setw(26) << strategy << std::setw(22) << stat(ap) << std::setw(22)
               << stat(ap50) << std::setw(22) << stat(ap75) << "\n";
        };
        emit_group(0, "none");
        for (int stage : stages)
            for (ExcitationStrategy strategy : strategies) emit_group(stage, strategy_name(strategy));
    }
    return rows;
}

}  // namespace aedet
