#include "aedet/config.h"
#include "aedet/plot.h"
#include "aedet/train.h"
#include "aedet/verify.h"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <cstdlib>
#include <fstream>
#include <iostream>

namespace {

using namespace aedet;
using nlohmann::json;

void apply_thread_env() {
#ifdef _OPENMP
    int threads = 1;  // single-threaded unless AE_DET_THREADS says otherwise
    if (const char* env = std::getenv("AE_DET_THREADS")) threads = std::max(1, std::atoi(env));
    omp_set_num_threads(threads);
#endif
}

RunConfig load_config_or_default(const std::string& path) {
    if (path.empty()) return RunConfig{};
    return load_run_config(path);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

int cmd_gen_data(const std::string& config_path, std::uint64_t count, const std::string& out_dir,
                 std::int64_t seed, bool dry_run) {
    RunConfig cfg = load_config_or_default(config_path);
    if (seed >= 0) cfg.data.seed = static_cast<std::uint64_t>(seed);
    if (dry_run) {
        std::cout << "gen-data plan:\n"
                  << json{{"spec", scene_spec_to_json(cfg.data)}, {"count", count},
                          {"out", out_dir}}
                         .dump(2)
                  << "\n";
        return 0;
    }
    DatasetManifest manifest = write_dataset(cfg.data, count, out_dir);
    std::cout << "wrote " << count << " images to " << out_dir << "\nchecksum "
              << manifest.checksum << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& train_dir,
              const std::string& val_dir, const std::string& out_dir, std::int64_t seed,
              const std::string& resume, bool dry_run) {
    RunConfig cfg = load_config_or_default(config_path);
    if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);
    if (!out_dir.empty()) cfg.train.output_dir = out_dir;
    if (dry_run) {
        std::cout << "train plan:\n" << run_config_to_json(cfg).dump(2) << "\n";
        return 0;
    }
    Dataset train_set =
        train_dir.empty() ? Dataset::in_memory(cfg.data, 2000) : Dataset::open(train_dir);
    SceneSpec val_spec = cfg.data;
    val_spec.seed += 1;  // disjoint validation stream when generating in memory
    Dataset val_set = val_dir.empty() ? Dataset::in_memory(val_spec, 500) : Dataset::open(val_dir);

    std::filesystem::path resume_path = resume;
    TrainResult result = train(cfg.model, train_set, val_set, cfg.train,
                               resume.empty() ? nullptr : &resume_path);
    const EpochMetrics& last = result.metrics.back();
    std::cout << "final ap " << last.ap << " ap50 " << last.ap50 << " ap75 " << last.ap75
              << "\ncheckpoint " << result.final_checkpoint.string() << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir,
             const std::string& config_path, const std::string& out_path) {
    RunConfig cfg = load_config_or_default(config_path);
    Checkpoint ckpt = load_checkpoint(checkpoint);
    Dataset dataset = Dataset::open(data_dir);
    EvalReport report = evaluate(ckpt.model, dataset, cfg.eval);
    std::string text = report_to_json(report);
    if (!out_path.empty()) {
        std::ofstream os(out_path);
        os << text << "\n";
        // threshold sweep as CSV next to the JSON for plotting
        std::ofstream curve(out_path + ".curve.csv");
        curve << "threshold,ap\n";
        for (auto [thr, ap] : report.threshold_curve) curve << thr << "," << ap << "\n";
    }
    std::cout << text << "\n";
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& stages_arg,
               const std::string& strategies_arg, const std::string& seeds_arg,
               const std::string& train_dir, const std::string& val_dir,
               const std::string& out_dir, bool dry_run) {
    RunConfig cfg = load_config_or_default(config_path);
    if (!out_dir.empty()) cfg.train.output_dir = out_dir;
    std::vector<int> stages;
    for (const auto& s : split_list(stages_arg)) stages.push_back(std::stoi(s));
    std::vector<ExcitationStrategy> strategies;
    for (const auto& s : split_list(strategies_arg)) strategies.push_back(parse_strategy(s));
    std::vector<std::uint64_t> seeds;
    for (const auto& s : split_list(seeds_arg)) seeds.push_back(std::stoull(s));
    if (dry_run) {
        std::cout << "ablate plan: " << stages.size() << " stages x " << strategies.size()
                  << " strategies x " << seeds.size() << " seeds + " << seeds.size()
                  << " baselines = " << stages.size() * strategies.size() * seeds.size() + seeds.size()
                  << " runs\n";
        return 0;
    }
    Dataset train_set =
        train_dir.empty() ? Dataset::in_memory(cfg.data, 2000) : Dataset::open(train_dir);
    SceneSpec val_spec = cfg.data;
    val_spec.seed += 1;
    Dataset val_set = val_dir.empty() ? Dataset::in_memory(val_spec, 500) : Dataset::open(val_dir);
    auto rows = run_ablation(cfg.model, train_set, val_set, cfg.train, stages, strategies, seeds);
    std::cout << "wrote " << rows.size() << " rows to "
              << (cfg.train.output_dir / "ablation.csv").string() << "\n";
    std::ifstream table(cfg.train.output_dir / "ablation.txt");
    std::cout << table.rdbuf();
    return 0;
}

int cmd_grad_check(std::uint64_t seed) {
    VerifyOptions options;
    options.seed = seed;
    bool ok = run_gradient_suite(std::cout, options);
    if (!ok) {
        std::cerr << "gradient suite FAILED\n";
        return 2;
    }
    std::cout << "gradient suite passed\n";
    return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& image_path,
                const std::string& data_dir, std::int64_t index, double conf_threshold,
                double nms_threshold, const std::string& out_path) {
    Checkpoint ckpt = load_checkpoint(checkpoint);
    Tensor<float> image;
    if (!image_path.empty()) {
        image = read_ppm(image_path);
    } else {
        Dataset d = Dataset::open(data_dir);
        image = d.get(static_cast<std::size_t>(index)).image;
    }
    Tape<float> tape;
    auto images = make_var<float>(image, false);
    double t_off = ckpt.model.ae ? ckpt.model.ae->schedule.max_iteration : 0.0;
    auto raw = ckpt.model.forward(tape, images, nullptr, t_off);
    auto dets = nms(decode_predictions(raw->val, ckpt.model.config, conf_threshold),
                    nms_threshold);
    json out = json::array();
    for (const Detection& d : dets)
        out.push_back(json{{"class_id", d.class_id},
                           {"class_name", d.class_id < kNumShapeClasses
                                              ? kShapeClassNames[d.class_id]
                                              : "unknown"},
                           {"score", d.score},
                           {"cx", d.box.cx},
                           {"cy", d.box.cy},
                           {"w", d.box.w},
                           {"h", d.box.h}});
    std::string text = out.dump(2);
    if (!out_path.empty()) std::ofstream(out_path) << text << "\n";
    std::cout << text << "\n";
    return 0;
}

int cmd_plot(const std::string& kind, const std::vector<std::string>& inputs,
             const std::vector<std::string>& labels, const std::string& out_path,
             const std::string& checkpoint, const std::string& data_dir, std::int64_t index,
             double t, int max_iteration, int epochs) {
    auto load_reports = [&] {
        std::vector<std::pair<std::string, EvalReport>> reports;
        if (inputs.empty()) throw PlotError("plot: no input report files given");
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            std::ifstream is(inputs[i]);
            if (!is) throw PlotError("cannot open " + inputs[i]);
            std::string text((std::istreambuf_iterator<char>(is)),
                             std::istreambuf_iterator<char>());
            reports.emplace_back(i < labels.size() ? labels[i] : inputs[i],
                                 report_from_json(text));
        }
        return reports;
    };
    if (kind == "ap-iou") {
        plot_ap_iou(load_reports(), out_path);
    } else if (kind == "size-buckets") {
        plot_size_buckets(load_reports(), out_path);
    } else if (kind == "schedule") {
        plot_schedule(max_iteration, epochs > 0 ? epochs : max_iteration * 5 / 4, out_path);
    } else if (kind == "heatmap") {
        Checkpoint ckpt = load_checkpoint(checkpoint);
        Dataset dataset = Dataset::open(data_dir);
        plot_heatmap(ckpt.model, dataset.get(static_cast<std::size_t>(index)), t, out_path);
    } else {
        throw UsageError("unknown plot kind: " + kind);
    }
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    apply_thread_env();
    CLI::App app{"Grid object detector with an annealed ground-truth excitation layer"};
    app.require_subcommand(1);

    std::string config_path, out_dir, train_dir, val_dir, checkpoint, data_dir, image_path;
    std::string stages_arg = "1,2,3,4", strategies_arg = "eq2,eq3,eq4", seeds_arg = "1,2,3";
    std::string kind, out_path, resume;
    std::vector<std::string> inputs, labels;
    std::int64_t seed = -1, index = 0;
    std::uint64_t count = 2000, gseed = 12345;
    double conf = 0.25, nmsv = 0.5, tval = 0.0;
    int max_iteration = 19, epochs_arg = 0;
    bool dry_run = false;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic shape dataset");
    gen->add_option("--config", config_path);
    gen->add_option("--count", count);
    gen->add_option("--out", out_dir)->required();
    gen->add_option("--seed", seed);
    gen->add_flag("--dry-run", dry_run);

    auto* tr = app.add_subcommand("train", "train a detector");
    tr->add_option("--config", config_path);
    tr->add_option("--data", train_dir, "training dataset dir (default: generated in memory)");
    tr->add_option("--val", val_dir, "validation dataset dir");
    tr->add_option("--out", out_dir);
    tr->add_option("--seed", seed);
    tr->add_option("--resume", resume, "checkpoint to resume from");
    tr->add_flag("--dry-run", dry_run);

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--checkpoint", checkpoint)->required();
    ev->add_option("--data", data_dir)->required();
    ev->add_option("--config", config_path);
    ev->add_option("--out", out_path, "EvalReport JSON path");

    auto* ab = app.add_subcommand("ablate", "sweep AE stages and strategies");
    ab->add_option("--config", config_path);
    ab->add_option("--stages", stages_arg);
    ab->add_option("--strategies", strategies_arg, "comma list: eq2,eq3,eq4 or full names");
    ab->add_option("--seeds", seeds_arg);
    ab->add_option("--data", train_dir);
    ab->add_option("--val", val_dir);
    ab->add_option("--out", out_dir);
    ab->add_flag("--dry-run", dry_run);

    auto* gc = app.add_subcommand("grad-check", "finite-difference and Jacobian verification");
    gc->add_option("--seed", gseed);

    auto* pr = app.add_subcommand("predict", "run a checkpoint on an image");
    pr->add_option("--checkpoint", checkpoint)->required();
    pr->add_option("--image", image_path, "PPM image path");
    pr->add_option("--data", data_dir, "dataset dir (with --index)");
    pr->add_option("--index", index);
    pr->add_option("--conf", conf);
    pr->add_option("--nms", nmsv);
    pr->add_option("--out", out_path);

    auto* pl = app.add_subcommand("plot", "emit SVG plots");
    pl->add_option("--kind", kind, "ap-iou | size-buckets | schedule | heatmap")->required();
    pl->add_option("--input", inputs, "eval report JSON files");
    pl->add_option("--label", labels);
    pl->add_option("--out", out_path)->required();
    pl->add_option("--checkpoint", checkpoint);
    pl->add_option("--data", data_dir);
    pl->add_option("--index", index);
    pl->add_option("--t", tval);
    pl->add_option("--max-iteration", max_iteration);
    pl->add_option("--epochs", epochs_arg);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed())
            return cmd_gen_data(config_path, count, out_dir, seed, dry_run);
        if (tr->parsed())
            return cmd_train(config_path, train_dir, val_dir, out_dir, seed, resume, dry_run);
        if (ev->parsed()) return cmd_eval(checkpoint, data_dir, config_path, out_path);
        if (ab->parsed())
            return cmd_ablate(config_path, stages_arg, strategies_arg, seeds_arg, train_dir,
                              val_dir, out_dir, dry_run);
        if (gc->parsed()) return cmd_grad_check(gseed);
        if (pr->parsed())
            return cmd_predict(checkpoint, image_path, data_dir, index, conf, nmsv, out_path);
        if (pl->parsed())
            return cmd_plot(kind, inputs, labels, out_path, checkpoint, data_dir, index, tval,
                            max_iteration, epochs_arg);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
