#include "aedet/config.h"

#include <fstream>
#include <set>

namespace aedet {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    for (const auto& [key, value] : j.items())
        if (!known.count(key))
            throw ConfigError("unknown key \"" + key + "\" in " + where);
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json scene_spec_to_json(const SceneSpec& s) {
    return json{{"seed", s.seed},
                {"image_size", s.image_size},
                {"min_objects", s.min_objects},
                {"max_objects", s.max_objects},
                {"small_min", s.small_min},
                {"small_max", s.small_max},
                {"large_min", s.large_min},
                {"large_max", s.large_max},
                {"small_mode_prob", s.small_mode_prob},
                {"background_noise", s.background_noise},
                {"max_overlap_iou", s.max_overlap_iou}};
}

SceneSpec scene_spec_from_json(const json& j) {
    reject_unknown(j,
                   {"seed", "image_size", "min_objects", "max_objects", "small_min", "small_max",
                    "large_min", "large_max", "small_mode_prob", "background_noise", "max_overlap_iou"},
                   "data section");
    SceneSpec s;
    maybe(j, "seed", s.seed);
    maybe(j, "image_size", s.image_size);
    maybe(j, "min_objects", s.min_objects);
    maybe(j, "max_objects", s.max_objects);
    maybe(j, "small_min", s.small_min);
    maybe(j, "small_max", s.small_max);
    maybe(j, "large_min", s.large_min);
    maybe(j, "large_max", s.large_max);
    maybe(j, "small_mode_prob", s.small_mode_prob);
    maybe(j, "background_noise", s.background_noise);
    maybe(j, "max_overlap_iou", s.max_overlap_iou);
    s.validate();
    return s;
}

json detector_to_json(const DetectorConfig& c) {
    json anchors = json::array();
    for (auto [w, h] : c.anchors) anchors.push_back(json::array({w, h}));
    return json{{"input_size", c.input_size},
                {"stage_widths", c.stage_widths},
                {"anchors", anchors},
                {"num_classes", c.num_classes}};
}

DetectorConfig detector_from_json(const json& j) {
    reject_unknown(j, {"input_size", "stage_widths", "anchors", "num_classes"}, "model section");
    DetectorConfig c;
    maybe(j, "input_size", c.input_size);
    maybe(j, "stage_widths", c.stage_widths);
    maybe(j, "num_classes", c.num_classes);
    if (j.contains("anchors")) {
        c.anchors.clear();
        for (const auto& a : j.at("anchors"))
            c.anchors.emplace_back(a.at(0).get<double>(), a.at(1).get<double>());
    }
    c.validate();
    return c;
}

json excitation_to_json(const ExcitationConfig& c) {
    return json{{"strategy", strategy_name(c.strategy)},
                {"stage", c.stage},
                {"max_iteration", c.schedule.max_iteration},
                {"unit", c.schedule.per_iteration ? "iteration" : "epoch"},
                {"detach_excitation", c.detach_excitation}};
}

ExcitationConfig excitation_from_json(const json& j) {
    reject_unknown(j, {"strategy", "stage", "max_iteration", "unit", "detach_excitation"},
                   "ae section");
    ExcitationConfig c;
    if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy").get<std::string>());
    maybe(j, "stage", c.stage);
    c.schedule.max_iteration = -1;  // derive from epochs unless given
    maybe(j, "max_iteration", c.schedule.max_iteration);
    if (j.contains("unit")) {
        auto unit = j.at("unit").get<std::string>();
        if (unit != "epoch" && unit != "iteration")
            throw ConfigError("ae.unit must be \"epoch\" or \"iteration\"");
        c.schedule.per_iteration = unit == "iteration";
    }
    maybe(j, "detach_excitation", c.detach_excitation);
    return c;
}

json train_to_json(const TrainConfig& c) {
    json j{{"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"learning_rate", c.learning_rate},
           {"weight_decay", c.weight_decay},
           {"seed", c.seed},
           {"eval_every", c.eval_every},
           {"output_dir", c.output_dir.string()},
           {"lambda_coord", c.loss_weights.lambda_coord},
           {"lambda_noobj", c.loss_weights.lambda_noobj}};
    return j;
}

TrainConfig train_from_json(const json& j) {
    reject_unknown(j,
                   {"epochs", "batch_size", "learning_rate", "weight_decay", "seed", "eval_every",
                    "output_dir", "lambda_coord", "lambda_noobj"},
                   "train section");
    TrainConfig c;
    maybe(j, "epochs", c.epochs);
    maybe(j, "batch_size", c.batch_size);
    maybe(j, "learning_rate", c.learning_rate);
    maybe(j, "weight_decay", c.weight_decay);
    maybe(j, "seed", c.seed);
    maybe(j, "eval_every", c.eval_every);
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    maybe(j, "lambda_coord", c.loss_weights.lambda_coord);
    maybe(j, "lambda_noobj", c.loss_weights.lambda_noobj);
    c.validate();
    return c;
}

RunConfig parse_run_config(const json& doc) {
    reject_unknown(doc, {"data", "model", "train", "ae", "eval"}, "run config");
    RunConfig c;
    if (doc.contains("data")) c.data = scene_spec_from_json(doc.at("data"));
    if (doc.contains("model")) c.model = detector_from_json(doc.at("model"));
    if (doc.contains("train")) c.train = train_from_json(doc.at("train"));
    if (doc.contains("ae") && !doc.at("ae").is_null()) {
        c.train.ae = excitation_from_json(doc.at("ae"));
        if (c.train.ae->stage < 1 || c.train.ae->stage > c.model.stage_count())
            throw ConfigError("ae.stage " + std::to_string(c.train.ae->stage) +
                              " does not name a stage of the configured model");
        if (c.train.ae->schedule.max_iteration < 0)
            c.train.ae->schedule.max_iteration =
                std::max(1, static_cast<int>(0.8 * c.train.epochs));
    }
    if (doc.contains("eval")) {
        const json& e = doc.at("eval");
        reject_unknown(e, {"conf_threshold", "nms_threshold", "interp"}, "eval section");
        maybe(e, "conf_threshold", c.eval.conf_threshold);
        maybe(e, "nms_threshold", c.eval.nms_threshold);
        if (e.contains("interp")) {
            auto s = e.at("interp").get<std::string>();
            if (s == "coco101")
                c.eval.interp = ApInterp::Coco101;
            else if (s == "voc11")
                c.eval.interp = ApInterp::Voc11;
            else
                throw ConfigError("eval.interp must be \"coco101\" or \"voc11\"");
        }
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path.string());
    return parse_run_config(json::parse(is));
}

json run_config_to_json(const RunConfig& c) {
    json j{{"data", scene_spec_to_json(c.data)},
           {"model", detector_to_json(c.model)},
           {"train", train_to_json(c.train)},
           {"ae", c.train.ae ? excitation_to_json(*c.train.ae) : json(nullptr)}};
    j["eval"] = json{{"conf_threshold", c.eval.conf_threshold},
                     {"nms_threshold", c.eval.nms_threshold},
                     {"interp", c.eval.interp == ApInterp::Coco101 ? "coco101" : "voc11"}};
    return j;
}

}  // namespace aedet
