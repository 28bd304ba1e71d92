#pragma once

#include "aedet/data.h"
#include "aedet/eval.h"
#include "aedet/model.h"
#include "aedet/train.h"

#include <nlohmann/json.hpp>

#include <optional>

namespace aedet {

/// Whole-run configuration document. Unknown keys anywhere in the
/// document are rejected.
struct RunConfig {
    SceneSpec data;
    DetectorConfig model;
    TrainConfig train;  // train.ae mirrors the "ae" section
    EvalOptions eval;
};

RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_to_json(const RunConfig& config);

nlohmann::json detector_to_json(const DetectorConfig& c);
DetectorConfig detector_from_json(const nlohmann::json& j);
nlohmann::json excitation_to_json(const ExcitationConfig& c);
ExcitationConfig excitation_from_json(const nlohmann::json& j);
nlohmann::json scene_spec_to_json(const SceneSpec& s);
SceneSpec scene_spec_from_json(const nlohmann::json& j);
nlohmann::json train_to_json(const TrainConfig& c);
TrainConfig train_from_json(const nlohmann::json& j);

}  // namespace aedet
