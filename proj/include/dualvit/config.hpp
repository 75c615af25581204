#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "dualvit/model.hpp"

namespace dualvit {

// JSON form of ModelConfig (schema in docs/config.schema.json):
//   {"preset": "S"?, "name": str?, "stages": [4 x {depth, heads, channels,
//    ratio_pixel, ratio_semantic, patch, kind: "dual"|"merge"}]?,
//    "m": int?, "num_classes": int?, "resolution": int?, "pos_embed": bool?,
//    "seed": int?}
// Without "preset", "stages" is required. Unknown keys are ConfigErrors.
nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);
ModelConfig load_config_file(const std::filesystem::path& path);

// "key=value" pairs applied to the JSON form, e.g. "m=16", "pos_embed=false",
// "stages.2.heads=8". Values are parsed as JSON, falling back to a string.
ModelConfig apply_overrides(const ModelConfig& config, const std::vector<std::string>& overrides);

}  // namespace dualvit
