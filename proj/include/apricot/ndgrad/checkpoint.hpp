#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "apricot/ndgrad/array.hpp"

namespace apricot::ndgrad {

using ParamMap = std::map<std::string, Array>;

// Checkpoint format "apricot-params-v1" (JSON):
//   {"format": "apricot-params-v1",
//    "arrays": {"<name>": {"shape": [d0, d1, ...], "values": [v0, v1, ...]}, ...}}
// Names are sorted; values are written with round-trip precision so a reload
// is bit-identical.
void save_params(const std::filesystem::path& path, const ParamMap& params);
ParamMap load_params(const std::filesystem::path& path);

std::string params_to_json(const ParamMap& params);
ParamMap params_from_json(const std::string& text);

}  // namespace apricot::ndgrad
