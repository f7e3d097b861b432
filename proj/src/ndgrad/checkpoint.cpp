#include "apricot/ndgrad/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace apricot::ndgrad {

namespace {
constexpr const char* kFormat = "apricot-params-v1";
}

std::string params_to_json(const ParamMap& params) {
  nlohmann::ordered_json arrays = nlohmann::ordered_json::object();
  for (const auto& [name, array] : params) {
    nlohmann::ordered_json entry;
    entry["shape"] = array.shape();
    entry["values"] = std::vector<double>(array.values().begin(), array.values().end());
    arrays[name] = std::move(entry);
  }
  nlohmann::ordered_json doc;
  doc["format"] = kFormat;
  doc["arrays"] = std::move(arrays);
  return doc.dump();
}

ParamMap params_from_json(const std::string& text) {
  const auto doc = nlohmann::json::parse(text);
  if (doc.value("format", "") != kFormat) {
    throw std::runtime_error("checkpoint: unsupported format '" + doc.value("format", "") + "'");
  }
  ParamMap out;
  for (const auto& [name, entry] : doc.at("arrays").items()) {
    out.emplace(name, Array(entry.at("shape").get<Shape>(), entry.at("values").get<std::vector<double>>()));
  }
  return out;
}

void save_params(const std::filesystem::path& path, const ParamMap& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path.string());
  out << params_to_json(params) << '\n';
}

ParamMap load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return params_from_json(buffer.str());
}

}  // namespace apricot::ndgrad
