#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "apricot/model.hpp"
#include "apricot/synth.hpp"
#include "apricot/train.hpp"

namespace apricot::pipeline {

struct PrepareConfig {
  double train_fraction = 0.8;  // patients
  double min_prevalence = 0.05;
};

struct CalibrateConfig {
  double fraction = 0.1;  // validation windows used to fit the calibrators
  std::size_t bins = 10;
};

struct EvalConfig {
  std::size_t bootstrap_iterations = 100;
  std::size_t retry_cap = 20;
};

struct AttributeConfig {
  std::size_t samples = 96;  // validation windows
  std::size_t steps = 64;
};

struct AnalyzeConfig {
  double horizon_h = 4.0;
  std::size_t max_day = 15;
};

// Every module setting of one run. The nested synth/model/train seeds are
// derived from `seed`; model.vocab_size and model.n_static are replaced by
// the prepared data at training time.
struct RunConfig {
  std::uint64_t seed = 7;
  synth::SynthConfig synth;
  PrepareConfig prepare;
  model::ModelConfig model;
  train::TrainConfig train;
  CalibrateConfig calibrate;
  EvalConfig eval;
  AttributeConfig attribute;
  AnalyzeConfig analyze;
};

enum class ErrorCategory { kUsage, kConfig, kMissingInput, kStageOrder, kOutputExists, kNumeric, kData, kIo, kInternal };
std::string_view category_name(ErrorCategory category);
int exit_code(ErrorCategory category);

class PipelineError : public std::runtime_error {
 public:
  PipelineError(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

std::string to_json(const RunConfig& config);

struct ConfigSources {
  std::optional<std::filesystem::path> file;
  std::vector<std::string> overrides;  // "dotted.key=value"
  std::optional<std::uint64_t> seed;
};

// Defaults, then the file, then overrides, then the seed flag. Unknown keys,
// type mismatches and contradicting settings throw a config error naming the
// key.
RunConfig resolve_config(const ConfigSources& sources);

using Log = std::function<void(const std::string&)>;

struct StageOptions {
  std::filesystem::path out;
  bool force = false;
  Log log;
};

// Output layout: <out>/run_config.json and one subfolder per stage, each
// holding its own copy of the resolved config.
void run_synth(const RunConfig& config, const StageOptions& options);
void run_prepare(const RunConfig& config, const StageOptions& options,
                 const std::optional<std::filesystem::path>& data_dir = std::nullopt);
void run_train(const RunConfig& config, const StageOptions& options);
void run_calibrate(const RunConfig& config, const StageOptions& options);
void run_eval(const RunConfig& config, const StageOptions& options);
void run_attribute(const RunConfig& config, const StageOptions& options);
void run_analyze(const RunConfig& config, const StageOptions& options);
void run_pipeline(const RunConfig& config, const StageOptions& options,
                  const std::optional<std::filesystem::path>& data_dir = std::nullopt);

}  // namespace apricot::pipeline
