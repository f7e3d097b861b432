#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "apricot/cohort.hpp"
#include "apricot/model.hpp"

namespace apricot::train {

struct TrainConfig {
  std::size_t epochs = 12;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t patience = 3;  // epochs without val improvement before stopping
  void validate() const;
};

std::string config_to_json(const TrainConfig& config);
TrainConfig config_from_json(const std::string& text);

struct PatientSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
};

// Shuffles the sorted unique ids with the seed; round(frac * n) go to train.
PatientSplit split_patients(std::span<const std::string> patient_ids, double frac, std::uint64_t seed);

struct SampleSplit {
  std::vector<cohort::WindowSample> train;
  std::vector<cohort::WindowSample> val;
};
SampleSplit partition_samples(std::span<const cohort::WindowSample> samples, const PatientSplit& split);

struct HeadWeight {
  double pos = 0.0;
  double neg = 0.0;
  bool active = false;
};
using HeadWeights = std::array<HeadWeight, kNumHeads>;

// Balanced class weights; a head lacking either class is masked out.
HeadWeights head_weights(std::span<const LabelVector> labels);
HeadWeights head_weights(std::span<const cohort::WindowSample> samples);

// Mean over samples of the summed weighted per-head BCE, on an existing tape.
ndgrad::Var batch_loss(const model::Network& net, std::span<const model::ModelInput> inputs,
                       std::span<const LabelVector> targets, const HeadWeights& weights);

struct AdamState {
  model::ParamMap m;
  model::ParamMap v;
  std::size_t step = 0;
};

// One adaptive-moment update; grads keyed like params.
void adam_step(model::ParamMap& params, const model::ParamMap& grads, AdamState& state, const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::array<double, kNumHeads> head_val_loss{};
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  model::ParamMap params;  // best validation epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(const model::ModelConfig& model_config, model::ParamMap initial,
                  std::span<const cohort::WindowSample> train_set, std::span<const cohort::WindowSample> val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

// Weighted loss of a dataset, total and per head, without building gradients.
struct DatasetLoss {
  double total = 0.0;
  std::array<double, kNumHeads> per_head{};
};
DatasetLoss evaluate_loss(const model::ParamMap& params, const model::ModelConfig& config,
                          std::span<const cohort::WindowSample> samples, const HeadWeights& weights);

void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history);

struct ScoreRow {
  std::string patient_id;
  std::string admission_id;
  std::size_t window_index = 0;
  AcuityState current_state = AcuityState::kStable;
  model::HeadProbs probs{};
  LabelVector targets{};
};

std::vector<ScoreRow> predict_scores(const model::ParamMap& params, const model::ModelConfig& config,
                                     std::span<const cohort::WindowSample> samples);

void write_scores_csv(const std::filesystem::path& path, std::span<const ScoreRow> rows);
std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path);

}  // namespace apricot::train
