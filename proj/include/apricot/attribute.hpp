#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "apricot/cohort.hpp"
#include "apricot/model.hpp"

namespace apricot::attribute {

using ndgrad::Array;
using ndgrad::Tape;
using ndgrad::Var;

// Scalar function of a temporal embedding [L, d] and a static row [1, f].
using PathFunction = std::function<Var(Tape&, Var temporal, Var static_row)>;

struct PathAttribution {
  Array temporal;      // same shape as the temporal input
  Array static_part;   // same shape as the static input
  double f_input = 0.0;
  double f_baseline = 0.0;
};

// Integrated gradients along the straight path from the baselines to the
// inputs, right Riemann sum over k = 1..steps.
PathAttribution integrate_path(const PathFunction& f, const Array& temporal, const Array& static_row,
                               const Array& temporal_baseline, const Array& static_baseline, std::size_t steps);

struct Attribution {
  std::size_t head = 0;
  std::vector<double> per_event;   // one per input row; padding rows are 0
  std::vector<double> per_static;  // one per static feature
  double f_input = 0.0;            // head logit at the input
  double f_baseline = 0.0;         // head logit at the zero baseline
  double gap = 0.0;                // |sum of attributions - (f_input - f_baseline)|
};

// Attributions of the pre-sigmoid logits of `heads` for one input. The
// temporal path runs over the event-content embedding with a zero baseline
// while the positional term and padding rows stay fixed; the static path runs
// over the scaled static feature vector from zero. Both move together, so the
// gap covers their sum.
std::vector<Attribution> integrated_gradients(const model::ParamMap& params, const model::ModelConfig& config,
                                              const model::ModelInput& input, std::span<const std::size_t> heads,
                                              std::size_t steps = 64);

Attribution integrated_gradients(const model::ParamMap& params, const model::ModelConfig& config,
                                 const model::ModelInput& input, std::size_t head, std::size_t steps = 64);

struct SampleAttribution {
  std::string admission_id;
  std::size_t window_index = 0;
  std::vector<int> codes;  // aligned with per_event of each head
  std::vector<Attribution> heads;
};

struct VariableScore {
  std::string variable;
  bool is_static = false;
  std::array<double, kNumPrimaryHeads> signed_sum{};
  std::array<double, kNumPrimaryHeads> abs_sum{};
  double total = 0.0;  // abs_sum over the primary heads
  std::size_t rank = 0;  // 1-based
};

// Per variable and primary head, signed and absolute sums of per-event (or
// per-feature) attributions; ordered by total, ties by name.
std::vector<VariableScore> rank_variables(std::span<const SampleAttribution> samples,
                                          const cohort::Vocabulary& vocabulary,
                                          std::span<const std::string> static_names);

void write_ranking_csv(const std::filesystem::path& path, std::span<const VariableScore> ranking);
void write_trajectories_jsonl(const std::filesystem::path& path, std::span<const SampleAttribution> samples,
                              const cohort::Vocabulary& vocabulary);

}  // namespace apricot::attribute
