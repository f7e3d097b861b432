#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "apricot/types.hpp"

namespace apricot::synth {

// A measured variable: value = base + slope * severity + noise, sampled as a
// Poisson process. lead_h > 0 reads the severity that many hours ahead.
struct VariableSpec {
  std::string name;
  double rate_per_h = 1.0;
  double base = 0.0;
  double slope = 0.0;
  double noise = 0.0;
  double lead_h = 0.0;
  double lo = -1e300;
  double hi = 1e300;
  bool integer = false;
  double admission_prob = 1.0;  // chance the admission measures it at all
};

struct SynthConfig {
  std::size_t n_patients = 500;
  double readmission_prob = 0.1;
  double mean_stay_h = 120.0;
  double max_stay_h = 720.0;

  // Hourly severity: s' = s + reversion * (mu - s) + volatility * N(0,1) + jump.
  double severity_mean = 0.0;
  double severity_spread = 0.6;  // sd of the per-admission mean
  double reversion = 0.08;
  double volatility = 0.25;
  double jump_rate = 0.01;       // per hour
  double jump_size = 1.5;        // mean of the exponential jump
  double age_effect = 0.015;     // per year above 55
  double comorbidity_effect = 0.15;
  double noise_scale = 1.0;      // multiplies every stochastic term

  // The VP threshold is calibrated so about this fraction of windows is
  // unstable; MV and CRRT open at fixed offsets above it.
  double target_unstable_fraction = 0.3;
  double hysteresis = 0.5;
  double mv_offset = 0.6;
  double crrt_offset = 1.2;

  double bleed_rate = 0.002;     // massive transfusion episodes per hour
  double bleed_jump = 1.0;
  double minor_transfusion_rate = 0.01;

  double hazard_scale = 0.01;    // deaths per hour at lagged severity threshold + 1
  double hazard_slope = 3.0;
  double death_lag_h = 6.0;      // hazard follows severity smoothed over this many hours
  double discharge_level = 0.5;  // severity must be below this to leave

  std::vector<VariableSpec> variables = default_variables();
  std::uint64_t seed = 7;

  static std::vector<VariableSpec> default_variables();
  void validate() const;
};

std::string config_to_json(const SynthConfig& config);
SynthConfig config_from_json(const std::string& text);

// Generator-side record of one admission, used to derive labels without the
// phenotype module.
struct Trace {
  std::string admission_id;
  std::vector<double> severity;                            // value at the start of each hour
  std::vector<std::array<bool, kNumTherapies>> therapy;    // per hour, MV/VP/CRRT
  std::vector<Interval> massive_transfusion;               // merged, clipped to the stay
};

struct SynthCohort {
  std::vector<std::string> comorbidity_names;
  std::vector<AdmissionRecord> admissions;
  std::vector<Trace> traces;  // aligned with admissions
  double unstable_threshold = 0.0;  // VP opening threshold actually used
};

SynthCohort generate(const SynthConfig& config);

struct OracleLabels {
  std::vector<AcuityState> states;
  std::vector<std::array<bool, kNumTherapies>> activity;  // per window
  std::vector<LabelVector> targets;
};

std::vector<OracleLabels> oracle_labels(const SynthCohort& cohort);

}  // namespace apricot::synth
