#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "apricot/phenotype.hpp"
#include "apricot/types.hpp"

namespace apricot::cohort {

struct CohortSchema {
  std::vector<std::string> routine_vitals{"heart_rate", "resp_rate", "sbp", "dbp", "temperature", "spo2"};
  double min_los_h = 12.0;
  double max_los_h = 720.0;
};

struct Rejection {
  std::string admission_id;
  std::string reason;
};

struct FilterResult {
  std::vector<AdmissionRecord> kept;
  std::vector<Rejection> rejected;
};

// Keeps admissions with 12 <= los_h <= 720, age/BMI/sex/race and disposition
// present, and at least one event for each routine vital. Structurally
// malformed records are rejected with a reason.
FilterResult apply_admission_filters(std::vector<AdmissionRecord> admissions, const CohortSchema& schema);

class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> names);

  std::size_t size() const noexcept { return names_.size(); }
  std::optional<int> code(const std::string& name) const;
  const std::string& name(int code) const { return names_.at(static_cast<std::size_t>(code)); }
  const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
};

// A variable qualifies when it appears in at least min_prevalence of the
// admissions; codes follow first appearance in cohort order.
Vocabulary build_vocabulary(std::span<const AdmissionRecord> admissions, double min_prevalence = 0.05);

// Linear interpolation between order statistics at position q * (n - 1).
double percentile(std::span<const double> sorted, double q);

struct VariableScale {
  double lower = 0.0;  // 1st percentile
  double upper = 0.0;  // 99th percentile
  double min = 0.0;    // over values inside [lower, upper]
  double max = 0.0;

  bool in_bounds(double v) const { return v >= lower && v <= upper; }
  // Min-max scale clamped to [0, 1]; 0 when min == max.
  double scale(double v) const;
};

struct StaticScale {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct ScalerStats {
  std::vector<VariableScale> variables;  // indexed by vocabulary code

  // Static layout: age, bmi, cci, sex one-hot, race one-hot, comorbidities.
  std::vector<std::string> sex_levels;
  std::vector<std::string> race_levels;
  std::size_t n_comorbidities = 0;
  std::vector<std::string> static_names;
  std::vector<StaticScale> static_features;

  std::size_t n_static() const noexcept { return static_features.size(); }
  // Raw (unscaled) static features; NaN marks a missing numeric entry.
  std::vector<double> raw_static(const StaticProfile& profile) const;
  // Mean-imputed, min-max scaled static vector.
  std::vector<double> static_vector(const StaticProfile& profile) const;
};

ScalerStats fit_scaler(std::span<const AdmissionRecord> admissions, const Vocabulary& vocabulary);

struct PreparedEvent {
  double time_h = 0.0;
  int code = 0;
  double value = 0.0;  // scaled to [0, 1]
};

struct PreparedAdmission {
  std::string patient_id;
  std::string admission_id;
  double los_h = 0.0;
  std::vector<PreparedEvent> events;
  std::vector<double> static_vec;
};

PreparedAdmission preprocess_admission(const AdmissionRecord& admission, const Vocabulary& vocabulary,
                                       const ScalerStats& scaler);

struct WindowSample {
  std::string patient_id;
  std::string admission_id;
  std::size_t window_index = 0;  // observation window [4t, 4t+4)
  std::vector<double> times;     // offset within the window, in [0, 1)
  std::vector<int> codes;
  std::vector<double> values;
  std::vector<double> static_vec;
  LabelVector targets{};  // describe window t+1
  AcuityState current_state = AcuityState::kStable;
};

// One sample per observation window t whose successor t+1 is still part of
// the stay; events go to window floor(time_h / window_h).
std::vector<WindowSample> window_events(const PreparedAdmission& prepared, const phenotype::AdmissionLabels& labels,
                                        double window_h = phenotype::kWindowHours);

// File formats --------------------------------------------------------------
//   events.jsonl        {"patient_id","admission_id","time_h","variable","value"} per line
//   static.csv          patient_id,admission_id,age,bmi,sex,race,cci,<comorbidity flags...>
//   therapy.csv         admission_id,therapy,start_h,end_h   (therapy in MV|VP|CRRT)
//   transfusions.csv    admission_id,time_h,units
//   dispositions.csv    admission_id,disposition,end_h       (deceased|discharged_alive)
// Admission order follows static.csv.
struct CohortFiles {
  std::vector<std::string> comorbidity_names;
  std::vector<AdmissionRecord> admissions;
};

CohortFiles load_cohort(const std::filesystem::path& dir);
void write_cohort(const std::filesystem::path& dir, std::span<const AdmissionRecord> admissions,
                  std::span<const std::string> comorbidity_names);

// Vocabulary / scaler persistence (JSON).
std::string vocabulary_to_json(const Vocabulary& vocabulary);
Vocabulary vocabulary_from_json(const std::string& text);
std::string scaler_to_json(const ScalerStats& scaler);
ScalerStats scaler_from_json(const std::string& text);

// Window cache: one JSON object per sample.
void write_windows(const std::filesystem::path& path, std::span<const WindowSample> samples);
std::vector<WindowSample> read_windows(const std::filesystem::path& path);

}  // namespace apricot::cohort
