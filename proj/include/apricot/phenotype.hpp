#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "apricot/types.hpp"

namespace apricot::phenotype {

inline constexpr double kWindowHours = 4.0;
inline constexpr double kTransfusionLookbackHours = 24.0;
inline constexpr double kMassiveTransfusionUnits = 10.0;

// Number of windows covering a stay, terminal partial window included.
std::size_t window_count(double los_h, double window_h = kWindowHours);

// Maximal intervals where the units transfused in the trailing (s - 24, s]
// reach the massive-transfusion threshold. Events must be sorted by time;
// negative units throw. When los_h is given, intervals are clipped to it.
std::vector<Interval> bt_intervals(std::span<const Transfusion> events, std::optional<double> los_h = std::nullopt);

// Per window, whether each of MV/VP/CRRT overlaps it with positive measure.
using TherapyActivity = std::vector<std::array<bool, kNumTherapies>>;
TherapyActivity therapy_activity(const AdmissionRecord& admission, double window_h = kWindowHours);

// One state per window. A window is Unstable when MV, VP, CRRT or massive
// transfusion overlaps it; the terminal window carries the disposition.
std::vector<AcuityState> label_states(const AdmissionRecord& admission, double window_h = kWindowHours);

// Targets for windows 1..n-1: entry t describes window t+1 as seen from t.
std::vector<LabelVector> label_vector(std::span<const AcuityState> states, const TherapyActivity& activity);

struct TransitionMatrix {
  // Rows: Stable, Unstable. Columns: Stable, Unstable, Discharge, Deceased.
  std::array<std::optional<std::array<double, kNumStates>>, 2> rows;
  std::array<std::array<std::size_t, kNumStates>, 2> counts{};
};

// Throws if no transition out of Stable or Unstable is observed.
TransitionMatrix transition_matrix(std::span<const std::vector<AcuityState>> state_sequences);

struct AdmissionLabels {
  std::vector<AcuityState> states;
  TherapyActivity activity;
  std::vector<LabelVector> targets;
};

AdmissionLabels label_admission(const AdmissionRecord& admission, double window_h = kWindowHours);

// Labels CSV: admission_id, window_index, state, then the nine target columns
// (the targets of the window as predicted from the previous one).
void write_labels_csv(const std::filesystem::path& path, std::span<const AdmissionRecord> admissions,
                      std::span<const AdmissionLabels> labels);

}  // namespace apricot::phenotype
