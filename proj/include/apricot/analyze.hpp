#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "apricot/metrics.hpp"
#include "apricot/types.hpp"

namespace apricot::analyze {

// One thresholded prediction for one window of one admission.
struct WindowOutcome {
  std::string admission_id;
  std::size_t window_index = 0;
  bool predicted = false;
  bool label = false;
};

struct LeadTimeReport {
  std::size_t fp_with_outcome = 0;     // admission has at least one positive window
  std::size_t fp_without_outcome = 0;
  // Lead hours (bin start, bin width = window length) to the next positive
  // window; negative for false positives after the last positive window.
  std::map<long long, std::size_t> lead_histogram;
  std::size_t recounted = 0;  // false positives counted as true positives after adjustment
  metrics::Confusion raw, adjusted;
};

// False positives are placed relative to the next positive-label window of the
// same admission; leads of at least `horizon_h` become true positives in the
// adjusted counts.
LeadTimeReport fp_lead_analysis(std::span<const WindowOutcome> windows, double window_h = 4.0, double horizon_h = 4.0);

// Counts from which the sensitivity/specificity/PPV/NPV ratios are derived.
metrics::Confusion confusion_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn);

// Entry [predicted][truth]; each observed truth column sums to 1.
struct StatusConfusion {
  std::array<std::array<double, kNumStates>, kNumStates> proportion{};
  std::array<std::array<std::size_t, kNumStates>, kNumStates> count{};
};
StatusConfusion status_confusion(std::span<const AcuityState> predicted, std::span<const AcuityState> truth);

struct StateWindow {
  std::string admission_id;
  std::size_t window_index = 0;
  AcuityState truth = AcuityState::kStable;
  AcuityState predicted = AcuityState::kStable;
};

struct DayDistribution {
  std::size_t day = 0;      // 1-based
  std::size_t windows = 0;  // windows observed that day
  std::size_t admissions = 0;
  std::array<double, kNumStates> truth{};
  std::array<double, kNumStates> predicted{};
};

// Windows map to day floor(window_index / windows_per_day) + 1; days with no
// windows are omitted.
std::vector<DayDistribution> daily_distribution(std::span<const StateWindow> windows, std::size_t max_day = 15,
                                                std::size_t windows_per_day = 6);

void write_lead_histogram_csv(const std::filesystem::path& path, const LeadTimeReport& report);
void write_status_confusion_csv(const std::filesystem::path& path, const StatusConfusion& confusion);
void write_daily_csv(const std::filesystem::path& path, std::span<const DayDistribution> days);

}  // namespace apricot::analyze
