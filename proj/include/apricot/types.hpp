#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace apricot {

struct ClinicalEvent {
  double time_h = 0.0;  // hours since ICU admission
  std::string variable;
  double value = 0.0;
};

struct StaticProfile {
  std::optional<double> age_years;
  std::optional<double> bmi;
  std::string sex;   // empty = missing
  std::string race;  // empty = missing
  std::vector<int> comorbidities;
  std::optional<int> cci;
};

// Half-open [start_h, end_h).
struct Interval {
  double start_h = 0.0;
  double end_h = 0.0;
  friend bool operator==(const Interval&, const Interval&) = default;
};

struct Transfusion {
  double time_h = 0.0;
  double units = 0.0;
};

enum class Therapy : std::size_t { kMV = 0, kVP = 1, kCRRT = 2 };
inline constexpr std::size_t kNumTherapies = 3;
std::string_view therapy_name(Therapy therapy);
std::optional<Therapy> parse_therapy(std::string_view name);

enum class Disposition { kDischargedAlive, kDeceased };
std::string_view disposition_name(Disposition d);
std::optional<Disposition> parse_disposition(std::string_view name);

struct AdmissionRecord {
  std::string patient_id;
  std::string admission_id;
  double los_h = 0.0;
  std::vector<ClinicalEvent> events;  // sorted by time, ties in source order
  StaticProfile static_profile;
  std::array<std::vector<Interval>, kNumTherapies> therapy_intervals;
  std::vector<Transfusion> transfusions;
  std::optional<Disposition> disposition;
};

// Ordered least to most severe is Discharge < Stable < Unstable < Deceased;
// the enumerator order below is the storage order used in reports.
enum class AcuityState : std::uint8_t { kStable = 0, kUnstable = 1, kDischarge = 2, kDeceased = 3 };
inline constexpr std::size_t kNumStates = 4;
std::string_view state_name(AcuityState s);
std::optional<AcuityState> parse_state(std::string_view name);

// Prediction heads, in model output order.
enum class Head : std::size_t {
  kDischarge = 0,
  kStable,
  kUnstable,
  kDeceased,
  kUnstableToStable,
  kStableToUnstable,
  kOnsetMV,
  kOnsetVP,
  kOnsetCRRT,
};
inline constexpr std::size_t kNumHeads = 9;
inline constexpr std::size_t kNumPrimaryHeads = 4;
std::string_view head_name(std::size_t head);
std::optional<std::size_t> parse_head(std::string_view name);

inline constexpr std::size_t head_index(Head h) { return static_cast<std::size_t>(h); }

// Nine 0/1 targets describing one predicted window.
using LabelVector = std::array<std::uint8_t, kNumHeads>;

}  // namespace apricot
