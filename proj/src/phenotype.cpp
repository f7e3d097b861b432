#include "apricot/phenotype.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace apricot::phenotype {

namespace {

bool overlaps(const Interval& iv, double lo, double hi) { return std::max(iv.start_h, lo) < std::min(iv.end_h, hi); }

}  // namespace

std::size_t window_count(double los_h, double window_h) {
  if (los_h <= 0.0) return 0;
  return static_cast<std::size_t>(std::ceil(los_h / window_h));
}

std::vector<Interval> bt_intervals(std::span<const Transfusion> events, std::optional<double> los_h) {
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (events[i].units < 0.0) {
      throw std::invalid_argument("bt_intervals: negative units at t=" + std::to_string(events[i].time_h));
    }
    if (i > 0 && events[i].time_h < events[i - 1].time_h) {
      throw std::invalid_argument("bt_intervals: transfusion events not sorted by time");
    }
  }
  // The trailing sum only changes when an event enters (its time) or leaves
  // (its time + 24 h), so it is constant between consecutive breakpoints.
  std::vector<double> points;
  points.reserve(events.size() * 2);
  for (const Transfusion& e : events) {
    points.push_back(e.time_h);
    points.push_back(e.time_h + kTransfusionLookbackHours);
  }
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());

  std::vector<Interval> out;
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    const double p = points[i];
    double units = 0.0;
    for (const Transfusion& e : events)
      if (e.time_h <= p && e.time_h + kTransfusionLookbackHours > p) units += e.units;
    if (units < kMassiveTransfusionUnits) continue;
    if (!out.empty() && out.back().end_h == p) {
      out.back().end_h = points[i + 1];
    } else {
      out.push_back({p, points[i + 1]});
    }
  }
  if (los_h) {
    std::vector<Interval> clipped;
    for (Interval iv : out) {
      iv.end_h = std::min(iv.end_h, *los_h);
      if (iv.start_h < iv.end_h) clipped.push_back(iv);
    }
    out = std::move(clipped);
  }
  return out;
}

TherapyActivity therapy_activity(const AdmissionRecord& admission, double window_h) {
  const std::size_t n = window_count(admission.los_h, window_h);
  TherapyActivity activity(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double lo = window_h * static_cast<double>(t);
    const double hi = lo + window_h;
    for (std::size_t k = 0; k < kNumTherapies; ++k) {
      const auto& ivs = admission.therapy_intervals[k];
      activity[t][k] = std::any_of(ivs.begin(), ivs.end(), [&](const Interval& iv) { return overlaps(iv, lo, hi); });
    }
  }
  return activity;
}

std::vector<AcuityState> label_states(const AdmissionRecord& admission, double window_h) {
  if (!admission.disposition) {
    throw std::invalid_argument("label_states: admission " + admission.admission_id + " has no disposition");
  }
  const std::size_t n = window_count(admission.los_h, window_h);
  const TherapyActivity activity = therapy_activity(admission, window_h);
  const std::vector<Interval> bt = bt_intervals(admission.transfusions, admission.los_h);
  std::vector<AcuityState> states(n, AcuityState::kStable);
  for (std::size_t t = 0; t < n; ++t) {
    const double lo = window_h * static_cast<double>(t);
    const double hi = lo + window_h;
    const bool therapy = std::any_of(activity[t].begin(), activity[t].end(), [](bool b) { return b; });
    const bool massive = std::any_of(bt.begin(), bt.end(), [&](const Interval& iv) { return overlaps(iv, lo, hi); });
    if (therapy || massive) states[t] = AcuityState::kUnstable;
  }
  if (n > 0) {
    states.back() =
        *admission.disposition == Disposition::kDeceased ? AcuityState::kDeceased : AcuityState::kDischarge;
  }
  return states;
}

std::vector<LabelVector> label_vector(std::span<const AcuityState> states, const TherapyActivity& activity) {
  if (activity.size() != states.size()) {
    throw std::invalid_argument("label_vector: " + std::to_string(states.size()) + " states vs " +
                                std::to_string(activity.size()) + " activity windows");
  }
  std::vector<LabelVector> out;
  if (states.size() < 2) return out;
  out.reserve(states.size() - 1);
  for (std::size_t t = 0; t + 1 < states.size(); ++t) {
    const AcuityState cur = states[t];
    const AcuityState next = states[t + 1];
    LabelVector y{};
    switch (next) {
      case AcuityState::kDischarge: y[head_index(Head::kDischarge)] = 1; break;
      case AcuityState::kStable: y[head_index(Head::kStable)] = 1; break;
      case AcuityState::kUnstable: y[head_index(Head::kUnstable)] = 1; break;
      case AcuityState::kDeceased: y[head_index(Head::kDeceased)] = 1; break;
    }
    y[head_index(Head::kUnstableToStable)] = cur == AcuityState::kUnstable && next == AcuityState::kStable;
    y[head_index(Head::kStableToUnstable)] = cur == AcuityState::kStable && next == AcuityState::kUnstable;
    for (std::size_t k = 0; k < kNumTherapies; ++k) {
      y[head_index(Head::kOnsetMV) + k] = activity[t + 1][k] && !activity[t][k];
    }
    out.push_back(y);
  }
  return out;
}

TransitionMatrix transition_matrix(std::span<const std::vector<AcuityState>> state_sequences) {
  TransitionMatrix m;
  std::size_t total = 0;
  for (const auto& seq : state_sequences) {
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      const auto from = static_cast<std::size_t>(seq[t]);
      if (from > 1) continue;  // Discharge/Deceased are end outcomes
      ++m.counts[from][static_cast<std::size_t>(seq[t + 1])];
      ++total;
    }
  }
  if (total == 0) throw std::invalid_argument("transition_matrix: no transitions observed");
  for (std::size_t r = 0; r < 2; ++r) {
    std::size_t row_total = 0;
    for (std::size_t c : m.counts[r]) row_total += c;
    if (row_total == 0) continue;
    std::array<double, kNumStates> row{};
    for (std::size_t c = 0; c < kNumStates; ++c)
      row[c] = static_cast<double>(m.counts[r][c]) / static_cast<double>(row_total);
    m.rows[r] = row;
  }
  return m;
}

AdmissionLabels label_admission(const AdmissionRecord& admission, double window_h) {
  AdmissionLabels out;
  out.states = label_states(admission, window_h);
  out.activity = therapy_activity(admission, window_h);
  out.targets = label_vector(out.states, out.activity);
  return out;
}

void write_labels_csv(const std::filesystem::path& path, std::span<const AdmissionRecord> admissions,
                      std::span<const AdmissionLabels> labels) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "admission_id,window_index,state";
  for (std::size_t h = 0; h < kNumHeads; ++h) out << ',' << head_name(h);
  out << '\n';
  for (std::size_t a = 0; a < admissions.size(); ++a) {
    const AdmissionLabels& lab = labels[a];
    for (std::size_t w = 0; w < lab.states.size(); ++w) {
      out << admissions[a].admission_id << ',' << w << ',' << state_name(lab.states[w]);
      for (std::size_t h = 0; h < kNumHeads; ++h) {
        out << ',';
        if (w > 0) out << static_cast<int>(lab.targets[w - 1][h]);
      }
      out << '\n';
    }
  }
}

}  // namespace apricot::phenotype
