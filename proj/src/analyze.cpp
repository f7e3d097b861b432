#include "apricot/analyze.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>

#include "apricot/csv.hpp"

namespace apricot::analyze {

namespace {

metrics::Metric ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string fmt_metric(const metrics::Metric& m) { return m ? csv::fmt_report(*m) : std::string(); }

}  // namespace

metrics::Confusion confusion_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
  metrics::Confusion c;
  c.tp = tp;
  c.fp = fp;
  c.tn = tn;
  c.fn = fn;
  c.sensitivity = ratio(tp, tp + fn);
  c.specificity = ratio(tn, tn + fp);
  c.ppv = ratio(tp, tp + fp);
  c.npv = ratio(tn, tn + fn);
  return c;
}

LeadTimeReport fp_lead_analysis(std::span<const WindowOutcome> windows, double window_h, double horizon_h) {
  if (!(window_h > 0.0)) throw std::invalid_argument("fp_lead_analysis: window length must be positive");
  std::map<std::string, std::vector<const WindowOutcome*>> by_admission;
  for (const auto& w : windows) by_admission[w.admission_id].push_back(&w);

  LeadTimeReport r;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (auto& [id, rows] : by_admission) {
    std::sort(rows.begin(), rows.end(),
              [](const WindowOutcome* a, const WindowOutcome* b) { return a->window_index < b->window_index; });
    std::vector<std::size_t> positives;
    for (const auto* w : rows)
      if (w->label) positives.push_back(w->window_index);

    for (const auto* w : rows) {
      if (w->label) {
        (w->predicted ? tp : fn) += 1;
        continue;
      }
      if (!w->predicted) {
        ++tn;
        continue;
      }
      ++fp;
      if (positives.empty()) {
        ++r.fp_without_outcome;
        continue;
      }
      ++r.fp_with_outcome;
      const auto next = std::upper_bound(positives.begin(), positives.end(), w->window_index);
      double lead_h;
      if (next != positives.end()) {
        lead_h = window_h * static_cast<double>(*next - w->window_index);
        if (lead_h >= horizon_h) ++r.recounted;
      } else {
        lead_h = -window_h * static_cast<double>(w->window_index - positives.back());
      }
      const auto bin = static_cast<long long>(std::floor(lead_h / window_h) * window_h);
      ++r.lead_histogram[bin];
    }
  }
  r.raw = confusion_from_counts(tp, fp, tn, fn);
  r.adjusted = confusion_from_counts(tp + r.recounted, fp - r.recounted, tn, fn);
  return r;
}

StatusConfusion status_confusion(std::span<const AcuityState> predicted, std::span<const AcuityState> truth) {
  if (predicted.size() != truth.size())
    throw std::invalid_argument("status_confusion: " + std::to_string(predicted.size()) + " predictions for " +
                                std::to_string(truth.size()) + " true states");
  StatusConfusion c;
  for (std::size_t i = 0; i < truth.size(); ++i)
    ++c.count[static_cast<std::size_t>(predicted[i])][static_cast<std::size_t>(truth[i])];
  for (std::size_t t = 0; t < kNumStates; ++t) {
    std::size_t total = 0;
    for (std::size_t p = 0; p < kNumStates; ++p) total += c.count[p][t];
    if (total == 0) continue;
    for (std::size_t p = 0; p < kNumStates; ++p)
      c.proportion[p][t] = static_cast<double>(c.count[p][t]) / static_cast<double>(total);
  }
  return c;
}

std::vector<DayDistribution> daily_distribution(std::span<const StateWindow> windows, std::size_t max_day,
                                                std::size_t windows_per_day) {
  if (windows_per_day == 0) throw std::invalid_argument("daily_distribution: windows_per_day must be positive");
  std::vector<DayDistribution> days(max_day);
  std::vector<std::array<std::size_t, kNumStates>> truth(max_day), pred(max_day);
  std::vector<std::set<std::string>> present(max_day);
  for (const auto& w : windows) {
    const std::size_t d = w.window_index / windows_per_day;
    if (d >= max_day) continue;
    ++days[d].windows;
    ++truth[d][static_cast<std::size_t>(w.truth)];
    ++pred[d][static_cast<std::size_t>(w.predicted)];
    present[d].insert(w.admission_id);
  }
  std::vector<DayDistribution> out;
  for (std::size_t d = 0; d < max_day; ++d) {
    if (days[d].windows == 0) continue;
    DayDistribution dd = days[d];
    dd.day = d + 1;
    dd.admissions = present[d].size();
    const double n = static_cast<double>(dd.windows);
    for (std::size_t s = 0; s < kNumStates; ++s) {
      dd.truth[s] = static_cast<double>(truth[d][s]) / n;
      dd.predicted[s] = static_cast<double>(pred[d][s]) / n;
    }
    out.push_back(dd);
  }
  return out;
}

void write_lead_histogram_csv(const std::filesystem::path& path, const LeadTimeReport& report) {
  auto out = open_out(path);
  out << "lead_h,false_positives\n";
  for (const auto& [bin, n] : report.lead_histogram) out << bin << ',' << n << '\n';
  out << "# fp_with_outcome=" << report.fp_with_outcome << " fp_without_outcome=" << report.fp_without_outcome
      << " recounted=" << report.recounted << '\n';
  out << "# raw_sensitivity=" << fmt_metric(report.raw.sensitivity) << " raw_ppv=" << fmt_metric(report.raw.ppv)
      << " adjusted_sensitivity=" << fmt_metric(report.adjusted.sensitivity)
      << " adjusted_ppv=" << fmt_metric(report.adjusted.ppv) << '\n';
}

void write_status_confusion_csv(const std::filesystem::path& path, const StatusConfusion& confusion) {
  auto out = open_out(path);
  out << "predicted,true,count,proportion\n";
  for (std::size_t t = 0; t < kNumStates; ++t)
    for (std::size_t p = 0; p < kNumStates; ++p)
      out << state_name(static_cast<AcuityState>(p)) << ',' << state_name(static_cast<AcuityState>(t)) << ','
          << confusion.count[p][t] << ',' << csv::fmt_report(confusion.proportion[p][t]) << '\n';
}

void write_daily_csv(const std::filesystem::path& path, std::span<const DayDistribution> days) {
  auto out = open_out(path);
  out << "day,windows,admissions,source,state,proportion\n";
  for (const auto& d : days) {
    for (int src = 0; src < 2; ++src)
      for (std::size_t s = 0; s < kNumStates; ++s)
        out << d.day << ',' << d.windows << ',' << d.admissions << ',' << (src == 0 ? "truth" : "predicted") << ','
            << state_name(static_cast<AcuityState>(s)) << ','
            << csv::fmt_report(src == 0 ? d.truth[s] : d.predicted[s]) << '\n';
  }
}

}  // namespace apricot::analyze
