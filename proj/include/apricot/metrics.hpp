#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apricot/types.hpp"

namespace apricot::metrics {

// Undefined values (single-label inputs, 0/0 ratios) are std::nullopt.
using Metric = std::optional<double>;

// Mann-Whitney form with midranks; ties count one half.
Metric auroc(std::span<const double> scores, std::span<const double> labels);

// Step-interpolated average precision over distinct score thresholds.
Metric auprc(std::span<const double> scores, std::span<const double> labels);

struct Youden {
  double threshold = 0.0;
  double j = 0.0;
};
// Maximises sensitivity + specificity - 1 over observed scores with the rule
// "positive iff score >= t"; ties go to the smallest t.
std::optional<Youden> youden_threshold(std::span<const double> scores, std::span<const double> labels);

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  Metric sensitivity, specificity, ppv, npv;
};
Confusion confusion_at(std::span<const double> scores, std::span<const double> labels, double threshold);

struct Interval {
  Metric median, lo, hi;
};

// Statistic evaluated on a resample given as row indices.
using ResampleMetric = std::function<Metric(std::span<const std::size_t>)>;

struct BootstrapOptions {
  std::size_t iterations = 100;
  std::uint64_t seed = 0;
  std::size_t retry_cap = 20;  // redraws allowed for an undefined iteration
};

struct BootstrapResult {
  Interval interval;
  std::vector<double> values;  // per kept iteration
  std::size_t dropped = 0;     // iterations undefined after every redraw
};

// Seed of draw `attempt` of iteration `iteration`, derived independently so
// iterations can run in any order.
std::uint64_t iteration_seed(std::uint64_t seed, std::size_t iteration, std::size_t attempt);
// Indices drawn with replacement from [0, n).
std::vector<std::size_t> resample_indices(std::size_t n, std::uint64_t seed);

// Window-level bootstrap: median and 2.5 / 97.5 percentiles (linear
// interpolation). Throws if every iteration is undefined.
BootstrapResult bootstrap_ci(const ResampleMetric& metric, std::size_t n, const BootstrapOptions& options);

enum class RankSumMethod { kAuto, kExact, kNormal };

struct RankSum {
  double u = 0.0;  // Mann-Whitney U of sample a
  double p_two_sided = 1.0;
  bool exact = false;
};

// Midranks for ties. Auto uses exact enumeration when |a| + |b| <= 10 and the
// tie- and continuity-corrected normal approximation otherwise.
RankSum wilcoxon_ranksum(std::span<const double> a, std::span<const double> b,
                         RankSumMethod method = RankSumMethod::kAuto);

struct HeadReport {
  Interval auroc, auprc, sensitivity, specificity, ppv, npv;
  Metric point_auroc, point_auprc;
  Confusion point;
  std::optional<double> threshold;
  std::size_t n = 0;
  std::size_t positives = 0;
  std::size_t dropped_iterations = 0;
  // Bootstrap values in the order auroc, auprc, sensitivity, specificity,
  // ppv, npv; kept for rank-sum comparisons between reports.
  std::array<std::vector<double>, 6> bootstrap_values;
};

struct ReportOptions {
  BootstrapOptions bootstrap;
  std::optional<double> threshold;  // Youden on the evaluated data when absent
};

// Metrics with bootstrap intervals for one head. Without positives (or
// negatives) every metric is missing.
HeadReport head_report(std::span<const double> scores, std::span<const double> labels, const ReportOptions& options);

enum class Grouping { kAge, kSex, kRace };
Grouping parse_grouping(std::string_view name);
std::string_view grouping_name(Grouping g);

// "young" for 18 <= age <= 60, "old" above 60, "unknown" otherwise; sex and
// race use their recorded value, "unknown" when missing.
std::string group_label(const StaticProfile& profile, Grouping grouping);

// Partition of row indices by group; rows whose admission has no static
// profile land in "unknown".
std::map<std::string, std::vector<std::size_t>> subgroup_slices(std::span<const std::string> admission_ids,
                                                                 const std::map<std::string, StaticProfile>& statics,
                                                                 Grouping grouping);

std::map<std::string, HeadReport> subgroup_eval(std::span<const std::string> admission_ids,
                                                std::span<const double> scores, std::span<const double> labels,
                                                const std::map<std::string, StaticProfile>& statics,
                                                Grouping grouping, const ReportOptions& options);

// Long-form rows (metric, median, lo, hi) for a report table.
struct ReportRow {
  std::string metric;
  Interval value;
};
std::vector<ReportRow> report_rows(const HeadReport& report);

}  // namespace apricot::metrics
