#include "apricot/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "apricot/cohort.hpp"

namespace apricot::metrics {

namespace {

void check_lengths(const char* op, std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument(std::string(op) + ": " + std::to_string(scores.size()) + " scores vs " +
                                std::to_string(labels.size()) + " labels");
}

std::pair<std::size_t, std::size_t> class_counts(std::span<const double> labels) {
  std::size_t pos = 0;
  for (double y : labels) pos += y > 0.5;
  return {pos, labels.size() - pos};
}

// Midranks (1-based) of values.
std::vector<double> midranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

Metric ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

Metric auroc(std::span<const double> scores, std::span<const double> labels) {
  check_lengths("auroc", scores, labels);
  const auto [pos, neg] = class_counts(labels);
  if (pos == 0 || neg == 0) return std::nullopt;
  const std::vector<double> ranks = midranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] > 0.5) rank_sum += ranks[i];
  const double p = static_cast<double>(pos);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(neg));
}

Metric auprc(std::span<const double> scores, std::span<const double> labels) {
  check_lengths("auprc", scores, labels);
  const auto [pos, neg] = class_counts(labels);
  (void)neg;
  if (pos == 0) return std::nullopt;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  std::size_t tp = 0, fp = 0, prev_tp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] > 0.5) ++tp; else ++fp;
      ++j;
    }
    if (tp > prev_tp) {
      const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
      ap += static_cast<double>(tp - prev_tp) / static_cast<double>(pos) * precision;
      prev_tp = tp;
    }
    i = j;
  }
  return ap;
}

std::optional<Youden> youden_threshold(std::span<const double> scores, std::span<const double> labels) {
  check_lengths("youden_threshold", scores, labels);
  const auto [pos, neg] = class_counts(labels);
  if (pos == 0 || neg == 0) return std::nullopt;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sweep ascending thresholds; below the current distinct score everything
  // is predicted negative.
  long long tp = static_cast<long long>(pos), tn = 0;
  const long long p = static_cast<long long>(pos), n = static_cast<long long>(neg);
  long long best = std::numeric_limits<long long>::min();
  double best_t = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    // J * p * n = tp * n + tn * p - p * n, compared exactly
    const long long scaled = tp * n + tn * p - p * n;
    if (scaled > best) {
      best = scaled;
      best_t = t;
    }
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == t) {
      if (labels[order[j]] > 0.5) --tp; else ++tn;
      ++j;
    }
    i = j;
  }
  return Youden{best_t, static_cast<double>(best) / static_cast<double>(p * n)};
}

Confusion confusion_at(std::span<const double> scores, std::span<const double> labels, double threshold) {
  check_lengths("confusion_at", scores, labels);
  if (!std::isfinite(threshold)) throw std::invalid_argument("confusion_at: threshold must be finite");
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool y = labels[i] > 0.5;
    if (pred && y) ++c.tp;
    else if (pred) ++c.fp;
    else if (y) ++c.fn;
    else ++c.tn;
  }
  c.sensitivity = ratio(c.tp, c.tp + c.fn);
  c.specificity = ratio(c.tn, c.tn + c.fp);
  c.ppv = ratio(c.tp, c.tp + c.fp);
  c.npv = ratio(c.tn, c.tn + c.fn);
  return c;
}

std::uint64_t iteration_seed(std::uint64_t seed, std::size_t iteration, std::size_t attempt) {
  // splitmix64 finaliser over a combined key
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (1 + iteration) + 0xD1B54A32D192ED03ULL * attempt;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<std::size_t> resample_indices(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

namespace {

Interval summarize(std::vector<double> values) {
  if (values.empty()) return {};
  std::sort(values.begin(), values.end());
  return {cohort::percentile(values, 0.5), cohort::percentile(values, 0.025), cohort::percentile(values, 0.975)};
}

}  // namespace

BootstrapResult bootstrap_ci(const ResampleMetric& metric, std::size_t n, const BootstrapOptions& options) {
  if (n == 0) throw std::invalid_argument("bootstrap_ci: empty data");
  BootstrapResult out;
  for (std::size_t it = 0; it < options.iterations; ++it) {
    Metric value;
    for (std::size_t attempt = 0; attempt <= options.retry_cap && !value; ++attempt)
      value = metric(resample_indices(n, iteration_seed(options.seed, it, attempt)));
    if (value) out.values.push_back(*value);
    else ++out.dropped;
  }
  if (out.values.empty()) throw std::runtime_error("bootstrap_ci: metric undefined on every iteration");
  out.interval = summarize(out.values);
  return out;
}

RankSum wilcoxon_ranksum(std::span<const double> a, std::span<const double> b, RankSumMethod method) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wilcoxon_ranksum: both samples must be non-empty");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::vector<double> ranks = midranks(pooled);
  const std::size_t n1 = a.size(), n2 = b.size(), total = pooled.size();
  double w = 0.0;
  for (std::size_t i = 0; i < n1; ++i) w += ranks[i];
  const double d1 = static_cast<double>(n1), d2 = static_cast<double>(n2), dn = static_cast<double>(total);
  RankSum out;
  out.u = w - d1 * (d1 + 1.0) / 2.0;
  const double mean_w = d1 * (dn + 1.0) / 2.0;
  const bool exact = method == RankSumMethod::kExact || (method == RankSumMethod::kAuto && total <= 10);
  if (exact) {
    if (total > 20) throw std::invalid_argument("wilcoxon_ranksum: exact enumeration limited to 20 observations");
    const double observed = std::abs(w - mean_w);
    std::size_t extreme = 0, count = 0;
    std::vector<bool> pick(total, false);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(n1), true);
    // every n1-subset of the pooled ranks, via permutations of the mask
    std::sort(pick.begin(), pick.end());
    do {
      double s = 0.0;
      for (std::size_t i = 0; i < total; ++i)
        if (pick[i]) s += ranks[i];
      ++count;
      if (std::abs(s - mean_w) >= observed - 1e-9) ++extreme;
    } while (std::next_permutation(pick.begin(), pick.end()));
    out.p_two_sided = static_cast<double>(extreme) / static_cast<double>(count);
    out.exact = true;
    return out;
  }
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double var = d1 * d2 / 12.0 * ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
  if (var <= 0.0) {
    out.p_two_sided = 1.0;
    return out;
  }
  const double z = std::max(0.0, std::abs(out.u - d1 * d2 / 2.0) - 0.5) / std::sqrt(var);
  out.p_two_sided = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return out;
}

HeadReport head_report(std::span<const double> scores, std::span<const double> labels, const ReportOptions& options) {
  check_lengths("head_report", scores, labels);
  HeadReport r;
  r.n = scores.size();
  const auto [pos, neg] = class_counts(labels);
  r.positives = pos;
  if (pos == 0 || neg == 0) return r;

  r.threshold = options.threshold ? *options.threshold : youden_threshold(scores, labels)->threshold;
  r.point_auroc = auroc(scores, labels);
  r.point_auprc = auprc(scores, labels);
  r.point = confusion_at(scores, labels, *r.threshold);

  std::array<std::vector<double>, 6> values;
  std::vector<double> s, y;
  for (std::size_t it = 0; it < options.bootstrap.iterations; ++it) {
    bool done = false;
    for (std::size_t attempt = 0; attempt <= options.bootstrap.retry_cap && !done; ++attempt) {
      const auto idx = resample_indices(scores.size(), iteration_seed(options.bootstrap.seed, it, attempt));
      s.clear();
      y.clear();
      for (std::size_t i : idx) {
        s.push_back(scores[i]);
        y.push_back(labels[i]);
      }
      const auto [p, q] = class_counts(y);
      if (p == 0 || q == 0) continue;
      done = true;
      const Confusion c = confusion_at(s, y, *r.threshold);
      const Metric m[6] = {auroc(s, y), auprc(s, y), c.sensitivity, c.specificity, c.ppv, c.npv};
      for (std::size_t k = 0; k < 6; ++k)
        if (m[k]) values[k].push_back(*m[k]);
    }
    if (!done) ++r.dropped_iterations;
  }
  if (r.dropped_iterations == options.bootstrap.iterations && options.bootstrap.iterations > 0)
    throw std::runtime_error("head_report: every bootstrap resample held a single label");
  r.auroc = summarize(values[0]);
  r.auprc = summarize(values[1]);
  r.sensitivity = summarize(values[2]);
  r.specificity = summarize(values[3]);
  r.ppv = summarize(values[4]);
  r.npv = summarize(values[5]);
  r.bootstrap_values = std::move(values);
  return r;
}

Grouping parse_grouping(std::string_view name) {
  if (name == "age") return Grouping::kAge;
  if (name == "sex") return Grouping::kSex;
  if (name == "race") return Grouping::kRace;
  throw std::invalid_argument("unknown grouping '" + std::string(name) + "' (expected age, sex or race)");
}

std::string_view grouping_name(Grouping g) {
  switch (g) {
    case Grouping::kAge: return "age";
    case Grouping::kSex: return "sex";
    case Grouping::kRace: return "race";
  }
  return "";
}

std::string group_label(const StaticProfile& profile, Grouping grouping) {
  switch (grouping) {
    case Grouping::kAge:
      if (!profile.age_years) return "unknown";
      if (*profile.age_years > 60.0) return "old";
      if (*profile.age_years >= 18.0) return "young";
      return "unknown";
    case Grouping::kSex: return profile.sex.empty() ? "unknown" : profile.sex;
    case Grouping::kRace: return profile.race.empty() ? "unknown" : profile.race;
  }
  return "unknown";
}

std::map<std::string, std::vector<std::size_t>> subgroup_slices(std::span<const std::string> admission_ids,
                                                                 const std::map<std::string, StaticProfile>& statics,
                                                                 Grouping grouping) {
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < admission_ids.size(); ++i) {
    const auto it = statics.find(admission_ids[i]);
    out[it == statics.end() ? "unknown" : group_label(it->second, grouping)].push_back(i);
  }
  return out;
}

std::map<std::string, HeadReport> subgroup_eval(std::span<const std::string> admission_ids,
                                                std::span<const double> scores, std::span<const double> labels,
                                                const std::map<std::string, StaticProfile>& statics,
                                                Grouping grouping, const ReportOptions& options) {
  check_lengths("subgroup_eval", scores, labels);
  if (admission_ids.size() != scores.size()) throw std::invalid_argument("subgroup_eval: one admission id per score");
  std::map<std::string, HeadReport> out;
  for (const auto& [group, idx] : subgroup_slices(admission_ids, statics, grouping)) {
    std::vector<double> s, y;
    for (std::size_t i : idx) {
      s.push_back(scores[i]);
      y.push_back(labels[i]);
    }
    out.emplace(group, head_report(s, y, options));
  }
  return out;
}

std::vector<ReportRow> report_rows(const HeadReport& r) {
  return {{"auroc", r.auroc}, {"auprc", r.auprc}, {"sensitivity", r.sensitivity},
          {"specificity", r.specificity}, {"ppv", r.ppv}, {"npv", r.npv}};
}

}  // namespace apricot::metrics
