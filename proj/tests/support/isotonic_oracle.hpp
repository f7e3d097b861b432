#pragma once

// Exhaustive monotone least-squares fit: every split of the distinct-score
// groups into contiguous blocks, each block at its weighted mean, keeping
// the best nondecreasing one.

#include <algorithm>
#include <limits>
#include <map>
#include <vector>

namespace oracle {

// Returns the fitted value for each distinct score in increasing order.
inline std::vector<double> exhaustive_isotonic(const std::vector<double>& scores, const std::vector<double>& labels) {
  std::map<double, std::pair<double, double>> groups;  // score -> (sum, count)
  for (std::size_t i = 0; i < scores.size(); ++i) {
    groups[scores[i]].first += labels[i];
    groups[scores[i]].second += 1.0;
  }
  std::vector<double> sum, cnt;
  for (const auto& [s, g] : groups) {
    sum.push_back(g.first);
    cnt.push_back(g.second);
  }
  const std::size_t m = sum.size();
  double best_sse = std::numeric_limits<double>::infinity();
  std::vector<double> best;
  for (unsigned cuts = 0; cuts < (1U << (m - 1)); ++cuts) {
    std::vector<double> fit(m);
    std::size_t start = 0;
    bool monotone = true;
    double prev = -1.0;
    for (std::size_t g = 0; g < m; ++g) {
      const bool boundary = g + 1 == m || ((cuts >> g) & 1U);
      if (!boundary) continue;
      double s = 0.0, c = 0.0;
      for (std::size_t q = start; q <= g; ++q) {
        s += sum[q];
        c += cnt[q];
      }
      const double v = s / c;
      if (v < prev - 1e-15) monotone = false;
      prev = v;
      for (std::size_t q = start; q <= g; ++q) fit[q] = v;
      start = g + 1;
    }
    if (!monotone) continue;
    double sse = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const std::size_t idx = static_cast<std::size_t>(std::distance(groups.begin(), groups.find(scores[i])));
      sse += (fit[idx] - labels[i]) * (fit[idx] - labels[i]);
    }
    if (sse < best_sse - 1e-14) {
      best_sse = sse;
      best = fit;
    }
  }
  return best;
}

}  // namespace oracle
