// Brute-force references for the ranking metrics.
#pragma once

#include <set>
#include <utility>
#include <vector>

namespace oracle {

using V = std::vector<double>;

// Mann-Whitney probability over all positive/negative pairs, ties count half.
inline double pairwise_auroc(const V& s, const V& y) {
  double num = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return num / pairs;
}

// Best (threshold, J) over every observed score with `score >= t` positive;
// the lowest threshold wins ties.
inline std::pair<double, double> sweep_youden(const V& s, const V& y) {
  double best = -2.0, best_t = 0.0;
  std::set<double> thresholds(s.begin(), s.end());
  for (double t : thresholds) {
    double tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const bool pred = s[i] >= t;
      if (y[i] == 1) (pred ? tp : fn) += 1;
      else (pred ? fp : tn) += 1;
    }
    const double j = tp / (tp + fn) + tn / (tn + fp) - 1.0;
    if (j > best + 1e-12) {
      best = j;
      best_t = t;
    }
  }
  return {best_t, best};
}

}  // namespace oracle
