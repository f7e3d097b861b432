#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "apricot/types.hpp"

namespace apricot::calibrate {

// Stepwise-constant monotone map. Between breakpoints the value of the
// nearest breakpoint at or below the score is used; outside the fitted range
// the end values apply.
struct IsotonicMap {
  std::vector<double> x;  // strictly increasing
  std::vector<double> y;  // nondecreasing

  double operator()(double score) const;
};

// Least-squares monotone fit by pool-adjacent-violators. Equal scores are
// pooled first, so the map has one breakpoint per distinct score. Targets are
// normally 0/1 but any values in [0,1] are accepted.
IsotonicMap isotonic_fit(std::span<const double> scores, std::span<const double> targets);

// Three isotonic maps, each fit on two of three seeded folds; the output is
// the mean of the three evaluations.
struct Calibrator {
  std::array<IsotonicMap, 3> maps;
  std::array<bool, 3> constant{};  // training folds held a single label value

  double operator()(double score) const;
};

Calibrator calibrate_cv3(std::span<const double> scores, std::span<const double> labels, std::uint64_t seed);

double brier(std::span<const double> probs, std::span<const double> labels);

struct CurveBin {
  double mean_prob = 0.0;
  double frac_pos = 0.0;
  std::size_t count = 0;
};

// Equal-width bins on [0,1]; empty bins are left out.
std::vector<CurveBin> calibration_curve(std::span<const double> probs, std::span<const double> labels,
                                        std::size_t n_bins = 10);

// One calibrator per head, in head order.
using HeadCalibrators = std::array<Calibrator, kNumHeads>;

std::string calibrators_to_json(const HeadCalibrators& calibrators);
HeadCalibrators calibrators_from_json(const std::string& text);

}  // namespace apricot::calibrate
