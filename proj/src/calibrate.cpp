#include "apricot/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace apricot::calibrate {

using nlohmann::json;

double IsotonicMap::operator()(double score) const {
  if (x.empty()) throw std::logic_error("isotonic map is empty");
  if (score <= x.front()) return y.front();
  const auto it = std::upper_bound(x.begin(), x.end(), score);
  return y[static_cast<std::size_t>(it - x.begin()) - 1];
}

IsotonicMap isotonic_fit(std::span<const double> scores, std::span<const double> targets) {
  if (scores.size() != targets.size()) throw std::invalid_argument("isotonic_fit: scores and labels differ in length");
  if (scores.size() < 2) throw std::invalid_argument("isotonic_fit: need at least two samples");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // tie groups: distinct score, label sum, count
  struct Block {
    double sum;
    double weight;
    std::size_t first_group;
  };
  std::vector<double> xs;
  std::vector<Block> groups;
  for (std::size_t i : order) {
    if (!std::isfinite(scores[i])) throw std::invalid_argument("isotonic_fit: non-finite score");
    if (xs.empty() || scores[i] != xs.back()) {
      xs.push_back(scores[i]);
      groups.push_back({0.0, 0.0, groups.size()});
    }
    groups.back().sum += targets[i];
    groups.back().weight += 1.0;
  }

  std::vector<Block> stack;
  for (const Block& g : groups) {
    stack.push_back(g);
    while (stack.size() > 1) {
      const Block& hi = stack.back();
      const Block& lo = stack[stack.size() - 2];
      if (lo.sum / lo.weight <= hi.sum / hi.weight) break;
      const Block merged{lo.sum + hi.sum, lo.weight + hi.weight, lo.first_group};
      stack.pop_back();
      stack.back() = merged;
    }
  }

  IsotonicMap map;
  map.x = xs;
  map.y.resize(xs.size());
  for (std::size_t b = 0; b < stack.size(); ++b) {
    const std::size_t end = b + 1 < stack.size() ? stack[b + 1].first_group : xs.size();
    const double v = stack[b].sum / stack[b].weight;
    for (std::size_t g = stack[b].first_group; g < end; ++g) map.y[g] = v;
  }
  return map;
}

double Calibrator::operator()(double score) const {
  return (maps[0](score) + maps[1](score) + maps[2](score)) / 3.0;
}

Calibrator calibrate_cv3(std::span<const double> scores, std::span<const double> labels, std::uint64_t seed) {
  if (scores.size() != labels.size()) throw std::invalid_argument("calibrate_cv3: scores and labels differ in length");
  if (scores.size() < 9) throw std::invalid_argument("calibrate_cv3: need at least 3 samples per fold");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) fold[order[i]] = static_cast<int>(i % 3);

  Calibrator cal;
  for (int k = 0; k < 3; ++k) {
    std::vector<double> s, y;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (fold[i] != k) {
        s.push_back(scores[i]);
        y.push_back(labels[i]);
      }
    cal.maps[static_cast<std::size_t>(k)] = isotonic_fit(s, y);
    cal.constant[static_cast<std::size_t>(k)] = std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
  }
  return cal;
}

double brier(std::span<const double> probs, std::span<const double> labels) {
  if (probs.size() != labels.size()) throw std::invalid_argument("brier: probabilities and labels differ in length");
  if (probs.empty()) throw std::invalid_argument("brier: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) s += (probs[i] - labels[i]) * (probs[i] - labels[i]);
  return s / static_cast<double>(probs.size());
}

std::vector<CurveBin> calibration_curve(std::span<const double> probs, std::span<const double> labels,
                                        std::size_t n_bins) {
  if (n_bins < 2) throw std::invalid_argument("calibration_curve: need at least two bins");
  if (probs.size() != labels.size()) throw std::invalid_argument("calibration_curve: length mismatch");
  std::vector<double> psum(n_bins, 0.0), ysum(n_bins, 0.0);
  std::vector<std::size_t> count(n_bins, 0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], 0.0, 1.0);
    const auto bin = std::min(n_bins - 1, static_cast<std::size_t>(p * static_cast<double>(n_bins)));
    psum[bin] += probs[i];
    ysum[bin] += labels[i];
    ++count[bin];
  }
  std::vector<CurveBin> out;
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (count[b] == 0) continue;
    const double n = static_cast<double>(count[b]);
    out.push_back({psum[b] / n, ysum[b] / n, count[b]});
  }
  return out;
}

std::string calibrators_to_json(const HeadCalibrators& calibrators) {
  json heads = json::object();
  for (std::size_t h = 0; h < kNumHeads; ++h) {
    json folds = json::array();
    for (std::size_t k = 0; k < 3; ++k)
      folds.push_back({{"x", calibrators[h].maps[k].x},
                       {"y", calibrators[h].maps[k].y},
                       {"constant", calibrators[h].constant[k]}});
    heads[std::string(head_name(h))] = {{"folds", folds}};
  }
  return json{{"format", "apricot-calibrator-v1"}, {"heads", heads}}.dump(1);
}

HeadCalibrators calibrators_from_json(const std::string& text) {
  const json j = json::parse(text);
  if (j.value("format", "") != "apricot-calibrator-v1") throw std::runtime_error("calibrator: unknown format");
  HeadCalibrators out;
  for (std::size_t h = 0; h < kNumHeads; ++h) {
    const json& folds = j.at("heads").at(std::string(head_name(h))).at("folds");
    if (folds.size() != 3) throw std::runtime_error("calibrator: expected three folds");
    for (std::size_t k = 0; k < 3; ++k) {
      out[h].maps[k].x = folds[k].at("x").get<std::vector<double>>();
      out[h].maps[k].y = folds[k].at("y").get<std::vector<double>>();
      out[h].constant[k] = folds[k].at("constant").get<bool>();
      if (out[h].maps[k].x.empty() || out[h].maps[k].x.size() != out[h].maps[k].y.size())
        throw std::runtime_error("calibrator: malformed breakpoints for head " + std::string(head_name(h)));
    }
  }
  return out;
}

}  // namespace apricot::calibrate
