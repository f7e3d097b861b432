#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "apricot/calibrate.hpp"
#include "isotonic_oracle.hpp"

using namespace apricot::calibrate;

namespace {

std::vector<double> fitted(const IsotonicMap& m) { return m.y; }

}  // namespace

TEST_CASE("isotonic worked examples") {
  const std::vector<double> s{1, 2, 3, 4};
  CHECK(fitted(isotonic_fit(s, std::vector<double>{0, 1, 0, 1})) == std::vector<double>{0, 0.5, 0.5, 1});
  CHECK(fitted(isotonic_fit(s, std::vector<double>{0, 0, 1, 1})) == std::vector<double>{0, 0, 1, 1});
  CHECK(fitted(isotonic_fit(std::vector<double>{1, 2}, std::vector<double>{1, 0})) == std::vector<double>{0.5, 0.5});

  const IsotonicMap same = isotonic_fit(std::vector<double>{0.3, 0.3, 0.3}, std::vector<double>{1, 0, 0});
  REQUIRE(same.x.size() == 1);
  CHECK(same(0.0) == doctest::Approx(1.0 / 3.0));
  CHECK(same(0.9) == doctest::Approx(1.0 / 3.0));

  CHECK_THROWS_AS(isotonic_fit(std::vector<double>{1}, std::vector<double>{1}), std::invalid_argument);
}

TEST_CASE("isotonic map is stepwise constant and clamped") {
  const IsotonicMap m = isotonic_fit(std::vector<double>{0.1, 0.4, 0.7}, std::vector<double>{0, 0.5, 1});
  CHECK(m(-5.0) == 0.0);
  CHECK(m(0.1) == 0.0);
  CHECK(m(0.39) == 0.0);
  CHECK(m(0.4) == 0.5);
  CHECK(m(0.69) == 0.5);
  CHECK(m(3.0) == 1.0);
}

TEST_CASE("isotonic fit matches exhaustive search on grid instances") {
  std::mt19937_64 rng(31);
  int instances = 0;
  for (int n = 2; n <= 8; ++n) {
    for (int rep = 0; rep < 300; ++rep) {
      std::vector<double> s(static_cast<std::size_t>(n)), y(static_cast<std::size_t>(n));
      const bool binary = rep % 2 == 0;
      for (int i = 0; i < n; ++i) {
        s[static_cast<std::size_t>(i)] = 0.05 * std::uniform_int_distribution<int>(0, 6)(rng);
        y[static_cast<std::size_t>(i)] = binary ? std::uniform_int_distribution<int>(0, 1)(rng)
                                                : 0.05 * std::uniform_int_distribution<int>(0, 20)(rng);
      }
      const auto expected = oracle::exhaustive_isotonic(s, y);
      const auto got = isotonic_fit(s, y).y;
      REQUIRE(got.size() == expected.size());
      for (std::size_t i = 0; i < got.size(); ++i) REQUIRE(got[i] == doctest::Approx(expected[i]).epsilon(1e-12));
      ++instances;
    }
  }
  CHECK(instances == 2100);
}

TEST_CASE("brier examples") {
  CHECK(brier(std::vector<double>{1, 0, 1}, std::vector<double>{1, 0, 1}) == 0.0);
  CHECK(brier(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 0}) == 0.25);
  CHECK(brier(std::vector<double>{0.8, 0.3}, std::vector<double>{1, 0}) == doctest::Approx(0.065));
}

TEST_CASE("calibration curve") {
  const std::vector<double> p{0.12, 0.13, 0.14};
  const auto one = calibration_curve(p, std::vector<double>{1, 0, 0});
  REQUIRE(one.size() == 1);
  CHECK(one[0].count == 3);
  CHECK(one[0].frac_pos == doctest::Approx(1.0 / 3.0));
  CHECK(calibration_curve(std::vector<double>{1.0}, std::vector<double>{1.0}).front().count == 1);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> probs, labels;
  for (int i = 0; i < 10000; ++i) {
    probs.push_back(u(rng));
    labels.push_back(u(rng) < probs.back() ? 1.0 : 0.0);
  }
  const auto curve = calibration_curve(probs, labels, 10);
  std::size_t total = 0;
  double worst = 0.0;
  for (const auto& b : curve) {
    total += b.count;
    worst = std::max(worst, std::abs(b.mean_prob - b.frac_pos));
  }
  CHECK(total == probs.size());
  CHECK(worst < 0.05);
}

TEST_CASE("three-fold calibrator") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto stream = [&](std::size_t n) {
    std::pair<std::vector<double>, std::vector<double>> out;
    for (std::size_t i = 0; i < n; ++i) {
      out.first.push_back(u(rng));
      out.second.push_back(u(rng) < out.first.back() ? 1.0 : 0.0);
    }
    return out;
  };
  const auto [fit_s, fit_y] = stream(5000);
  const auto [test_s, test_y] = stream(20000);
  const Calibrator cal = calibrate_cv3(fit_s, fit_y, 7);
  std::vector<double> calibrated;
  for (double s : test_s) calibrated.push_back(cal(s));
  CHECK(std::abs(brier(calibrated, test_y) - brier(test_s, test_y)) <= 0.005);

  double prev = -1.0;
  for (int i = 0; i <= 1000; ++i) {
    const double v = cal(i / 1000.0);
    CHECK(v >= prev);
    prev = v;
  }

  const Calibrator again = calibrate_cv3(fit_s, fit_y, 7);
  for (std::size_t k = 0; k < 3; ++k) CHECK(again.maps[k].y == cal.maps[k].y);

  const std::vector<double> flat_s{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  const Calibrator flat = calibrate_cv3(flat_s, std::vector<double>(9, 0.0), 1);
  CHECK(flat.constant[0]);
  CHECK(flat(0.5) == 0.0);
  CHECK_THROWS_AS(calibrate_cv3(std::vector<double>{0.1, 0.2}, std::vector<double>{0, 1}, 1), std::invalid_argument);
}

TEST_CASE("calibrators survive a JSON round trip") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  HeadCalibrators cals;
  for (auto& c : cals) {
    std::vector<double> s, y;
    for (int i = 0; i < 30; ++i) {
      s.push_back(u(rng));
      y.push_back(u(rng) < 0.4);
    }
    c = calibrate_cv3(s, y, 3);
  }
  const HeadCalibrators back = calibrators_from_json(calibrators_to_json(cals));
  for (std::size_t h = 0; h < cals.size(); ++h)
    for (double q : {0.0, 0.2, 0.55, 1.0}) CHECK(back[h](q) == cals[h](q));
}
