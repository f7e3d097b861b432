#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "apricot/phenotype.hpp"
#include "phenotype_oracle.hpp"

using namespace apricot;
using apricot::phenotype::bt_intervals;
using S = AcuityState;

namespace {

AdmissionRecord stay(double los, Disposition d) {
  AdmissionRecord a;
  a.admission_id = "A1";
  a.patient_id = "P1";
  a.los_h = los;
  a.disposition = d;
  return a;
}

}  // namespace

TEST_CASE("bt_intervals worked examples") {
  std::vector<Transfusion> hourly;
  for (int h = 0; h <= 9; ++h) hourly.push_back({static_cast<double>(h), 1.0});
  const auto iv = bt_intervals(hourly);
  REQUIRE(iv.size() == 1);
  CHECK(iv[0] == Interval{9.0, 24.0});

  std::vector<Transfusion> nine;
  for (int h = 0; h < 9; ++h) nine.push_back({h * 30.0, 1.0});
  CHECK(bt_intervals(nine).empty());

  const std::vector<Transfusion> big{{5.0, 12.0}};
  CHECK(bt_intervals(big) == std::vector<Interval>{{5.0, 29.0}});
  CHECK(bt_intervals(big, 20.0) == std::vector<Interval>{{5.0, 20.0}});

  const std::vector<Transfusion> negative{{1.0, -2.0}};
  CHECK_THROWS_AS(bt_intervals(negative), std::invalid_argument);
}

TEST_CASE("label_states worked examples") {
  auto a = stay(30.0, Disposition::kDischargedAlive);
  a.therapy_intervals[0].push_back({10.0, 20.0});
  const auto st = phenotype::label_states(a);
  REQUIRE(st.size() == 8);
  CHECK(st[1] == S::kStable);
  CHECK(st[2] == S::kUnstable);
  CHECK(st[3] == S::kUnstable);
  CHECK(st[4] == S::kUnstable);
  CHECK(st[5] == S::kStable);

  const auto plain = phenotype::label_states(stay(14.0, Disposition::kDischargedAlive));
  CHECK(plain == std::vector<S>{S::kStable, S::kStable, S::kStable, S::kDischarge});

  auto dying = stay(14.0, Disposition::kDeceased);
  dying.therapy_intervals[1].push_back({12.0, 14.0});
  CHECK(phenotype::label_states(dying).back() == S::kDeceased);

  CHECK(phenotype::label_states(stay(12.0, Disposition::kDischargedAlive)).size() == 3);
}

TEST_CASE("label_vector worked examples") {
  const std::vector<S> st{S::kStable, S::kStable, S::kUnstable, S::kUnstable, S::kStable};
  phenotype::TherapyActivity none(st.size(), {false, false, false});
  const auto y = phenotype::label_vector(st, none);
  REQUIRE(y.size() == 4);
  for (std::size_t t = 0; t < y.size(); ++t) {
    CHECK(y[t][head_index(Head::kStableToUnstable)] == (t == 1));
    CHECK(y[t][head_index(Head::kUnstableToStable)] == (t == 3));
  }

  const std::vector<S> stable(6, S::kStable);
  for (const auto& v : phenotype::label_vector(stable, phenotype::TherapyActivity(6, {false, false, false}))) {
    for (std::size_t h = 4; h < kNumHeads; ++h) CHECK(v[h] == 0);
  }

  phenotype::TherapyActivity mv(6, {false, false, false});
  mv[3][0] = mv[4][0] = true;
  const auto onset = phenotype::label_vector(std::vector<S>(6, S::kStable), mv);
  for (std::size_t t = 0; t < onset.size(); ++t) CHECK(onset[t][head_index(Head::kOnsetMV)] == (t == 2));

  CHECK(phenotype::label_vector(std::vector<S>{S::kDischarge}, phenotype::TherapyActivity(1)).empty());
}

TEST_CASE("transition_matrix worked examples") {
  const std::vector<std::vector<S>> seqs{{S::kStable, S::kStable, S::kUnstable, S::kUnstable, S::kDischarge}};
  const auto m = phenotype::transition_matrix(seqs);
  REQUIRE(m.rows[0]);
  REQUIRE(m.rows[1]);
  CHECK(*m.rows[0] == std::array<double, 4>{0.5, 0.5, 0.0, 0.0});
  CHECK(*m.rows[1] == std::array<double, 4>{0.0, 0.5, 0.5, 0.0});

  const std::vector<std::vector<S>> death{{S::kStable, S::kDeceased}};
  const auto d = phenotype::transition_matrix(death);
  CHECK(*d.rows[0] == std::array<double, 4>{0.0, 0.0, 0.0, 1.0});
  CHECK_FALSE(d.rows[1].has_value());

  const std::vector<std::vector<S>> empty{{S::kDeceased}};
  CHECK_THROWS(phenotype::transition_matrix(empty));
}

TEST_CASE("randomized admissions agree with the sampling oracle") {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 200; ++i) {
    const AdmissionRecord a = oracle::random_admission(rng, i);
    CAPTURE(i);
    const auto states = phenotype::label_states(a);
    REQUIRE(states == oracle::states(a));
    const auto act = phenotype::therapy_activity(a);
    const auto expected_act = oracle::activity(a);
    for (std::size_t t = 0; t < act.size(); ++t)
      for (std::size_t k = 0; k < 3; ++k) REQUIRE(act[t][k] == expected_act[t][k]);
    CHECK(phenotype::label_vector(states, act) == oracle::targets(states, expected_act));

    const auto bt = bt_intervals(a.transfusions, a.los_h);
    for (std::size_t j = 1; j < bt.size(); ++j) CHECK(bt[j - 1].end_h < bt[j].start_h);
    for (int k = 0; k * 0.01 + 0.005 < a.los_h; ++k) {
      const double s = k * 0.01 + 0.005;
      REQUIRE(oracle::covered(bt, s) == oracle::bt_active_at(a.transfusions, s));
    }
  }
}

TEST_CASE("every label vector has exactly one primary state bit") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    const AdmissionRecord a = oracle::random_admission(rng, i);
    const auto lab = phenotype::label_admission(a);
    for (const auto& y : lab.targets) CHECK(y[0] + y[1] + y[2] + y[3] == 1);
    CHECK(lab.states.size() == static_cast<std::size_t>(std::ceil(a.los_h / 4.0)));
    CHECK(lab.targets.size() + 1 == lab.states.size());
  }
}
