#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "apricot/attribute.hpp"

using namespace apricot;
using namespace apricot::attribute;
using model::ModelConfig;
using ndgrad::Shape;

namespace {

Array random_array(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Array a(std::move(shape));
  for (double& v : a.values()) v = u(rng);
  return a;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 8;
  c.d_state = 4;
  c.vocab_size = 5;
  c.n_static = 3;
  c.fused_width = 4;
  c.pool_hidden = 6;
  c.static_hidden = 5;
  c.fusion_hidden = 7;
  c.k_top = 2;
  c.seed = 11;
  return c;
}

model::ModelInput random_input(std::mt19937_64& rng, std::size_t len, const ModelConfig& c) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> code(0, static_cast<int>(c.vocab_size) - 1);
  model::ModelInput in;
  for (std::size_t i = 0; i < len; ++i) {
    in.times.push_back(u(rng));
    in.values.push_back(u(rng));
    in.codes.push_back(code(rng));
  }
  in.valid = len;
  for (std::size_t i = 0; i < c.n_static; ++i) in.static_vec.push_back(u(rng));
  return in;
}

}  // namespace

TEST_CASE("linear probe attributions are exact for any step count") {
  std::mt19937_64 rng(1);
  const Array w = random_array({4, 3}, rng), v = random_array({1, 2}, rng);
  const Array e = random_array({4, 3}, rng), s = random_array({1, 2}, rng);
  const Array e0 = random_array({4, 3}, rng), s0 = random_array({1, 2}, rng);
  const PathFunction f = [&](Tape& t, Var te, Var ts) {
    return ndgrad::add(ndgrad::sum_all(ndgrad::mul(te, t.constant(w))), ndgrad::sum_all(ndgrad::mul(ts, t.constant(v))));
  };
  for (std::size_t steps : {1u, 3u, 16u}) {
    const PathAttribution p = integrate_path(f, e, s, e0, s0, steps);
    for (std::size_t i = 0; i < e.size(); ++i) CHECK(p.temporal[i] == doctest::Approx(w[i] * (e[i] - e0[i])).epsilon(1e-12));
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(p.static_part[i] == doctest::Approx(v[i] * (s[i] - s0[i])).epsilon(1e-12));
  }
  const PathAttribution same = integrate_path(f, e, s, e, s, 8);
  for (double x : same.temporal.values()) CHECK(x == 0.0);
  for (double x : same.static_part.values()) CHECK(x == 0.0);
}

TEST_CASE("gap shrinks at first order as steps double on smooth heads") {
  // With k_top at least the sequence length the pooling keeps every row and
  // the path function is smooth.
  ModelConfig c = tiny_config();
  c.k_top = 16;
  const auto params = model::init_params(c);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto in = random_input(rng, 3 + static_cast<std::size_t>(i % 7), c);
    const std::size_t head = static_cast<std::size_t>(i) % kNumHeads;
    std::vector<double> gaps;
    for (std::size_t steps : {8u, 16u, 32u, 64u, 128u, 256u}) {
      const Attribution a = integrated_gradients(params, c, in, head, steps);
      CHECK(a.f_input == doctest::Approx(model::forward_logits(params, c, in)[head]).epsilon(1e-12));
      gaps.push_back(a.gap);
    }
    for (std::size_t k = 1; k < gaps.size(); ++k) {
      CHECK(gaps[k] < gaps[k - 1]);
      CHECK(gaps[k] / gaps[k - 1] == doctest::Approx(0.5).epsilon(0.1));
    }
  }
}

TEST_CASE("gap converges with top-k pooling") {
  const ModelConfig c = tiny_config();
  const auto params = model::init_params(c);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 10; ++i) {
    const auto in = random_input(rng, 4 + static_cast<std::size_t>(i % 5), c);
    const std::size_t head = static_cast<std::size_t>(i) % kNumHeads;
    const double coarse = integrated_gradients(params, c, in, head, 8).gap;
    const Attribution fine = integrated_gradients(params, c, in, head, 1024);
    CHECK(fine.gap < coarse);
    CHECK(fine.gap <= coarse / 4);
  }
}

TEST_CASE("padding rows receive zero attribution") {
  const ModelConfig c = tiny_config();
  const auto params = model::init_params(c);
  std::mt19937_64 rng(3);
  model::ModelInput in = model::pad_input(random_input(rng, 4, c), 9, 0.7, 0.2, 3);
  const std::size_t heads[] = {0, 2, 3};
  for (const Attribution& a : integrated_gradients(params, c, in, heads, 16)) {
    REQUIRE(a.per_event.size() == 9);
    for (std::size_t r = 4; r < 9; ++r) CHECK(a.per_event[r] == 0.0);
    CHECK(a.per_static.size() == c.n_static);
  }
}

TEST_CASE("multi-head attribution equals single-head runs") {
  const ModelConfig c = tiny_config();
  const auto params = model::init_params(c);
  std::mt19937_64 rng(4);
  const auto in = random_input(rng, 5, c);
  const std::size_t heads[] = {1, 3};
  const auto both = integrated_gradients(params, c, in, heads, 12);
  for (std::size_t j = 0; j < 2; ++j) {
    const Attribution one = integrated_gradients(params, c, in, heads[j], 12);
    CHECK(one.per_event == both[j].per_event);
    CHECK(one.per_static == both[j].per_static);
  }
}

TEST_CASE("variable ranking") {
  const cohort::Vocabulary vocab(std::vector<std::string>{"hr", "lactate", "sbp", "unused"});
  const std::vector<std::string> statics{"age", "bmi"};
  std::vector<SampleAttribution> samples;
  for (int i = 0; i < 3; ++i) {
    SampleAttribution s;
    s.admission_id = "A" + std::to_string(i);
    s.codes = {0, 1, 2, 1};
    for (std::size_t h = 0; h < kNumPrimaryHeads; ++h) {
      Attribution a;
      a.head = h;
      a.per_event = {0.1, -2.0, 0.05, 1.0};
      a.per_static = {0.3, -0.01};
      s.heads.push_back(a);
    }
    Attribution extra;
    extra.head = head_index(Head::kOnsetMV);
    extra.per_event = {100.0, 0.0, 0.0, 0.0};
    extra.per_static = {0.0, 0.0};
    s.heads.push_back(extra);
    samples.push_back(s);
  }
  const auto ranking = rank_variables(samples, vocab, statics);
  REQUIRE(ranking.size() == 6);
  CHECK(ranking[0].variable == "lactate");
  CHECK(ranking[0].abs_sum[2] == doctest::Approx(9.0));
  CHECK(ranking[0].signed_sum[2] == doctest::Approx(-3.0));
  CHECK(ranking[0].total == doctest::Approx(36.0));
  CHECK(ranking[1].variable == "age");
  CHECK(ranking[1].is_static);
  CHECK(ranking[2].variable == "hr");
  CHECK(ranking.back().variable == "unused");
  CHECK(ranking.back().total == 0.0);
  CHECK(ranking.back().rank == 6);

  const auto again = rank_variables(samples, vocab, statics);
  for (std::size_t i = 0; i < ranking.size(); ++i) CHECK(again[i].variable == ranking[i].variable);
}
