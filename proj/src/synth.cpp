#include "apricot/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace apricot::synth {

using json = nlohmann::json;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(VariableSpec, name, rate_per_h, base, slope, noise, lead_h, lo, hi,
                                                integer, admission_prob)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthConfig, n_patients, readmission_prob, mean_stay_h, max_stay_h,
                                                severity_mean, severity_spread, reversion, volatility, jump_rate,
                                                jump_size, age_effect, comorbidity_effect, noise_scale,
                                                target_unstable_fraction, hysteresis, mv_offset, crrt_offset,
                                                bleed_rate, bleed_jump, minor_transfusion_rate, hazard_scale,
                                                hazard_slope, death_lag_h, discharge_level, variables, seed)

std::vector<VariableSpec> SynthConfig::default_variables() {
  //        name           rate  base    slope  noise lead  lo     hi     int
  return {
      {"heart_rate", 0.5, 85.0, 10.0, 10.0, 0.0, 30.0, 200.0, false, 1.0},
      {"resp_rate", 0.5, 17.0, 3.0, 3.0, 0.0, 5.0, 50.0, false, 1.0},
      {"sbp", 0.5, 122.0, -10.0, 12.0, 0.0, 50.0, 220.0, false, 1.0},
      {"dbp", 0.5, 68.0, -6.0, 9.0, 0.0, 25.0, 140.0, false, 1.0},
      {"temperature", 0.25, 37.0, 0.3, 0.4, 0.0, 34.0, 42.0, false, 1.0},
      {"spo2", 0.5, 97.0, -1.5, 1.5, 0.0, 70.0, 100.0, false, 1.0},
      {"gcs", 0.25, 14.0, -1.5, 1.0, 0.0, 3.0, 15.0, true, 1.0},
      {"o2_flow", 0.25, 2.0, 2.5, 2.0, 0.0, 0.0, 60.0, false, 1.0},
      {"lactate", 0.1, 1.6, 0.6, 0.5, 0.0, 0.3, 20.0, false, 1.0},
      {"lactate_poc", 0.4, 1.4, 1.2, 0.25, 6.0, 0.3, 20.0, false, 1.0},
      {"creatinine", 0.1, 1.1, 0.25, 0.3, 0.0, 0.2, 12.0, false, 1.0},
      {"wbc", 0.1, 10.0, 1.5, 3.0, 0.0, 0.5, 60.0, false, 1.0},
      {"hemoglobin", 0.1, 11.0, -0.6, 1.0, 0.0, 4.0, 18.0, false, 1.0},
      {"platelets", 0.1, 220.0, -20.0, 50.0, 0.0, 5.0, 900.0, false, 1.0},
      {"sodium", 0.1, 139.0, 0.0, 3.0, 0.0, 115.0, 165.0, false, 1.0},
      {"potassium", 0.1, 4.1, 0.1, 0.4, 0.0, 2.0, 8.0, false, 1.0},
      {"bicarbonate", 0.1, 24.0, -1.5, 2.5, 0.0, 5.0, 45.0, false, 1.0},
      {"glucose", 0.15, 130.0, 10.0, 30.0, 0.0, 40.0, 600.0, false, 1.0},
      {"heparin", 0.08, 5000.0, 0.0, 1000.0, 0.0, 0.0, 20000.0, false, 1.0},
      {"furosemide", 0.05, 40.0, 5.0, 10.0, 0.0, 0.0, 200.0, false, 1.0},
      {"insulin", 0.1, 4.0, 0.5, 2.0, 0.0, 0.0, 50.0, false, 1.0},
      {"rare_assay", 0.05, 1.0, 0.2, 0.3, 0.0, 0.0, 10.0, false, 0.02},
  };
}

void SynthConfig::validate() const {
  auto prob = [](double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string("synth config: ") + what + " outside [0,1]");
  };
  auto nonneg = [](double v, const char* what) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string("synth config: ") + what + " must be >= 0");
  };
  if (n_patients == 0) throw std::invalid_argument("synth config: n_patients must be positive");
  prob(readmission_prob, "readmission_prob");
  prob(target_unstable_fraction, "target_unstable_fraction");
  prob(reversion, "reversion");
  prob(jump_rate, "jump_rate");
  prob(bleed_rate, "bleed_rate");
  prob(minor_transfusion_rate, "minor_transfusion_rate");
  if (target_unstable_fraction <= 0.0 || target_unstable_fraction >= 1.0)
    throw std::invalid_argument("synth config: target_unstable_fraction must be inside (0,1)");
  if (!(max_stay_h >= 12.0)) throw std::invalid_argument("synth config: max_stay_h must be at least 12");
  if (!(mean_stay_h >= 12.0 && mean_stay_h <= max_stay_h))
    throw std::invalid_argument("synth config: mean_stay_h must lie in [12, max_stay_h]");
  nonneg(severity_spread, "severity_spread");
  nonneg(volatility, "volatility");
  nonneg(jump_size, "jump_size");
  nonneg(noise_scale, "noise_scale");
  nonneg(hysteresis, "hysteresis");
  nonneg(hazard_scale, "hazard_scale");
  if (!(death_lag_h >= 1.0)) throw std::invalid_argument("synth config: death_lag_h must be at least 1");
  nonneg(bleed_jump, "bleed_jump");
  for (const auto& v : variables) {
    if (v.name.empty()) throw std::invalid_argument("synth config: variable without a name");
    nonneg(v.rate_per_h, "rate_per_h");
    nonneg(v.noise, "variable noise");
    nonneg(v.lead_h, "lead_h");
    prob(v.admission_prob, "admission_prob");
    if (!(v.lo <= v.hi)) throw std::invalid_argument("synth config: variable " + v.name + " has lo > hi");
  }
}

std::string config_to_json(const SynthConfig& config) { return json(config).dump(2); }

SynthConfig config_from_json(const std::string& text) {
  SynthConfig c = json::parse(text).get<SynthConfig>();
  c.validate();
  return c;
}

namespace {

const std::vector<std::string> kComorbidities{"chf", "copd", "ckd", "diabetes", "cancer"};
const std::vector<std::string> kRaces{"white", "black", "asian", "other"};
constexpr double kComorbidityProb = 0.2;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Thresholds {
  std::array<double, kNumTherapies> on{};  // MV, VP, CRRT
  double hysteresis = 0.0;
};

Thresholds thresholds_at(const SynthConfig& c, double vp) {
  Thresholds t;
  t.on[static_cast<std::size_t>(Therapy::kVP)] = vp;
  t.on[static_cast<std::size_t>(Therapy::kMV)] = vp + c.mv_offset;
  t.on[static_cast<std::size_t>(Therapy::kCRRT)] = vp + c.crrt_offset;
  t.hysteresis = c.hysteresis;
  return t;
}

std::vector<Interval> merge(std::vector<Interval> v) {
  std::sort(v.begin(), v.end(), [](const Interval& a, const Interval& b) { return a.start_h < b.start_h; });
  std::vector<Interval> out;
  for (const auto& i : v) {
    if (!out.empty() && i.start_h <= out.back().end_h)
      out.back().end_h = std::max(out.back().end_h, i.end_h);
    else
      out.push_back(i);
  }
  return out;
}

struct Simulated {
  AdmissionRecord record;
  Trace trace;
};

Simulated simulate(const SynthConfig& c, const Thresholds& th, const std::string& patient_id,
                   const std::string& admission_id, const StaticProfile& profile, std::mt19937_64& rng,
                   bool with_events) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double ns = c.noise_scale;

  int n_comorb = 0;
  for (int f : profile.comorbidities) n_comorb += f;
  const double mu = c.severity_mean +
                    ns * (c.severity_spread * normal(rng) + c.age_effect * (*profile.age_years - 55.0) +
                          c.comorbidity_effect * n_comorb);
  const double planned = 12.0 + std::exponential_distribution<double>(1.0 / (c.mean_stay_h - 12.0))(rng);

  Simulated out;
  AdmissionRecord& rec = out.record;
  Trace& tr = out.trace;
  rec.patient_id = patient_id;
  rec.admission_id = admission_id;
  rec.static_profile = profile;
  tr.admission_id = admission_id;

  double s = mu + ns * c.severity_spread * 0.5 * normal(rng);
  std::array<bool, kNumTherapies> active{};
  std::vector<Interval> bleeds;
  double last_minor = -1e9;
  const auto last_hour = static_cast<std::size_t>(std::ceil(c.max_stay_h)) - 1;
  const double death_ref = th.on[static_cast<std::size_t>(Therapy::kVP)] + 1.0;
  double damage = s;  // lagged severity driving the death hazard

  for (std::size_t h = 0;; ++h) {
    tr.severity.push_back(s);
    for (std::size_t k = 0; k < kNumTherapies; ++k)
      active[k] = s > th.on[k] || (active[k] && s > th.on[k] - th.hysteresis);
    tr.therapy.push_back(active);
    const double hour = static_cast<double>(h);

    double jump = 0.0;
    if (unit(rng) < c.bleed_rate * ns) {
      const double t = hour + unit(rng);
      rec.transfusions.push_back({t, static_cast<double>(10 + rng() % 5)});
      bleeds.push_back({t, t + 24.0});
      jump += c.bleed_jump;
    } else if (unit(rng) < c.minor_transfusion_rate * ns) {
      const double t = hour + unit(rng);
      if (t - last_minor > 24.0) {
        rec.transfusions.push_back({t, static_cast<double>(1 + rng() % 2)});
        last_minor = t;
      }
    }

    const double u_end = unit(rng);
    bool ended = false;
    if (hour >= 12.0 && c.hazard_scale > 0.0) {
      const double rate = c.hazard_scale * std::exp(c.hazard_slope * (damage - death_ref));
      if (unit(rng) < 1.0 - std::exp(-rate)) {
        rec.disposition = Disposition::kDeceased;
        ended = true;
      }
    }
    if (!ended && ((hour >= std::max(planned, 12.0) && s < c.discharge_level) || h >= last_hour)) {
      rec.disposition = Disposition::kDischargedAlive;
      ended = true;
    }
    if (ended) {
      rec.los_h = std::min(c.max_stay_h, hour + std::max(u_end, 1e-3));
      break;
    }
    if (unit(rng) < c.jump_rate * ns) jump += std::exponential_distribution<double>(1.0 / c.jump_size)(rng);
    s = s + c.reversion * (mu - s) + ns * c.volatility * normal(rng) + jump;
    damage += (s - damage) / c.death_lag_h;
  }

  for (std::size_t k = 0; k < kNumTherapies; ++k) {
    for (std::size_t h = 0; h < tr.therapy.size(); ++h) {
      if (!tr.therapy[h][k] || (h > 0 && tr.therapy[h - 1][k])) continue;
      std::size_t e = h;
      while (e < tr.therapy.size() && tr.therapy[e][k]) ++e;
      rec.therapy_intervals[k].push_back({static_cast<double>(h), std::min(static_cast<double>(e), rec.los_h)});
    }
  }
  for (Interval i : merge(bleeds)) {
    if (i.start_h >= rec.los_h) continue;
    i.end_h = std::min(i.end_h, rec.los_h);
    tr.massive_transfusion.push_back(i);
  }
  rec.transfusions.erase(std::remove_if(rec.transfusions.begin(), rec.transfusions.end(),
                                        [&](const Transfusion& t) { return t.time_h >= rec.los_h; }),
                         rec.transfusions.end());

  // Severity at time t, linear between hours and held after the last one.
  auto severity_at = [&](double t) {
    const double last = static_cast<double>(tr.severity.size() - 1);
    t = std::clamp(t, 0.0, last);
    const auto i = static_cast<std::size_t>(std::floor(t));
    if (i + 1 >= tr.severity.size()) return tr.severity.back();
    const double f = t - static_cast<double>(i);
    return tr.severity[i] * (1.0 - f) + tr.severity[i + 1] * f;
  };

  if (!with_events) return out;
  for (const VariableSpec& v : c.variables) {
    if (v.rate_per_h <= 0.0 || unit(rng) >= v.admission_prob) continue;
    std::exponential_distribution<double> gap(v.rate_per_h);
    // The first draw is made early so short stays still see routine vitals.
    double t = unit(rng) * std::min(1.0, rec.los_h);
    while (t < rec.los_h) {
      double value = v.base + v.slope * severity_at(t + v.lead_h) + ns * v.noise * normal(rng);
      if (v.integer) value = std::round(value);
      rec.events.push_back({t, v.name, std::clamp(value, v.lo, v.hi)});
      t += gap(rng);
    }
  }
  std::stable_sort(rec.events.begin(), rec.events.end(),
                   [](const ClinicalEvent& a, const ClinicalEvent& b) { return a.time_h < b.time_h; });
  return out;
}

}  // namespace

namespace {

SynthCohort build(const SynthConfig& config, const Thresholds& th, std::size_t n_patients, std::uint64_t seed,
                  bool with_events) {
  SynthCohort cohort;
  cohort.comorbidity_names = kComorbidities;
  cohort.unstable_threshold = th.on[static_cast<std::size_t>(Therapy::kVP)];
  for (std::size_t p = 0; p < n_patients; ++p) {
    std::mt19937_64 rng(splitmix(seed ^ splitmix(p)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    StaticProfile profile;
    profile.age_years = std::round(20.0 + 70.0 * unit(rng));
    profile.bmi = std::clamp(27.0 + 5.0 * normal(rng), 15.0, 60.0);
    profile.sex = unit(rng) < 0.5 ? "F" : "M";
    profile.race = kRaces[std::discrete_distribution<std::size_t>({0.6, 0.2, 0.1, 0.1})(rng)];
    int count = 0;
    for (std::size_t k = 0; k < kComorbidities.size(); ++k) {
      profile.comorbidities.push_back(unit(rng) < kComorbidityProb ? 1 : 0);
      count += profile.comorbidities.back();
    }
    profile.cci = count + (*profile.age_years >= 70 ? 2 : *profile.age_years >= 50 ? 1 : 0);

    char pid[32];
    std::snprintf(pid, sizeof pid, "P%05zu", p + 1);
    const bool readmit = unit(rng) < config.readmission_prob;
    for (int a = 0; a < (readmit ? 2 : 1); ++a) {
      const std::string aid = std::string(pid) + "-A" + std::to_string(a + 1);
      Simulated sim = simulate(config, th, pid, aid, profile, rng, with_events);
      cohort.admissions.push_back(std::move(sim.record));
      cohort.traces.push_back(std::move(sim.trace));
    }
  }
  return cohort;
}

double unstable_fraction(const SynthCohort& cohort) {
  std::size_t windows = 0, unstable = 0;
  for (const auto& o : oracle_labels(cohort)) {
    windows += o.states.size();
    for (AcuityState s : o.states) unstable += s == AcuityState::kUnstable;
  }
  return windows == 0 ? 0.0 : static_cast<double>(unstable) / static_cast<double>(windows);
}

constexpr std::size_t kPilotPatients = 400;

}  // namespace

SynthCohort generate(const SynthConfig& config) {
  config.validate();
  // The VP threshold is found by bisection on a pilot cohort (own seed, no
  // measurements) so the unstable-window fraction meets the target.
  const std::uint64_t pilot_seed = splitmix(config.seed ^ 0x5eedULL);
  double lo = config.severity_mean - 5.0, hi = config.severity_mean + 10.0;
  for (int it = 0; it < 30; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double frac = unstable_fraction(build(config, thresholds_at(config, mid), kPilotPatients, pilot_seed, false));
    (frac > config.target_unstable_fraction ? lo : hi) = mid;
  }
  return build(config, thresholds_at(config, hi), config.n_patients, config.seed, true);
}

std::vector<OracleLabels> oracle_labels(const SynthCohort& cohort) {
  std::vector<OracleLabels> out;
  for (std::size_t a = 0; a < cohort.admissions.size(); ++a) {
    const AdmissionRecord& rec = cohort.admissions[a];
    const Trace& tr = cohort.traces[a];
    const std::size_t hours = tr.therapy.size();
    std::vector<bool> bleeding(hours, false);
    for (const Interval& i : tr.massive_transfusion)
      for (std::size_t h = 0; h < hours; ++h)
        if (std::min(i.end_h, static_cast<double>(h + 1)) > std::max(i.start_h, static_cast<double>(h))) bleeding[h] = true;

    OracleLabels o;
    // Hours are whole except the terminal one, which ends at los_h; every
    // simulated hour has positive overlap with the stay.
    const std::size_t windows = (hours + 3) / 4;
    for (std::size_t w = 0; w < windows; ++w) {
      std::array<bool, kNumTherapies> act{};
      bool unstable = false;
      for (std::size_t h = 4 * w; h < std::min(hours, 4 * w + 4); ++h) {
        for (std::size_t k = 0; k < kNumTherapies; ++k) act[k] = act[k] || tr.therapy[h][k];
        unstable = unstable || bleeding[h];
      }
      for (bool x : act) unstable = unstable || x;
      o.activity.push_back(act);
      o.states.push_back(unstable ? AcuityState::kUnstable : AcuityState::kStable);
    }
    o.states.back() = rec.disposition == Disposition::kDeceased ? AcuityState::kDeceased : AcuityState::kDischarge;
    for (std::size_t t = 0; t + 1 < windows; ++t) {
      LabelVector v{};
      const AcuityState cur = o.states[t], next = o.states[t + 1];
      switch (next) {
        case AcuityState::kDischarge: v[head_index(Head::kDischarge)] = 1; break;
        case AcuityState::kStable: v[head_index(Head::kStable)] = 1; break;
        case AcuityState::kUnstable: v[head_index(Head::kUnstable)] = 1; break;
        case AcuityState::kDeceased: v[head_index(Head::kDeceased)] = 1; break;
      }
      v[head_index(Head::kUnstableToStable)] = cur == AcuityState::kUnstable && next == AcuityState::kStable;
      v[head_index(Head::kStableToUnstable)] = cur == AcuityState::kStable && next == AcuityState::kUnstable;
      const Head onset[] = {Head::kOnsetMV, Head::kOnsetVP, Head::kOnsetCRRT};
      for (std::size_t k = 0; k < kNumTherapies; ++k)
        v[head_index(onset[k])] = o.activity[t + 1][k] && !o.activity[t][k];
      o.targets.push_back(v);
    }
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace apricot::synth
