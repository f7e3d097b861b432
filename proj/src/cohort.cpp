#include "apricot/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "apricot/csv.hpp"
#include "json.hpp"

namespace apricot::cohort {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::optional<std::string> malformed_reason(const AdmissionRecord& a) {
  if (!std::isfinite(a.los_h) || a.los_h <= 0.0) return "non-positive length of stay";
  for (std::size_t i = 0; i < a.events.size(); ++i) {
    const ClinicalEvent& e = a.events[i];
    if (!std::isfinite(e.time_h) || e.time_h < 0.0) return "event with negative or non-finite time";
    if (!std::isfinite(e.value)) return "event '" + e.variable + "' with non-finite value";
    if (i > 0 && e.time_h < a.events[i - 1].time_h) return "events not sorted by time";
  }
  for (std::size_t k = 0; k < kNumTherapies; ++k) {
    for (const Interval& iv : a.therapy_intervals[k]) {
      if (!(iv.start_h < iv.end_h) || iv.end_h > a.los_h || iv.start_h < 0.0) {
        return std::string(therapy_name(static_cast<Therapy>(k))) + " interval outside [0, los]";
      }
    }
  }
  for (const Transfusion& t : a.transfusions)
    if (t.units < 0.0 || t.time_h < 0.0) return "invalid transfusion record";
  return std::nullopt;
}

std::optional<std::string> rejection_reason(const AdmissionRecord& a, const CohortSchema& schema) {
  if (auto bad = malformed_reason(a)) return "malformed: " + *bad;
  if (a.los_h < schema.min_los_h) return "stay shorter than minimum";
  if (a.los_h > schema.max_los_h) return "stay longer than maximum";
  const StaticProfile& s = a.static_profile;
  if (!s.age_years) return "missing age";
  if (!s.bmi) return "missing bmi";
  if (s.sex.empty()) return "missing sex";
  if (s.race.empty()) return "missing race";
  if (!a.disposition) return "missing disposition";
  for (const std::string& vital : schema.routine_vitals) {
    const bool seen = std::any_of(a.events.begin(), a.events.end(),
                                  [&](const ClinicalEvent& e) { return e.variable == vital; });
    if (!seen) return "missing routine vital " + vital;
  }
  return std::nullopt;
}

std::size_t index_of(const std::vector<std::string>& levels, const std::string& value) {
  return static_cast<std::size_t>(std::find(levels.begin(), levels.end(), value) - levels.begin());
}

}  // namespace

FilterResult apply_admission_filters(std::vector<AdmissionRecord> admissions, const CohortSchema& schema) {
  FilterResult out;
  for (AdmissionRecord& a : admissions) {
    if (auto reason = rejection_reason(a, schema)) {
      out.rejected.push_back({a.admission_id, *reason});
    } else {
      out.kept.push_back(std::move(a));
    }
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> names) : names_(std::move(names)) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (!index_.emplace(names_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("vocabulary: duplicate variable '" + names_[i] + "'");
    }
  }
}

std::optional<int> Vocabulary::code(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Vocabulary build_vocabulary(std::span<const AdmissionRecord> admissions, double min_prevalence) {
  if (admissions.empty()) throw std::invalid_argument("build_vocabulary: no admissions");
  std::vector<std::string> order;
  std::unordered_map<std::string, std::size_t> admission_count;
  for (const AdmissionRecord& a : admissions) {
    std::set<std::string_view> seen;
    for (const ClinicalEvent& e : a.events) {
      if (!seen.insert(e.variable).second) continue;
      auto [it, fresh] = admission_count.emplace(e.variable, 0);
      if (fresh) order.push_back(e.variable);
      ++it->second;
    }
  }
  const double n = static_cast<double>(admissions.size());
  std::vector<std::string> kept;
  for (const std::string& name : order) {
    if (static_cast<double>(admission_count[name]) / n >= min_prevalence) kept.push_back(name);
  }
  if (kept.empty()) throw std::invalid_argument("build_vocabulary: no variable reaches the prevalence threshold");
  return Vocabulary(std::move(kept));
}

double percentile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("percentile: empty input");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double VariableScale::scale(double v) const {
  if (!(max > min)) return 0.0;
  return std::clamp((v - min) / (max - min), 0.0, 1.0);
}

std::vector<double> ScalerStats::raw_static(const StaticProfile& p) const {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> raw;
  raw.reserve(n_static());
  raw.push_back(p.age_years.value_or(nan));
  raw.push_back(p.bmi.value_or(nan));
  raw.push_back(p.cci ? static_cast<double>(*p.cci) : nan);
  const std::size_t sex_idx = index_of(sex_levels, p.sex);
  for (std::size_t i = 0; i < sex_levels.size(); ++i) raw.push_back(p.sex.empty() ? nan : (i == sex_idx ? 1.0 : 0.0));
  const std::size_t race_idx = index_of(race_levels, p.race);
  for (std::size_t i = 0; i < race_levels.size(); ++i)
    raw.push_back(p.race.empty() ? nan : (i == race_idx ? 1.0 : 0.0));
  for (std::size_t i = 0; i < n_comorbidities; ++i)
    raw.push_back(i < p.comorbidities.size() ? static_cast<double>(p.comorbidities[i]) : nan);
  return raw;
}

std::vector<double> ScalerStats::static_vector(const StaticProfile& p) const {
  std::vector<double> v = raw_static(p);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const StaticScale& s = static_features[i];
    const double x = std::isnan(v[i]) ? s.mean : v[i];
    v[i] = s.max > s.min ? std::clamp((x - s.min) / (s.max - s.min), 0.0, 1.0) : 0.0;
  }
  return v;
}

ScalerStats fit_scaler(std::span<const AdmissionRecord> admissions, const Vocabulary& vocabulary) {
  ScalerStats stats;
  std::vector<std::vector<double>> by_code(vocabulary.size());
  for (const AdmissionRecord& a : admissions) {
    for (const ClinicalEvent& e : a.events)
      if (auto c = vocabulary.code(e.variable)) by_code[static_cast<std::size_t>(*c)].push_back(e.value);
  }
  stats.variables.resize(vocabulary.size());
  for (std::size_t c = 0; c < by_code.size(); ++c) {
    std::vector<double>& vals = by_code[c];
    VariableScale& vs = stats.variables[c];
    if (vals.empty()) continue;
    std::sort(vals.begin(), vals.end());
    vs.lower = percentile(vals, 0.01);
    vs.upper = percentile(vals, 0.99);
    vs.min = std::numeric_limits<double>::infinity();
    vs.max = -std::numeric_limits<double>::infinity();
    for (double v : vals) {
      if (!vs.in_bounds(v)) continue;
      vs.min = std::min(vs.min, v);
      vs.max = std::max(vs.max, v);
    }
  }

  for (const AdmissionRecord& a : admissions) {
    const StaticProfile& p = a.static_profile;
    if (!p.sex.empty() && index_of(stats.sex_levels, p.sex) == stats.sex_levels.size())
      stats.sex_levels.push_back(p.sex);
    if (!p.race.empty() && index_of(stats.race_levels, p.race) == stats.race_levels.size())
      stats.race_levels.push_back(p.race);
    stats.n_comorbidities = std::max(stats.n_comorbidities, p.comorbidities.size());
  }
  stats.static_names = {"age", "bmi", "cci"};
  for (const auto& s : stats.sex_levels) stats.static_names.push_back("sex=" + s);
  for (const auto& r : stats.race_levels) stats.static_names.push_back("race=" + r);
  for (std::size_t i = 0; i < stats.n_comorbidities; ++i) stats.static_names.push_back("comorbidity_" + std::to_string(i));
  const std::size_t f = stats.static_names.size();
  stats.static_features.assign(f, StaticScale{});

  std::vector<double> sum(f, 0.0), lo(f, std::numeric_limits<double>::infinity()),
      hi(f, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> count(f, 0);
  for (const AdmissionRecord& a : admissions) {
    const std::vector<double> raw = stats.raw_static(a.static_profile);
    for (std::size_t i = 0; i < f; ++i) {
      if (std::isnan(raw[i])) continue;
      sum[i] += raw[i];
      lo[i] = std::min(lo[i], raw[i]);
      hi[i] = std::max(hi[i], raw[i]);
      ++count[i];
    }
  }
  for (std::size_t i = 0; i < f; ++i) {
    if (count[i] == 0) continue;
    stats.static_features[i] = {sum[i] / static_cast<double>(count[i]), lo[i], hi[i]};
  }
  return stats;
}

PreparedAdmission preprocess_admission(const AdmissionRecord& admission, const Vocabulary& vocabulary,
                                       const ScalerStats& scaler) {
  PreparedAdmission out;
  out.patient_id = admission.patient_id;
  out.admission_id = admission.admission_id;
  out.los_h = admission.los_h;
  for (const ClinicalEvent& e : admission.events) {
    const auto code = vocabulary.code(e.variable);
    if (!code) continue;
    const VariableScale& vs = scaler.variables[static_cast<std::size_t>(*code)];
    if (!vs.in_bounds(e.value)) continue;
    out.events.push_back({e.time_h, *code, vs.scale(e.value)});
  }
  out.static_vec = scaler.static_vector(admission.static_profile);
  return out;
}

std::vector<WindowSample> window_events(const PreparedAdmission& prepared, const phenotype::AdmissionLabels& labels,
                                        double window_h) {
  std::vector<WindowSample> out;
  const std::size_t n = labels.states.size();
  if (n < 2) return out;
  out.resize(n - 1);
  for (std::size_t t = 0; t + 1 < n; ++t) {
    WindowSample& s = out[t];
    s.patient_id = prepared.patient_id;
    s.admission_id = prepared.admission_id;
    s.window_index = t;
    s.static_vec = prepared.static_vec;
    s.targets = labels.targets[t];
    s.current_state = labels.states[t];
  }
  for (const PreparedEvent& e : prepared.events) {
    const auto w = static_cast<std::size_t>(std::floor(e.time_h / window_h));
    if (w + 1 >= n) continue;  // terminal window is never an observation window
    WindowSample& s = out[w];
    double offset = (e.time_h - window_h * static_cast<double>(w)) / window_h;
    if (offset >= 1.0) offset = std::nextafter(1.0, 0.0);
    s.times.push_back(std::max(offset, 0.0));
    s.codes.push_back(e.code);
    s.values.push_back(e.value);
  }
  return out;
}

// ---------------------------------------------------------------------------
// File IO

CohortFiles load_cohort(const std::filesystem::path& dir) {
  const auto require = [&](const char* name) {
    const auto p = dir / name;
    if (!std::filesystem::exists(p)) throw std::runtime_error("missing input file " + p.string());
    return p;
  };
  const auto static_path = require("static.csv");
  const auto events_path = require("events.jsonl");
  const auto therapy_path = require("therapy.csv");
  const auto transfusion_path = require("transfusions.csv");
  const auto disposition_path = require("dispositions.csv");

  CohortFiles out;
  std::unordered_map<std::string, std::size_t> by_id;

  const csv::Table st = csv::read(static_path);
  const std::size_t c_pid = st.column("patient_id"), c_aid = st.column("admission_id"), c_age = st.column("age"),
                    c_bmi = st.column("bmi"), c_sex = st.column("sex"), c_race = st.column("race"),
                    c_cci = st.column("cci");
  for (std::size_t i = c_cci + 1; i < st.header.size(); ++i) out.comorbidity_names.push_back(st.header[i]);
  for (const auto& row : st.rows) {
    AdmissionRecord a;
    a.patient_id = row[c_pid];
    a.admission_id = row[c_aid];
    const std::string ctx = static_path.string();
    if (!row[c_age].empty()) a.static_profile.age_years = csv::parse_double(row[c_age], ctx);
    if (!row[c_bmi].empty()) a.static_profile.bmi = csv::parse_double(row[c_bmi], ctx);
    a.static_profile.sex = row[c_sex];
    a.static_profile.race = row[c_race];
    if (!row[c_cci].empty()) a.static_profile.cci = static_cast<int>(csv::parse_int(row[c_cci], ctx));
    for (std::size_t i = c_cci + 1; i < row.size(); ++i)
      a.static_profile.comorbidities.push_back(row[i].empty() ? 0 : static_cast<int>(csv::parse_int(row[i], ctx)));
    if (!by_id.emplace(a.admission_id, out.admissions.size()).second) {
      throw std::runtime_error(ctx + ": duplicate admission_id " + a.admission_id);
    }
    out.admissions.push_back(std::move(a));
  }

  const auto find = [&](const std::string& id) -> AdmissionRecord* {
    const auto it = by_id.find(id);
    return it == by_id.end() ? nullptr : &out.admissions[it->second];
  };

  {
    std::ifstream in(events_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& ex) {
        throw std::runtime_error(events_path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
      }
      AdmissionRecord* a = find(j.at("admission_id").get<std::string>());
      if (a == nullptr) continue;
      a->events.push_back({j.at("time_h").get<double>(), j.at("variable").get<std::string>(), j.at("value").get<double>()});
    }
  }

  const csv::Table th = csv::read(therapy_path);
  for (const auto& row : th.rows) {
    AdmissionRecord* a = find(row[th.column("admission_id")]);
    if (a == nullptr) continue;
    const auto therapy = parse_therapy(row[th.column("therapy")]);
    if (!therapy) throw std::runtime_error(therapy_path.string() + ": unknown therapy '" + row[th.column("therapy")] + "'");
    a->therapy_intervals[static_cast<std::size_t>(*therapy)].push_back(
        {csv::parse_double(row[th.column("start_h")], therapy_path.string()),
         csv::parse_double(row[th.column("end_h")], therapy_path.string())});
  }

  const csv::Table tf = csv::read(transfusion_path);
  for (const auto& row : tf.rows) {
    AdmissionRecord* a = find(row[tf.column("admission_id")]);
    if (a == nullptr) continue;
    a->transfusions.push_back({csv::parse_double(row[tf.column("time_h")], transfusion_path.string()),
                               csv::parse_double(row[tf.column("units")], transfusion_path.string())});
  }

  const csv::Table dp = csv::read(disposition_path);
  for (const auto& row : dp.rows) {
    AdmissionRecord* a = find(row[dp.column("admission_id")]);
    if (a == nullptr) continue;
    a->disposition = parse_disposition(row[dp.column("disposition")]);
    a->los_h = csv::parse_double(row[dp.column("end_h")], disposition_path.string());
  }

  for (AdmissionRecord& a : out.admissions) {
    std::stable_sort(a.events.begin(), a.events.end(),
                     [](const ClinicalEvent& x, const ClinicalEvent& y) { return x.time_h < y.time_h; });
    std::stable_sort(a.transfusions.begin(), a.transfusions.end(),
                     [](const Transfusion& x, const Transfusion& y) { return x.time_h < y.time_h; });
  }
  return out;
}

void write_cohort(const std::filesystem::path& dir, std::span<const AdmissionRecord> admissions,
                  std::span<const std::string> comorbidity_names) {
  std::filesystem::create_directories(dir);
  const auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    return out;
  };
  auto events = open("events.jsonl");
  auto statics = open("static.csv");
  auto therapy = open("therapy.csv");
  auto transfusions = open("transfusions.csv");
  auto dispositions = open("dispositions.csv");

  statics << "patient_id,admission_id,age,bmi,sex,race,cci";
  for (const auto& name : comorbidity_names) statics << ',' << name;
  statics << '\n';
  therapy << "admission_id,therapy,start_h,end_h\n";
  transfusions << "admission_id,time_h,units\n";
  dispositions << "admission_id,disposition,end_h\n";

  for (const AdmissionRecord& a : admissions) {
    for (const ClinicalEvent& e : a.events) {
      ordered_json j;
      j["patient_id"] = a.patient_id;
      j["admission_id"] = a.admission_id;
      j["time_h"] = e.time_h;
      j["variable"] = e.variable;
      j["value"] = e.value;
      events << j.dump() << '\n';
    }
    const StaticProfile& s = a.static_profile;
    statics << a.patient_id << ',' << a.admission_id << ',' << (s.age_years ? csv::fmt(*s.age_years) : "") << ','
            << (s.bmi ? csv::fmt(*s.bmi) : "") << ',' << s.sex << ',' << s.race << ','
            << (s.cci ? std::to_string(*s.cci) : "");
    for (std::size_t i = 0; i < comorbidity_names.size(); ++i)
      statics << ',' << (i < s.comorbidities.size() ? s.comorbidities[i] : 0);
    statics << '\n';
    for (std::size_t k = 0; k < kNumTherapies; ++k) {
      for (const Interval& iv : a.therapy_intervals[k]) {
        therapy << a.admission_id << ',' << therapy_name(static_cast<Therapy>(k)) << ',' << csv::fmt(iv.start_h) << ','
                << csv::fmt(iv.end_h) << '\n';
      }
    }
    for (const Transfusion& t : a.transfusions)
      transfusions << a.admission_id << ',' << csv::fmt(t.time_h) << ',' << csv::fmt(t.units) << '\n';
    if (a.disposition) {
      dispositions << a.admission_id << ',' << disposition_name(*a.disposition) << ',' << csv::fmt(a.los_h) << '\n';
    }
  }
}

std::string vocabulary_to_json(const Vocabulary& vocabulary) {
  ordered_json j;
  j["variables"] = vocabulary.names();
  return j.dump(2);
}

Vocabulary vocabulary_from_json(const std::string& text) {
  return Vocabulary(json::parse(text).at("variables").get<std::vector<std::string>>());
}

std::string scaler_to_json(const ScalerStats& scaler) {
  ordered_json j;
  ordered_json vars = ordered_json::array();
  for (const VariableScale& v : scaler.variables)
    vars.push_back({{"lower", v.lower}, {"upper", v.upper}, {"min", v.min}, {"max", v.max}});
  j["variables"] = std::move(vars);
  j["sex_levels"] = scaler.sex_levels;
  j["race_levels"] = scaler.race_levels;
  j["n_comorbidities"] = scaler.n_comorbidities;
  j["static_names"] = scaler.static_names;
  ordered_json st = ordered_json::array();
  for (const StaticScale& s : scaler.static_features) st.push_back({{"mean", s.mean}, {"min", s.min}, {"max", s.max}});
  j["static_features"] = std::move(st);
  return j.dump(2);
}

ScalerStats scaler_from_json(const std::string& text) {
  const json j = json::parse(text);
  ScalerStats s;
  for (const auto& v : j.at("variables"))
    s.variables.push_back({v.at("lower").get<double>(), v.at("upper").get<double>(), v.at("min").get<double>(),
                           v.at("max").get<double>()});
  s.sex_levels = j.at("sex_levels").get<std::vector<std::string>>();
  s.race_levels = j.at("race_levels").get<std::vector<std::string>>();
  s.n_comorbidities = j.at("n_comorbidities").get<std::size_t>();
  s.static_names = j.at("static_names").get<std::vector<std::string>>();
  for (const auto& v : j.at("static_features"))
    s.static_features.push_back({v.at("mean").get<double>(), v.at("min").get<double>(), v.at("max").get<double>()});
  return s;
}

void write_windows(const std::filesystem::path& path, std::span<const WindowSample> samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const WindowSample& s : samples) {
    ordered_json j;
    j["patient_id"] = s.patient_id;
    j["admission_id"] = s.admission_id;
    j["window_index"] = s.window_index;
    j["state"] = state_name(s.current_state);
    j["targets"] = std::vector<int>(s.targets.begin(), s.targets.end());
    j["times"] = s.times;
    j["codes"] = s.codes;
    j["values"] = s.values;
    j["static"] = s.static_vec;
    out << j.dump() << '\n';
  }
}

std::vector<WindowSample> read_windows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing input file " + path.string());
  std::vector<WindowSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    WindowSample s;
    s.patient_id = j.at("patient_id").get<std::string>();
    s.admission_id = j.at("admission_id").get<std::string>();
    s.window_index = j.at("window_index").get<std::size_t>();
    s.current_state = parse_state(j.at("state").get<std::string>()).value();
    const auto targets = j.at("targets").get<std::vector<int>>();
    for (std::size_t h = 0; h < kNumHeads; ++h) s.targets[h] = static_cast<std::uint8_t>(targets.at(h));
    s.times = j.at("times").get<std::vector<double>>();
    s.codes = j.at("codes").get<std::vector<int>>();
    s.values = j.at("values").get<std::vector<double>>();
    s.static_vec = j.at("static").get<std::vector<double>>();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace apricot::cohort
