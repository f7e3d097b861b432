#include "apricot/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "apricot/analyze.hpp"
#include "apricot/attribute.hpp"
#include "apricot/calibrate.hpp"
#include "apricot/cohort.hpp"
#include "apricot/csv.hpp"
#include "apricot/metrics.hpp"
#include "apricot/phenotype.hpp"
#include "json.hpp"

namespace apricot::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PrepareConfig, train_fraction, min_prevalence)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CalibrateConfig, fraction, bins)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalConfig, bootstrap_iterations, retry_cap)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AttributeConfig, samples, steps)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AnalyzeConfig, horizon_h, max_day)

std::string_view category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kUsage: return "usage";
    case ErrorCategory::kConfig: return "config";
    case ErrorCategory::kMissingInput: return "missing_input";
    case ErrorCategory::kStageOrder: return "stage_order";
    case ErrorCategory::kOutputExists: return "output_exists";
    case ErrorCategory::kNumeric: return "numeric";
    case ErrorCategory::kData: return "data";
    case ErrorCategory::kIo: return "io";
    case ErrorCategory::kInternal: return "internal";
  }
  return "internal";
}

int exit_code(ErrorCategory c) { return 2 + static_cast<int>(c); }

namespace {

PipelineError config_error(const std::string& msg) { return PipelineError(ErrorCategory::kConfig, msg); }

json config_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["synth"] = json::parse(synth::config_to_json(c.synth));
  j["prepare"] = c.prepare;
  j["model"] = json::parse(model::config_to_json(c.model));
  j["train"] = json::parse(train::config_to_json(c.train));
  j["calibrate"] = c.calibrate;
  j["eval"] = c.eval;
  j["attribute"] = c.attribute;
  j["analyze"] = c.analyze;
  return j;
}

// Keys whose value always follows the run seed.
const std::vector<std::string> kDerivedSeeds{"synth.seed", "model.seed", "train.seed"};

json::json_pointer pointer(const std::string& dotted) {
  std::string p;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw config_error("malformed config key '" + dotted + "'");
    p += "/" + part;
  }
  return json::json_pointer(p);
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    if (a.is_number_float() || b.is_number_float()) return a.is_number_float() || b.is_number_float();
    return true;
  }
  return a.type() == b.type();
}

// Checks `value` against the default at `key` and stores it.
void assign(json& target, const json& defaults, const std::string& key, json value) {
  const auto ptr = pointer(key);
  if (!defaults.contains(ptr)) throw config_error("unknown config key '" + key + "'");
  const json& ref = defaults.at(ptr);
  if (!same_kind(ref, value)) {
    // Whole numbers are accepted where a float is expected.
    if (!(ref.is_number_float() && value.is_number()))
      throw config_error("config key '" + key + "' expects " + std::string(ref.type_name()) + ", got " +
                         std::string(value.type_name()));
  }
  if ((ref.is_number_unsigned() || (ref.is_number_integer() && ref.get<long long>() >= 0)) &&
      value.is_number_integer() && value.get<long long>() < 0)
    throw config_error("config key '" + key + "' must be non-negative");
  target[ptr] = std::move(value);
}

void merge_file(json& target, const json& defaults, const json& file, const std::string& prefix) {
  if (!file.is_object()) throw config_error("config file must hold a JSON object");
  for (auto it = file.begin(); it != file.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    const auto ptr = pointer(key);
    if (!defaults.contains(ptr)) throw config_error("unknown config key '" + key + "'");
    if (defaults.at(ptr).is_object())
      merge_file(target, defaults, it.value(), key);
    else
      assign(target, defaults, key, it.value());
  }
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return json(text);
  }
}

RunConfig from_json(const json& j) {
  RunConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.synth = synth::config_from_json(j.at("synth").dump());
  c.prepare = j.at("prepare").get<PrepareConfig>();
  c.model = model::config_from_json(j.at("model").dump());
  c.train = train::config_from_json(j.at("train").dump());
  c.calibrate = j.at("calibrate").get<CalibrateConfig>();
  c.eval = j.at("eval").get<EvalConfig>();
  c.attribute = j.at("attribute").get<AttributeConfig>();
  c.analyze = j.at("analyze").get<AnalyzeConfig>();
  if (!(c.prepare.train_fraction > 0.0 && c.prepare.train_fraction < 1.0))
    throw config_error("config key 'prepare.train_fraction' must lie in (0,1)");
  if (!(c.calibrate.fraction > 0.0 && c.calibrate.fraction <= 1.0))
    throw config_error("config key 'calibrate.fraction' must lie in (0,1]");
  if (c.calibrate.bins == 0) throw config_error("config key 'calibrate.bins' must be positive");
  if (c.attribute.steps < 2) throw config_error("config key 'attribute.steps' must be at least 2");
  if (c.eval.bootstrap_iterations == 0) throw config_error("config key 'eval.bootstrap_iterations' must be positive");
  return c;
}

}  // namespace

std::string to_json(const RunConfig& config) { return config_json(config).dump(2) + "\n"; }

RunConfig resolve_config(const ConfigSources& sources) {
  try {
    const json defaults = config_json(RunConfig{});
    json merged = defaults;
    std::set<std::string> explicit_keys;
    if (sources.file) {
      std::ifstream in(*sources.file);
      if (!in) throw PipelineError(ErrorCategory::kMissingInput, "missing config file " + sources.file->string());
      json file;
      try {
        file = json::parse(in);
      } catch (const json::exception& e) {
        throw config_error("config file " + sources.file->string() + " is not valid JSON");
      }
      merge_file(merged, defaults, file, "");
    }
    std::map<std::string, json> seen;
    for (const std::string& o : sources.overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos || eq == 0) throw config_error("override '" + o + "' is not key=value");
      const std::string key = o.substr(0, eq);
      json value = parse_value(o.substr(eq + 1));
      if (auto it = seen.find(key); it != seen.end() && it->second != value)
        throw config_error("conflicting overrides for config key '" + key + "'");
      seen[key] = value;
      assign(merged, defaults, key, value);
      explicit_keys.insert(key);
    }
    if (sources.seed) {
      if (seen.contains("seed") && seen["seed"] != json(*sources.seed))
        throw config_error("config key 'seed' set by both --seed and an override");
      merged["seed"] = *sources.seed;
    }
    const json run_seed = merged["seed"];
    for (const std::string& key : kDerivedSeeds) {
      const auto ptr = pointer(key);
      const bool set_explicitly =
          explicit_keys.contains(key) || (sources.file && merged.at(ptr) != defaults.at(ptr));
      if (set_explicitly && merged.at(ptr) != run_seed)
        throw config_error("config key '" + key + "' conflicts with the run seed; set 'seed' instead");
      merged[ptr] = run_seed;
    }
    return from_json(merged);
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw config_error(e.what());
  }
}

namespace {

constexpr const char* kStageNames[] = {"synth", "prepare", "train", "calibrate", "eval", "attribute", "analyze"};

void log(const StageOptions& o, const std::string& msg) {
  if (o.log) o.log(msg);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError(ErrorCategory::kIo, "cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError(ErrorCategory::kMissingInput, "missing input file " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path stage_dir(const StageOptions& o, std::string_view stage) { return o.out / std::string(stage); }

// Creates the stage folder; an existing non-empty one needs --force.
fs::path begin_stage(const RunConfig& config, const StageOptions& o, std::string_view stage) {
  const fs::path dir = stage_dir(o, stage);
  std::error_code ec;
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!o.force)
      throw PipelineError(ErrorCategory::kOutputExists,
                          dir.string() + " already exists; rerun with --force or choose a fresh --out");
    fs::remove_all(dir, ec);
    if (ec) throw PipelineError(ErrorCategory::kIo, "cannot clear " + dir.string() + ": " + ec.message());
  }
  fs::create_directories(dir, ec);
  if (ec) throw PipelineError(ErrorCategory::kIo, "cannot create " + dir.string() + ": " + ec.message());
  const std::string text = to_json(config);
  write_text(o.out / "run_config.json", text);
  write_text(dir / "run_config.json", text);
  log(o, "[" + std::string(stage) + "] writing " + dir.string());
  return dir;
}

// Path of an earlier stage's output; absence means that stage has not run.
fs::path require(const StageOptions& o, std::string_view stage, const std::string& file) {
  const fs::path p = stage_dir(o, stage) / file;
  if (!fs::exists(p))
    throw PipelineError(ErrorCategory::kStageOrder,
                        "missing " + p.string() + ": run `" + std::string(stage) + "` first");
  return p;
}

std::ofstream open_csv(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError(ErrorCategory::kIo, "cannot write " + path.string());
  return out;
}

std::string fmt_metric(const metrics::Metric& m) { return m ? csv::fmt_report(*m) : std::string(); }

std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed ^ (salt * 0x9e3779b97f4a7c15ULL);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// The next window's state, read from the one-hot targets.
AcuityState next_state(const LabelVector& t) {
  if (t[head_index(Head::kDeceased)]) return AcuityState::kDeceased;
  if (t[head_index(Head::kDischarge)]) return AcuityState::kDischarge;
  if (t[head_index(Head::kUnstable)]) return AcuityState::kUnstable;
  return AcuityState::kStable;
}

struct Prepared {
  cohort::Vocabulary vocabulary;
  cohort::ScalerStats scaler;
  std::vector<cohort::WindowSample> train;
  std::vector<cohort::WindowSample> val;
};

Prepared load_prepared(const StageOptions& o, bool with_train) {
  Prepared p;
  p.vocabulary = cohort::vocabulary_from_json(read_text(require(o, "prepare", "vocabulary.json")));
  p.scaler = cohort::scaler_from_json(read_text(require(o, "prepare", "scaler.json")));
  if (with_train) p.train = cohort::read_windows(require(o, "prepare", "train_windows.jsonl"));
  p.val = cohort::read_windows(require(o, "prepare", "val_windows.jsonl"));
  return p;
}

struct Trained {
  model::ModelConfig config;
  model::ParamMap params;
};

Trained load_trained(const StageOptions& o) {
  const fs::path ckpt = stage_dir(o, "train") / "checkpoint.json";
  if (!fs::exists(ckpt))
    throw PipelineError(ErrorCategory::kStageOrder, "no checkpoint at " + ckpt.string() + ": train first");
  Trained t;
  t.config = model::config_from_json(read_text(require(o, "train", "model_config.json")));
  t.params = ndgrad::load_params(ckpt);
  return t;
}

calibrate::HeadCalibrators load_calibrators(const StageOptions& o) {
  const fs::path p = stage_dir(o, "calibrate") / "calibrators.json";
  if (!fs::exists(p))
    throw PipelineError(ErrorCategory::kStageOrder, "no calibrators at " + p.string() + ": calibrate first");
  return calibrate::calibrators_from_json(read_text(p));
}

std::map<std::string, StaticProfile> load_profiles(const StageOptions& o) {
  const csv::Table t = csv::read(require(o, "prepare", "admissions.csv"));
  const std::size_t ci = t.column("admission_id"), ca = t.column("age"), cs = t.column("sex"), cr = t.column("race");
  std::map<std::string, StaticProfile> out;
  for (const auto& row : t.rows) {
    StaticProfile p;
    if (!row[ca].empty()) p.age_years = csv::parse_double(row[ca], "admissions.csv age");
    p.sex = row[cs];
    p.race = row[cr];
    out[row[ci]] = p;
  }
  return out;
}

std::array<double, kNumHeads> load_thresholds(const StageOptions& o) {
  const csv::Table t = csv::read(require(o, "eval", "thresholds.csv"));
  const std::size_t ch = t.column("head"), ct = t.column("threshold");
  std::array<double, kNumHeads> out;
  out.fill(1.0);
  for (const auto& row : t.rows) {
    const auto h = parse_head(row[ch]);
    if (!h) throw PipelineError(ErrorCategory::kData, "thresholds.csv: unknown head " + row[ch]);
    // A head without a threshold (single-class data) never fires.
    out[*h] = row[ct].empty() ? 2.0 : csv::parse_double(row[ct], "thresholds.csv");
  }
  return out;
}

std::vector<train::ScoreRow> calibrated(std::vector<train::ScoreRow> rows, const calibrate::HeadCalibrators& cal) {
  for (auto& r : rows)
    for (std::size_t h = 0; h < kNumHeads; ++h) r.probs[h] = cal[h](r.probs[h]);
  return rows;
}

std::vector<double> column(std::span<const train::ScoreRow> rows, std::size_t h, bool labels) {
  std::vector<double> v;
  v.reserve(rows.size());
  for (const auto& r : rows) v.push_back(labels ? static_cast<double>(r.targets[h]) : r.probs[h]);
  return v;
}

}  // namespace

void run_synth(const RunConfig& config, const StageOptions& o) {
  const fs::path dir = begin_stage(config, o, "synth");
  const synth::SynthCohort cohort = synth::generate(config.synth);
  cohort::write_cohort(dir, cohort.admissions, cohort.comorbidity_names);
  log(o, "[synth] " + std::to_string(config.synth.n_patients) + " patients, " +
             std::to_string(cohort.admissions.size()) + " admissions");
}

void run_prepare(const RunConfig& config, const StageOptions& o, const std::optional<fs::path>& data_dir) {
  const fs::path data = data_dir ? *data_dir : stage_dir(o, "synth");
  if (!fs::exists(data / "static.csv")) {
    if (data_dir) throw PipelineError(ErrorCategory::kMissingInput, "missing input file " + (data / "static.csv").string());
    throw PipelineError(ErrorCategory::kStageOrder,
                        "no cohort at " + data.string() + ": run `synth` first or pass --data");
  }
  const fs::path dir = begin_stage(config, o, "prepare");
  cohort::CohortFiles files = cohort::load_cohort(data);
  cohort::FilterResult filtered = cohort::apply_admission_filters(std::move(files.admissions), cohort::CohortSchema{});
  {
    auto out = open_csv(dir / "rejected.csv");
    out << "admission_id,reason\n";
    for (const auto& r : filtered.rejected) out << r.admission_id << ',' << r.reason << '\n';
  }
  const auto& kept = filtered.kept;
  if (kept.empty()) throw PipelineError(ErrorCategory::kData, "no admission passed the cohort filters");

  std::vector<std::string> patients;
  for (const auto& a : kept) patients.push_back(a.patient_id);
  const train::PatientSplit split = train::split_patients(patients, config.prepare.train_fraction, config.seed);
  if (split.train.empty() || split.val.empty())
    throw PipelineError(ErrorCategory::kData, "patient split left one side empty");
  const std::set<std::string> train_ids(split.train.begin(), split.train.end());
  {
    auto out = open_csv(dir / "split.csv");
    out << "patient_id,split\n";
    std::vector<std::pair<std::string, std::string>> rows;
    for (const auto& p : split.train) rows.emplace_back(p, "train");
    for (const auto& p : split.val) rows.emplace_back(p, "val");
    std::sort(rows.begin(), rows.end());
    for (const auto& [p, s] : rows) out << p << ',' << s << '\n';
  }

  // Vocabulary and scaling come from the training patients only.
  std::vector<AdmissionRecord> development;
  for (const auto& a : kept)
    if (train_ids.contains(a.patient_id)) development.push_back(a);
  const cohort::Vocabulary vocab = cohort::build_vocabulary(development, config.prepare.min_prevalence);
  if (vocab.size() == 0) throw PipelineError(ErrorCategory::kData, "no variable reaches the prevalence threshold");
  const cohort::ScalerStats scaler = cohort::fit_scaler(development, vocab);
  write_text(dir / "vocabulary.json", cohort::vocabulary_to_json(vocab));
  write_text(dir / "scaler.json", cohort::scaler_to_json(scaler));

  std::vector<phenotype::AdmissionLabels> labels;
  std::vector<cohort::WindowSample> samples;
  for (const auto& a : kept) {
    labels.push_back(phenotype::label_admission(a));
    const auto prepared = cohort::preprocess_admission(a, vocab, scaler);
    auto w = cohort::window_events(prepared, labels.back());
    samples.insert(samples.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  phenotype::write_labels_csv(dir / "labels.csv", kept, labels);
  const train::SampleSplit parts = train::partition_samples(samples, split);
  cohort::write_windows(dir / "train_windows.jsonl", parts.train);
  cohort::write_windows(dir / "val_windows.jsonl", parts.val);
  {
    auto out = open_csv(dir / "admissions.csv");
    out << "patient_id,admission_id,split,age,sex,race,los_h,disposition\n";
    for (const auto& a : kept) {
      const auto& s = a.static_profile;
      out << a.patient_id << ',' << a.admission_id << ',' << (train_ids.contains(a.patient_id) ? "train" : "val") << ','
          << (s.age_years ? csv::fmt(*s.age_years) : "") << ',' << s.sex << ',' << s.race << ',' << csv::fmt(a.los_h)
          << ',' << (a.disposition ? disposition_name(*a.disposition) : "") << '\n';
    }
  }
  json summary{{"admissions_kept", kept.size()},
               {"admissions_rejected", filtered.rejected.size()},
               {"train_patients", split.train.size()},
               {"val_patients", split.val.size()},
               {"train_windows", parts.train.size()},
               {"val_windows", parts.val.size()},
               {"vocabulary_size", vocab.size()},
               {"static_features", scaler.n_static()}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  log(o, "[prepare] " + std::to_string(parts.train.size()) + " train / " + std::to_string(parts.val.size()) +
             " validation windows, " + std::to_string(vocab.size()) + " variables");
}

void run_train(const RunConfig& config, const StageOptions& o) {
  const Prepared data = load_prepared(o, true);
  const fs::path dir = begin_stage(config, o, "train");
  model::ModelConfig mc = config.model;
  mc.vocab_size = data.vocabulary.size();
  mc.n_static = data.scaler.n_static();
  mc.validate();
  write_text(dir / "model_config.json", model::config_to_json(mc) + "\n");
  log(o, "[train] " + std::to_string(model::param_count(mc)) + " parameters, " + std::to_string(data.train.size()) +
             " training windows");
  train::TrainResult result;
  try {
    result = train::train(mc, model::init_params(mc), data.train, data.val, config.train,
                          [&](const train::EpochRecord& e) {
                            log(o, "[train] epoch " + std::to_string(e.epoch) + " train_loss " +
                                       csv::fmt_report(e.train_loss, 6) + " val_loss " + csv::fmt_report(e.val_loss, 6));
                          });
  } catch (const train::NonFiniteLoss& e) {
    throw PipelineError(ErrorCategory::kNumeric, e.what());
  }
  ndgrad::save_params(dir / "checkpoint.json", result.params);
  train::write_history_csv(dir / "history.csv", result.history);
  json summary{{"best_epoch", result.best_epoch}, {"epochs_run", result.history.size()},
               {"parameters", model::param_count(mc)}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
}

void run_calibrate(const RunConfig& config, const StageOptions& o) {
  const Trained trained = load_trained(o);
  const Prepared data = load_prepared(o, false);
  const fs::path dir = begin_stage(config, o, "calibrate");
  const auto rows = train::predict_scores(trained.params, trained.config, data.val);

  // Window-level calibration subsample of the validation set.
  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(stage_seed(config.seed, 1));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_cal = static_cast<std::size_t>(std::llround(config.calibrate.fraction * static_cast<double>(rows.size())));
  if (n_cal < 9)
    throw PipelineError(ErrorCategory::kData, "calibration sample holds " + std::to_string(n_cal) +
                                                  " windows; three-fold calibration needs at least 9");
  std::vector<std::size_t> sample(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_cal));
  std::sort(sample.begin(), sample.end());
  {
    auto out = open_csv(dir / "calibration_sample.csv");
    out << "admission_id,window_index\n";
    for (std::size_t i : sample) out << rows[i].admission_id << ',' << rows[i].window_index << '\n';
  }

  calibrate::HeadCalibrators cal;
  auto brier_out = open_csv(dir / "brier.csv");
  brier_out << "head,n_fit,n_eval,brier_raw,brier_calibrated\n";
  auto curve_out = open_csv(dir / "calibration_curve.csv");
  curve_out << "head,kind,bin_mean_prob,bin_frac_pos,count\n";
  for (std::size_t h = 0; h < kNumHeads; ++h) {
    std::vector<double> s, y;
    for (std::size_t i : sample) {
      s.push_back(rows[i].probs[h]);
      y.push_back(rows[i].targets[h]);
    }
    cal[h] = calibrate::calibrate_cv3(s, y, stage_seed(config.seed, 100 + h));
    const auto raw = column(rows, h, false), labels = column(rows, h, true);
    std::vector<double> adjusted;
    for (double p : raw) adjusted.push_back(cal[h](p));
    brier_out << head_name(h) << ',' << sample.size() << ',' << rows.size() << ','
              << csv::fmt_report(calibrate::brier(raw, labels)) << ','
              << csv::fmt_report(calibrate::brier(adjusted, labels)) << '\n';
    for (int kind = 0; kind < 2; ++kind)
      for (const auto& b : calibrate::calibration_curve(kind == 0 ? raw : adjusted, labels, config.calibrate.bins))
        curve_out << head_name(h) << ',' << (kind == 0 ? "raw" : "calibrated") << ','
                  << csv::fmt_report(b.mean_prob) << ',' << csv::fmt_report(b.frac_pos) << ',' << b.count << '\n';
  }
  write_text(dir / "calibrators.json", calibrate::calibrators_to_json(cal) + "\n");
  log(o, "[calibrate] fitted on " + std::to_string(sample.size()) + " of " + std::to_string(rows.size()) +
             " validation windows");
}

void run_eval(const RunConfig& config, const StageOptions& o) {
  const Trained trained = load_trained(o);
  const calibrate::HeadCalibrators cal = load_calibrators(o);
  const Prepared data = load_prepared(o, false);
  const auto profiles = load_profiles(o);
  const fs::path dir = begin_stage(config, o, "eval");

  const auto raw_rows = train::predict_scores(trained.params, trained.config, data.val);
  const auto rows = calibrated(raw_rows, cal);
  train::write_scores_csv(dir / "scores.csv", rows);
  train::write_scores_csv(dir / "scores_raw.csv", raw_rows);

  std::vector<std::string> ids;
  for (const auto& r : rows) ids.push_back(r.admission_id);

  metrics::ReportOptions opts;
  opts.bootstrap.iterations = config.eval.bootstrap_iterations;
  opts.bootstrap.retry_cap = config.eval.retry_cap;
  opts.bootstrap.seed = stage_seed(config.seed, 2);

  auto report = open_csv(dir / "report.csv");
  report << "head,grouping,group,n,positives,metric,median,lo95,hi95\n";
  auto thresholds = open_csv(dir / "thresholds.csv");
  thresholds << "head,threshold\n";
  auto points = open_csv(dir / "point_metrics.csv");
  points << "head,n,positives,threshold,auroc_raw,auroc,auprc,sensitivity,specificity,ppv,npv,tp,fp,tn,fn\n";
  auto tests = open_csv(dir / "subgroup_tests.csv");
  tests << "head,grouping,group_a,group_b,metric,u,p_two_sided\n";
  json summary = json::object();

  auto write_rows = [&](std::size_t h, const std::string& grouping, const std::string& group,
                        const metrics::HeadReport& r) {
    for (const auto& row : metrics::report_rows(r))
      report << head_name(h) << ',' << grouping << ',' << group << ',' << r.n << ',' << r.positives << ','
             << row.metric << ',' << fmt_metric(row.value.median) << ',' << fmt_metric(row.value.lo) << ','
             << fmt_metric(row.value.hi) << '\n';
  };

  for (std::size_t h = 0; h < kNumHeads; ++h) {
    const auto s = column(rows, h, false), y = column(rows, h, true);
    const metrics::HeadReport r = metrics::head_report(s, y, opts);
    write_rows(h, "all", "all", r);
    thresholds << head_name(h) << ',' << (r.threshold ? csv::fmt(*r.threshold) : "") << '\n';
    const auto raw_auroc = metrics::auroc(column(raw_rows, h, false), y);
    points << head_name(h) << ',' << r.n << ',' << r.positives << ','
           << (r.threshold ? csv::fmt_report(*r.threshold) : "") << ',' << fmt_metric(raw_auroc) << ','
           << fmt_metric(r.point_auroc) << ',' << fmt_metric(r.point_auprc) << ',' << fmt_metric(r.point.sensitivity)
           << ',' << fmt_metric(r.point.specificity) << ',' << fmt_metric(r.point.ppv) << ','
           << fmt_metric(r.point.npv) << ',' << r.point.tp << ',' << r.point.fp << ',' << r.point.tn << ','
           << r.point.fn << '\n';
    json hj{{"n", r.n}, {"positives", r.positives}, {"dropped_iterations", r.dropped_iterations}};
    hj["threshold"] = r.threshold ? json(*r.threshold) : json(nullptr);
    hj["auroc_raw"] = raw_auroc ? json(*raw_auroc) : json(nullptr);
    hj["auroc"] = r.point_auroc ? json(*r.point_auroc) : json(nullptr);
    hj["auprc"] = r.point_auprc ? json(*r.point_auprc) : json(nullptr);
    summary[std::string(head_name(h))] = hj;

    metrics::ReportOptions sub = opts;
    sub.threshold = r.threshold;
    if (!r.threshold) continue;
    for (const char* gname : {"age", "sex", "race"}) {
      const auto grouping = metrics::parse_grouping(gname);
      const auto groups = metrics::subgroup_eval(ids, s, y, profiles, grouping, sub);
      for (const auto& [g, gr] : groups) write_rows(h, gname, g, gr);
      // Pairwise rank-sum tests on the bootstrap AUROC distributions.
      for (auto a = groups.begin(); a != groups.end(); ++a)
        for (auto b = std::next(a); b != groups.end(); ++b) {
          const auto& va = a->second.bootstrap_values[0];
          const auto& vb = b->second.bootstrap_values[0];
          if (va.empty() || vb.empty()) continue;
          const auto t = metrics::wilcoxon_ranksum(va, vb);
          tests << head_name(h) << ',' << gname << ',' << a->first << ',' << b->first << ",auroc,"
                << csv::fmt_report(t.u) << ',' << csv::fmt_report(t.p_two_sided) << '\n';
        }
    }
  }

  // Observed transitions among validation admissions.
  std::map<std::string, std::vector<const cohort::WindowSample*>> by_admission;
  for (const auto& w : data.val) by_admission[w.admission_id].push_back(&w);
  std::vector<std::vector<AcuityState>> sequences;
  for (auto& [id, ws] : by_admission) {
    std::sort(ws.begin(), ws.end(), [](auto* a, auto* b) { return a->window_index < b->window_index; });
    std::vector<AcuityState> seq;
    for (const auto* w : ws) seq.push_back(w->current_state);
    seq.push_back(next_state(ws.back()->targets));
    sequences.push_back(std::move(seq));
  }
  auto tm_out = open_csv(dir / "transition_matrix.csv");
  tm_out << "from,to,count,probability\n";
  try {
    const auto tm = phenotype::transition_matrix(sequences);
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < kNumStates; ++c)
        tm_out << state_name(static_cast<AcuityState>(r)) << ',' << state_name(static_cast<AcuityState>(c)) << ','
               << tm.counts[r][c] << ',' << (tm.rows[r] ? csv::fmt_report((*tm.rows[r])[c]) : "") << '\n';
  } catch (const std::invalid_argument&) {
    // No transitions in the validation set; the table stays empty.
  }
  write_text(dir / "report.json", summary.dump(2) + "\n");
  log(o, "[eval] " + std::to_string(rows.size()) + " validation windows, " +
             std::to_string(config.eval.bootstrap_iterations) + " bootstrap iterations");
}

void run_attribute(const RunConfig& config, const StageOptions& o) {
  const Trained trained = load_trained(o);
  const Prepared data = load_prepared(o, false);
  const fs::path dir = begin_stage(config, o, "attribute");

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < data.val.size(); ++i)
    if (!data.val[i].codes.empty()) order.push_back(i);
  std::mt19937_64 rng(stage_seed(config.seed, 3));
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(order.size(), config.attribute.samples));
  std::sort(order.begin(), order.end());

  const std::size_t heads[] = {0, 1, 2, 3};
  std::vector<attribute::SampleAttribution> samples;
  auto gaps = open_csv(dir / "completeness.csv");
  gaps << "admission_id,window_index,head,logit,baseline_logit,gap,relative_gap\n";
  for (std::size_t i : order) {
    const auto& w = data.val[i];
    const model::ModelInput in = model::make_input(w, trained.config);
    attribute::SampleAttribution sa;
    sa.admission_id = w.admission_id;
    sa.window_index = w.window_index;
    sa.codes = in.codes;
    sa.heads = attribute::integrated_gradients(trained.params, trained.config, in, heads, config.attribute.steps);
    for (const auto& a : sa.heads) {
      const double delta = std::abs(a.f_input - a.f_baseline);
      gaps << w.admission_id << ',' << w.window_index << ',' << head_name(a.head) << ','
           << csv::fmt_report(a.f_input) << ',' << csv::fmt_report(a.f_baseline) << ',' << csv::fmt_report(a.gap)
           << ',' << csv::fmt_report(a.gap / std::max(1e-6, delta)) << '\n';
    }
    samples.push_back(std::move(sa));
  }
  const auto ranking = attribute::rank_variables(samples, data.vocabulary, data.scaler.static_names);
  attribute::write_ranking_csv(dir / "ranking.csv", ranking);
  attribute::write_trajectories_jsonl(dir / "trajectories.jsonl", samples, data.vocabulary);
  log(o, "[attribute] " + std::to_string(samples.size()) + " windows; top variable " +
             (ranking.empty() ? std::string("-") : ranking.front().variable));
}

void run_analyze(const RunConfig& config, const StageOptions& o) {
  const auto thresholds = load_thresholds(o);
  const auto rows = train::read_scores_csv(require(o, "eval", "scores.csv"));
  const fs::path dir = begin_stage(config, o, "analyze");

  auto summary = open_csv(dir / "lead_summary.csv");
  summary << "head,variant,tp,fp,tn,fn,sensitivity,ppv,fp_with_outcome,fp_without_outcome,recounted\n";
  for (Head head : {Head::kDeceased, Head::kStableToUnstable}) {
    const std::size_t h = head_index(head);
    std::vector<analyze::WindowOutcome> windows;
    for (const auto& r : rows)
      windows.push_back({r.admission_id, r.window_index, r.probs[h] >= thresholds[h], r.targets[h] != 0});
    const auto rep = analyze::fp_lead_analysis(windows, phenotype::kWindowHours, config.analyze.horizon_h);
    analyze::write_lead_histogram_csv(dir / ("lead_" + std::string(head_name(h)) + ".csv"), rep);
    for (int v = 0; v < 2; ++v) {
      const auto& c = v == 0 ? rep.raw : rep.adjusted;
      summary << head_name(h) << ',' << (v == 0 ? "raw" : "adjusted") << ',' << c.tp << ',' << c.fp << ',' << c.tn
              << ',' << c.fn << ',' << fmt_metric(c.sensitivity) << ',' << fmt_metric(c.ppv) << ','
              << rep.fp_with_outcome << ',' << rep.fp_without_outcome << ',' << rep.recounted << '\n';
    }
  }

  std::vector<AcuityState> predicted, truth;
  std::vector<analyze::StateWindow> daily;
  for (const auto& r : rows) {
    const AcuityState p = model::decide_status(model::threshold_bits(r.probs, thresholds));
    const AcuityState t = next_state(r.targets);
    predicted.push_back(p);
    truth.push_back(t);
    daily.push_back({r.admission_id, r.window_index + 1, t, p});
  }
  analyze::write_status_confusion_csv(dir / "status_confusion.csv", analyze::status_confusion(predicted, truth));
  analyze::write_daily_csv(dir / "daily_distribution.csv", analyze::daily_distribution(daily, config.analyze.max_day));
  log(o, "[analyze] " + std::to_string(rows.size()) + " windows");
}

void run_pipeline(const RunConfig& config, const StageOptions& o, const std::optional<fs::path>& data_dir) {
  if (!data_dir) run_synth(config, o);
  run_prepare(config, o, data_dir);
  run_train(config, o);
  run_calibrate(config, o);
  run_eval(config, o);
  run_attribute(config, o);
  run_analyze(config, o);
  (void)kStageNames;
}

}  // namespace apricot::pipeline
