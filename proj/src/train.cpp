#include "apricot/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "apricot/csv.hpp"
#include "json.hpp"

namespace apricot::train {

using model::ModelInput;
using model::ParamMap;
using ndgrad::Array;
using ndgrad::Var;
using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0) throw std::invalid_argument("train config: epochs and batch_size must be positive");
  if (!(learning_rate >= 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0))
    throw std::invalid_argument("train config: invalid optimizer settings");
  if (patience == 0) throw std::invalid_argument("train config: patience must be positive");
}

std::string config_to_json(const TrainConfig& c) {
  json j{{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
         {"beta1", c.beta1},   {"beta2", c.beta2},           {"eps", c.eps},
         {"seed", c.seed},     {"patience", c.patience}};
  return j.dump(2);
}

TrainConfig config_from_json(const std::string& text) {
  const json j = json::parse(text);
  TrainConfig c;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("learning_rate", c.learning_rate);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("eps", c.eps);
  get("seed", c.seed);
  get("patience", c.patience);
  c.validate();
  return c;
}

PatientSplit split_patients(std::span<const std::string> patient_ids, double frac, std::uint64_t seed) {
  if (!(frac >= 0.0 && frac <= 1.0)) throw std::invalid_argument("split_patients: fraction outside [0,1]");
  std::vector<std::string> ids(patient_ids.begin(), patient_ids.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(frac * static_cast<double>(ids.size())));
  PatientSplit out;
  out.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

SampleSplit partition_samples(std::span<const cohort::WindowSample> samples, const PatientSplit& split) {
  const std::set<std::string> train_ids(split.train.begin(), split.train.end());
  const std::set<std::string> val_ids(split.val.begin(), split.val.end());
  SampleSplit out;
  for (const auto& s : samples) {
    if (train_ids.count(s.patient_id)) {
      out.train.push_back(s);
    } else if (val_ids.count(s.patient_id)) {
      out.val.push_back(s);
    } else {
      throw std::invalid_argument("partition_samples: patient " + s.patient_id + " is in neither split");
    }
  }
  return out;
}

HeadWeights head_weights(std::span<const LabelVector> labels) {
  if (labels.empty()) throw std::invalid_argument("head_weights: no labels");
  HeadWeights out{};
  const double n = static_cast<double>(labels.size());
  for (std::size_t h = 0; h < kNumHeads; ++h) {
    std::size_t pos = 0;
    for (const auto& y : labels) pos += y[h];
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) continue;
    out[h] = {n / (2.0 * static_cast<double>(pos)), n / (2.0 * static_cast<double>(neg)), true};
  }
  return out;
}

HeadWeights head_weights(std::span<const cohort::WindowSample> samples) {
  std::vector<LabelVector> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.targets);
  return head_weights(labels);
}

namespace {

void fill_targets(const LabelVector& y, const HeadWeights& weights, double* targets, double* w) {
  for (std::size_t h = 0; h < kNumHeads; ++h) {
    targets[h] = y[h];
    w[h] = !weights[h].active ? 0.0 : y[h] ? weights[h].pos : weights[h].neg;
  }
}

double bce(double z, double y) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - y * z; }

std::vector<ModelInput> to_inputs(std::span<const cohort::WindowSample> samples, const model::ModelConfig& config) {
  std::vector<ModelInput> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(model::make_input(s, config));
  return out;
}

}  // namespace

Var batch_loss(const model::Network& net, std::span<const ModelInput> inputs, std::span<const LabelVector> targets,
               const HeadWeights& weights) {
  if (inputs.size() != targets.size() || inputs.empty())
    throw std::invalid_argument("batch_loss: need one target per input and a non-empty batch");
  std::vector<Var> logits;
  logits.reserve(inputs.size());
  for (const auto& in : inputs) logits.push_back(net.forward(in));
  const std::size_t b = inputs.size();
  std::vector<double> y(b * kNumHeads), w(b * kNumHeads);
  for (std::size_t i = 0; i < b; ++i) fill_targets(targets[i], weights, y.data() + i * kNumHeads, w.data() + i * kNumHeads);
  Var z = ndgrad::reshape(ndgrad::concat(logits, 0), {b * kNumHeads});
  return ndgrad::scale(ndgrad::bce_with_logits(z, y, w), 1.0 / static_cast<double>(b));
}

void adam_step(ParamMap& params, const ParamMap& grads, AdamState& state, const TrainConfig& config) {
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    const auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Array& g = git->second;
    auto [mit, m_new] = state.m.try_emplace(name, p.shape(), 0.0);
    auto [vit, v_new] = state.v.try_emplace(name, p.shape(), 0.0);
    Array& m = mit->second;
    Array& v = vit->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      p[i] -= config.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.eps);
    }
  }
}

DatasetLoss evaluate_loss(const ParamMap& params, const model::ModelConfig& config,
                          std::span<const cohort::WindowSample> samples, const HeadWeights& weights) {
  DatasetLoss out;
  if (samples.empty()) return out;
  for (const auto& s : samples) {
    const auto z = model::forward_logits(params, config, model::make_input(s, config));
    double y[kNumHeads], w[kNumHeads];
    fill_targets(s.targets, weights, y, w);
    for (std::size_t h = 0; h < kNumHeads; ++h)
      if (w[h] != 0.0) out.per_head[h] += w[h] * bce(z[h], y[h]);
  }
  const double n = static_cast<double>(samples.size());
  for (double& v : out.per_head) {
    v /= n;
    out.total += v;
  }
  return out;
}

namespace {

[[noreturn]] void report_non_finite(const model::Network& net, std::span<const ModelInput> inputs,
                                    std::span<const LabelVector> targets, const HeadWeights& weights,
                                    std::size_t epoch, std::size_t batch) {
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Array z = net.forward(inputs[i]).value();
    double y[kNumHeads], w[kNumHeads];
    fill_targets(targets[i], weights, y, w);
    for (std::size_t h = 0; h < kNumHeads; ++h) {
      if (!std::isfinite(w[h] * bce(z[h], y[h])))
        throw NonFiniteLoss("non-finite loss in head " + std::string(head_name(h)) + " at epoch " +
                            std::to_string(epoch) + ", batch " + std::to_string(batch) + ", sample " +
                            std::to_string(i));
    }
  }
  throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch));
}

}  // namespace

TrainResult train(const model::ModelConfig& model_config, ParamMap initial,
                  std::span<const cohort::WindowSample> train_set, std::span<const cohort::WindowSample> val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  const HeadWeights weights = head_weights(train_set);
  const std::vector<ModelInput> inputs = to_inputs(train_set, model_config);
  std::vector<std::size_t> order(train_set.size());

  TrainResult result;
  ParamMap params = std::move(initial);
  AdamState adam;
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  result.params = params;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(config.seed * 1000003ULL + epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<ModelInput> batch_in;
      std::vector<LabelVector> batch_y;
      for (std::size_t i = start; i < end; ++i) {
        batch_in.push_back(inputs[order[i]]);
        batch_y.push_back(train_set[order[i]].targets);
      }
      ndgrad::Tape tape;
      const model::Network net(tape, params, model_config, true);
      Var loss = batch_loss(net, batch_in, batch_y, weights);
      const double value = loss.value().item();
      if (!std::isfinite(value)) report_non_finite(net, batch_in, batch_y, weights, epoch, batches);
      tape.backward(loss);
      ParamMap grads;
      for (const auto& [name, var] : net.params()) grads.emplace(name, tape.gradient(var));
      adam_step(params, grads, adam, config);
      loss_sum += value;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    if (!val_set.empty()) {
      const DatasetLoss vl = evaluate_loss(params, model_config, val_set, weights);
      rec.val_loss = vl.total;
      rec.head_val_loss = vl.per_head;
    } else {
      rec.val_loss = rec.train_loss;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_loss < best) {
      best = rec.val_loss;
      result.params = params;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,train_loss,val_loss";
  for (std::size_t h = 0; h < kNumHeads; ++h) out << ",val_loss_" << head_name(h);
  out << '\n';
  for (const auto& r : history) {
    out << r.epoch << ',' << csv::fmt_report(r.train_loss) << ',' << csv::fmt_report(r.val_loss);
    for (double v : r.head_val_loss) out << ',' << csv::fmt_report(v);
    out << '\n';
  }
}

std::vector<ScoreRow> predict_scores(const ParamMap& params, const model::ModelConfig& config,
                                     std::span<const cohort::WindowSample> samples) {
  std::vector<ScoreRow> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    ScoreRow r;
    r.patient_id = s.patient_id;
    r.admission_id = s.admission_id;
    r.window_index = s.window_index;
    r.current_state = s.current_state;
    r.targets = s.targets;
    r.probs = model::forward(params, config, model::make_input(s, config));
    out.push_back(std::move(r));
  }
  return out;
}

void write_scores_csv(const std::filesystem::path& path, std::span<const ScoreRow> rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "patient_id,admission_id,window_index,current_state";
  for (std::size_t h = 0; h < kNumHeads; ++h) out << ",p_" << head_name(h);
  for (std::size_t h = 0; h < kNumHeads; ++h) out << ",y_" << head_name(h);
  out << '\n';
  for (const auto& r : rows) {
    out << r.patient_id << ',' << r.admission_id << ',' << r.window_index << ',' << state_name(r.current_state);
    for (double p : r.probs) out << ',' << csv::fmt(p);
    for (auto y : r.targets) out << ',' << static_cast<int>(y);
    out << '\n';
  }
}

std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  const std::size_t pid = t.column("patient_id"), aid = t.column("admission_id"), win = t.column("window_index"),
                    st = t.column("current_state");
  std::array<std::size_t, kNumHeads> pc{}, yc{};
  for (std::size_t h = 0; h < kNumHeads; ++h) {
    pc[h] = t.column("p_" + std::string(head_name(h)));
    yc[h] = t.column("y_" + std::string(head_name(h)));
  }
  std::vector<ScoreRow> out;
  for (const auto& row : t.rows) {
    ScoreRow r;
    r.patient_id = row[pid];
    r.admission_id = row[aid];
    r.window_index = static_cast<std::size_t>(csv::parse_int(row[win], "window_index"));
    const auto state = parse_state(row[st]);
    if (!state) throw std::runtime_error(path.string() + ": unknown state " + row[st]);
    r.current_state = *state;
    for (std::size_t h = 0; h < kNumHeads; ++h) {
      r.probs[h] = csv::parse_double(row[pc[h]], "score");
      r.targets[h] = static_cast<std::uint8_t>(csv::parse_int(row[yc[h]], "label"));
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace apricot::train
