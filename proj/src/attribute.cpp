#include "apricot/attribute.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "apricot/csv.hpp"
#include "json.hpp"

namespace apricot::attribute {

using ndgrad::Shape;

namespace {

using MultiPathFunction = std::function<std::vector<Var>(Tape&, Var, Var)>;

Array lerp(const Array& from, const Array& to, double alpha) {
  Array out(from.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = from[i] + alpha * (to[i] - from[i]);
  return out;
}

std::vector<PathAttribution> integrate_multi(const MultiPathFunction& f, const Array& temporal, const Array& static_row,
                                             const Array& temporal_baseline, const Array& static_baseline,
                                             std::size_t steps) {
  if (steps == 0) throw std::invalid_argument("integrated gradients: steps must be positive");
  if (temporal.shape() != temporal_baseline.shape() || static_row.shape() != static_baseline.shape())
    throw std::invalid_argument("integrated gradients: baseline shape differs from input shape");
  std::vector<PathAttribution> out;
  auto evaluate = [&](double alpha) {
    Tape tape;
    const auto outs = f(tape, tape.constant(lerp(temporal_baseline, temporal, alpha)),
                        tape.constant(lerp(static_baseline, static_row, alpha)));
    std::vector<double> values;
    for (const Var& v : outs) values.push_back(v.value().item());
    return values;
  };
  const std::vector<double> at_base = evaluate(0.0);
  for (double v : at_base) {
    PathAttribution p{Array(temporal.shape(), 0.0), Array(static_row.shape(), 0.0), 0.0, v};
    out.push_back(std::move(p));
  }
  for (std::size_t k = 1; k <= steps; ++k) {
    const double alpha = static_cast<double>(k) / static_cast<double>(steps);
    Tape tape;
    Var e = tape.parameter(lerp(temporal_baseline, temporal, alpha));
    Var s = tape.parameter(lerp(static_baseline, static_row, alpha));
    const auto outs = f(tape, e, s);
    if (outs.size() != out.size()) throw std::logic_error("integrated gradients: output count changed along the path");
    for (std::size_t j = 0; j < outs.size(); ++j) {
      tape.zero_grad();
      tape.backward(outs[j]);
      const Array ge = tape.gradient(e);
      const Array gs = tape.gradient(s);
      for (std::size_t i = 0; i < ge.size(); ++i) out[j].temporal[i] += ge[i];
      for (std::size_t i = 0; i < gs.size(); ++i) out[j].static_part[i] += gs[i];
      if (k == steps) out[j].f_input = outs[j].value().item();
    }
  }
  const double inv = 1.0 / static_cast<double>(steps);
  for (auto& p : out) {
    for (std::size_t i = 0; i < p.temporal.size(); ++i) p.temporal[i] *= (temporal[i] - temporal_baseline[i]) * inv;
    for (std::size_t i = 0; i < p.static_part.size(); ++i)
      p.static_part[i] *= (static_row[i] - static_baseline[i]) * inv;
  }
  return out;
}

}  // namespace

PathAttribution integrate_path(const PathFunction& f, const Array& temporal, const Array& static_row,
                               const Array& temporal_baseline, const Array& static_baseline, std::size_t steps) {
  auto multi = [&f](Tape& t, Var e, Var s) { return std::vector<Var>{f(t, e, s)}; };
  return integrate_multi(multi, temporal, static_row, temporal_baseline, static_baseline, steps).front();
}

std::vector<Attribution> integrated_gradients(const model::ParamMap& params, const model::ModelConfig& config,
                                              const model::ModelInput& input, std::span<const std::size_t> heads,
                                              std::size_t steps) {
  for (std::size_t h : heads)
    if (h >= kNumHeads) throw std::invalid_argument("integrated gradients: head index out of range");
  Array embedding, static_row;
  {
    Tape tape;
    const model::Network net(tape, params, config, false);
    embedding = net.embed_content(input).value();
    static_row = net.static_row(input).value();
  }
  // Rows past the valid prefix keep their values on both ends of the path,
  // so their attribution is exactly zero.
  Array baseline(embedding.shape(), 0.0);
  for (std::size_t r = input.valid; r < embedding.dim(0); ++r)
    for (std::size_t c = 0; c < embedding.dim(1); ++c) baseline.at(r, c) = embedding.at(r, c);

  auto f = [&](Tape& tape, Var e, Var s) {
    const model::Network net(tape, params, config, false);
    Var logits = net.forward_from_embedding(net.add_position(e), input.valid, s);
    std::vector<Var> outs;
    for (std::size_t h : heads) outs.push_back(ndgrad::slice(logits, 1, h, 1));
    return outs;
  };
  const auto paths = integrate_multi(f, embedding, static_row, baseline, Array(static_row.shape(), 0.0), steps);

  std::vector<Attribution> out;
  for (std::size_t j = 0; j < heads.size(); ++j) {
    const PathAttribution& p = paths[j];
    Attribution a;
    a.head = heads[j];
    a.f_input = p.f_input;
    a.f_baseline = p.f_baseline;
    a.per_event.assign(embedding.dim(0), 0.0);
    double total = 0.0;
    for (std::size_t r = 0; r < embedding.dim(0); ++r) {
      for (std::size_t c = 0; c < embedding.dim(1); ++c) a.per_event[r] += p.temporal.at(r, c);
      total += a.per_event[r];
    }
    a.per_static.assign(p.static_part.values().begin(), p.static_part.values().end());
    for (double v : a.per_static) total += v;
    a.gap = std::abs(total - (a.f_input - a.f_baseline));
    out.push_back(std::move(a));
  }
  return out;
}

Attribution integrated_gradients(const model::ParamMap& params, const model::ModelConfig& config,
                                 const model::ModelInput& input, std::size_t head, std::size_t steps) {
  const std::size_t heads[] = {head};
  return integrated_gradients(params, config, input, heads, steps).front();
}

std::vector<VariableScore> rank_variables(std::span<const SampleAttribution> samples,
                                          const cohort::Vocabulary& vocabulary,
                                          std::span<const std::string> static_names) {
  std::vector<VariableScore> scores;
  for (const auto& name : vocabulary.names()) scores.push_back({name, false, {}, {}, 0.0, 0});
  for (const auto& name : static_names) scores.push_back({name, true, {}, {}, 0.0, 0});
  const std::size_t n_vars = vocabulary.size();

  for (const auto& s : samples) {
    for (const Attribution& a : s.heads) {
      if (a.head >= kNumPrimaryHeads) continue;
      if (a.per_event.size() < s.codes.size() || a.per_static.size() != static_names.size())
        throw std::invalid_argument("rank_variables: attribution does not match sample " + s.admission_id);
      for (std::size_t i = 0; i < s.codes.size(); ++i) {
        const auto code = static_cast<std::size_t>(s.codes[i]);
        if (code >= n_vars) throw std::invalid_argument("rank_variables: code outside the vocabulary");
        scores[code].signed_sum[a.head] += a.per_event[i];
        scores[code].abs_sum[a.head] += std::abs(a.per_event[i]);
      }
      for (std::size_t j = 0; j < static_names.size(); ++j) {
        scores[n_vars + j].signed_sum[a.head] += a.per_static[j];
        scores[n_vars + j].abs_sum[a.head] += std::abs(a.per_static[j]);
      }
    }
  }
  for (auto& v : scores) {
    v.total = 0.0;
    for (double x : v.abs_sum) v.total += x;
  }
  std::stable_sort(scores.begin(), scores.end(), [](const VariableScore& a, const VariableScore& b) {
    if (a.total != b.total) return a.total > b.total;
    return a.variable < b.variable;
  });
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i].rank = i + 1;
  return scores;
}

void write_ranking_csv(const std::filesystem::path& path, std::span<const VariableScore> ranking) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "variable,kind,head,signed_sum,abs_sum,rank\n";
  for (const auto& v : ranking) {
    for (std::size_t h = 0; h < kNumPrimaryHeads; ++h)
      out << v.variable << ',' << (v.is_static ? "static" : "temporal") << ',' << head_name(h) << ','
          << csv::fmt_report(v.signed_sum[h]) << ',' << csv::fmt_report(v.abs_sum[h]) << ',' << v.rank << '\n';
    out << v.variable << ',' << (v.is_static ? "static" : "temporal") << ",primary_total,,"
        << csv::fmt_report(v.total) << ',' << v.rank << '\n';
  }
}

void write_trajectories_jsonl(const std::filesystem::path& path, std::span<const SampleAttribution> samples,
                              const cohort::Vocabulary& vocabulary) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& s : samples) {
    nlohmann::json j;
    j["admission_id"] = s.admission_id;
    j["window_index"] = s.window_index;
    std::vector<std::string> vars;
    for (int c : s.codes) vars.push_back(vocabulary.name(c));
    j["variables"] = vars;
    for (const auto& a : s.heads) {
      std::vector<double> ev(a.per_event.begin(), a.per_event.begin() + static_cast<std::ptrdiff_t>(s.codes.size()));
      j["heads"][std::string(head_name(a.head))] = {{"per_event", ev},
                                                    {"per_static", a.per_static},
                                                    {"logit", a.f_input},
                                                    {"baseline_logit", a.f_baseline},
                                                    {"completeness_gap", a.gap}};
    }
    out << j.dump() << '\n';
  }
}

}  // namespace apricot::attribute
