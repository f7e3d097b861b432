#include "apricot/model.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace apricot::model {

using ndgrad::Shape;
using nlohmann::json;

void ModelConfig::validate() const {
  const std::size_t fields[] = {d_model,     n_blocks,   d_state,   expand,        conv_width,  k_top,
                                max_len,     vocab_size, n_static,  fused_width,   pool_hidden, static_hidden,
                                fusion_hidden};
  for (std::size_t f : fields)
    if (f == 0) throw std::invalid_argument("model config: sizes must be positive");
  if (!(dt_min > 0.0 && dt_max >= dt_min)) throw std::invalid_argument("model config: need 0 < dt_min <= dt_max");
}

std::string config_to_json(const ModelConfig& c) {
  json j{{"d_model", c.d_model},         {"n_blocks", c.n_blocks},
         {"d_state", c.d_state},         {"expand", c.expand},
         {"conv_width", c.conv_width},   {"k_top", c.k_top},
         {"max_len", c.max_len},         {"vocab_size", c.vocab_size},
         {"n_static", c.n_static},       {"dt_rank", c.dt_rank},
         {"fused_width", c.fused_width}, {"pool_hidden", c.pool_hidden},
         {"static_hidden", c.static_hidden}, {"fusion_hidden", c.fusion_hidden},
         {"dt_min", c.dt_min},           {"dt_max", c.dt_max},
         {"seed", c.seed}};
  return j.dump(2);
}

ModelConfig config_from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelConfig c;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  get("d_model", c.d_model);
  get("n_blocks", c.n_blocks);
  get("d_state", c.d_state);
  get("expand", c.expand);
  get("conv_width", c.conv_width);
  get("k_top", c.k_top);
  get("max_len", c.max_len);
  get("vocab_size", c.vocab_size);
  get("n_static", c.n_static);
  get("dt_rank", c.dt_rank);
  get("fused_width", c.fused_width);
  get("pool_hidden", c.pool_hidden);
  get("static_hidden", c.static_hidden);
  get("fusion_hidden", c.fusion_hidden);
  get("dt_min", c.dt_min);
  get("dt_max", c.dt_max);
  get("seed", c.seed);
  c.validate();
  return c;
}

namespace {

std::string block_prefix(std::size_t i) { return "block" + std::to_string(i) + "."; }

// Declared parameter shapes in initialisation order.
std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& c) {
  const std::size_t d = c.d_model, di = c.d_inner(), n = c.d_state, k = c.conv_width, r = c.resolved_dt_rank();
  const std::size_t f = c.fused_width;
  std::vector<std::pair<std::string, Shape>> out{
      {"embed.time_conv.weight", {k, 1, d}},
      {"embed.time_conv.bias", {d}},
      {"embed.value_conv.weight", {k, 1, d}},
      {"embed.value_conv.bias", {d}},
      {"embed.code.weight", {c.vocab_size, d}},
  };
  for (std::size_t b = 0; b < c.n_blocks; ++b) {
    const std::string p = block_prefix(b);
    out.push_back({p + "norm.gain", {d}});
    out.push_back({p + "norm.bias", {d}});
    out.push_back({p + "in_proj.weight", {d, 2 * di}});
    out.push_back({p + "conv.weight", {k, di}});
    out.push_back({p + "conv.bias", {di}});
    out.push_back({p + "x_proj.weight", {di, r + 2 * n}});
    out.push_back({p + "dt_proj.weight", {r, di}});
    out.push_back({p + "dt_proj.bias", {di}});
    out.push_back({p + "A_log", {di, n}});
    out.push_back({p + "D", {di}});
    out.push_back({p + "out_proj.weight", {di, d}});
  }
  out.push_back({"norm_f.gain", {d}});
  out.push_back({"norm_f.bias", {d}});
  out.push_back({"pool_mlp.fc1.weight", {d, c.pool_hidden}});
  out.push_back({"pool_mlp.fc1.bias", {c.pool_hidden}});
  out.push_back({"pool_mlp.fc2.weight", {c.pool_hidden, f}});
  out.push_back({"pool_mlp.fc2.bias", {f}});
  out.push_back({"static.fc1.weight", {c.n_static, c.static_hidden}});
  out.push_back({"static.fc1.bias", {c.static_hidden}});
  out.push_back({"static.fc2.weight", {c.static_hidden, f}});
  out.push_back({"static.fc2.bias", {f}});
  out.push_back({"fusion.weight", {2 * f, c.fusion_hidden}});
  out.push_back({"fusion.bias", {c.fusion_hidden}});
  for (std::size_t h = 0; h < kNumHeads; ++h) {
    const std::string p = "head." + std::string(head_name(h)) + ".";
    out.push_back({p + "weight", {c.fusion_hidden, 1}});
    out.push_back({p + "bias", {1}});
  }
  return out;
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::size_t param_count(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.d_model, di = c.d_inner(), n = c.d_state, k = c.conv_width, r = c.resolved_dt_rank();
  const std::size_t f = c.fused_width, hf = c.fusion_hidden;
  const std::size_t embed = 2 * (k * d + d) + c.vocab_size * d;
  const std::size_t block = 2 * d + 2 * d * di + k * di + di + di * (r + 2 * n) + r * di + di + di * n + di + di * d;
  const std::size_t pool = d * c.pool_hidden + c.pool_hidden + c.pool_hidden * f + f;
  const std::size_t stat = c.n_static * c.static_hidden + c.static_hidden + c.static_hidden * f + f;
  const std::size_t fusion = 2 * f * hf + hf;
  return embed + c.n_blocks * block + 2 * d + pool + stat + fusion + kNumHeads * (hf + 1);
}

std::size_t count_scalars(const ParamMap& params) {
  std::size_t total = 0;
  for (const auto& [name, a] : params) total += a.size();
  return total;
}

ParamMap init_params(const ModelConfig& c) {
  c.validate();
  std::mt19937_64 rng(c.seed);
  ParamMap out;
  for (const auto& [name, shape] : param_shapes(c)) {
    Array a(shape);
    auto uniform = [&](double bound) {
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& v : a.values()) v = u(rng);
    };
    if (ends_with(name, "norm.gain") || ends_with(name, "norm_f.gain")) {
      a = Array(shape, 1.0);
    } else if (ends_with(name, "norm.bias") || ends_with(name, "norm_f.bias") || (name.rfind("head.", 0) == 0 && ends_with(name, "bias"))) {
      a = Array(shape, 0.0);
    } else if (ends_with(name, "A_log")) {
      for (std::size_t i = 0; i < shape[0]; ++i)
        for (std::size_t j = 0; j < shape[1]; ++j) a.at(i, j) = std::log(static_cast<double>(j + 1));
    } else if (ends_with(name, ".D")) {
      a = Array(shape, 1.0);
    } else if (ends_with(name, "dt_proj.bias")) {
      std::uniform_real_distribution<double> u(std::log(c.dt_min), std::log(c.dt_max));
      for (double& v : a.values()) {
        const double dt = std::exp(u(rng));
        v = dt + std::log(-std::expm1(-dt));  // inverse softplus
      }
    } else if (ends_with(name, "dt_proj.weight")) {
      uniform(1.0 / std::sqrt(static_cast<double>(c.resolved_dt_rank())));
    } else if (name == "embed.code.weight") {
      std::normal_distribution<double> g(0.0, 1.0);
      for (double& v : a.values()) v = g(rng);
    } else if (ends_with(name, "conv.weight") || ends_with(name, "conv.bias")) {
      // single input channel per kernel, so fan-in is the width
      const std::size_t fan_in = c.conv_width;
      uniform(1.0 / std::sqrt(static_cast<double>(fan_in)));
    } else {
      // linear layers: weight [in, out], bias [out]; bound 1/sqrt(in)
      const std::string base = name.substr(0, name.rfind('.'));
      const std::size_t fan_in = out.count(base + ".weight") ? out.at(base + ".weight").dim(0) : shape[0];
      uniform(1.0 / std::sqrt(static_cast<double>(fan_in)));
    }
    out.emplace(name, std::move(a));
  }
  return out;
}

ModelInput make_input(const cohort::WindowSample& sample, const ModelConfig& config) {
  ModelInput in;
  const std::size_t n = sample.codes.size();
  const std::size_t first = n > config.max_len ? n - config.max_len : 0;
  in.times.assign(sample.times.begin() + static_cast<std::ptrdiff_t>(first), sample.times.end());
  in.values.assign(sample.values.begin() + static_cast<std::ptrdiff_t>(first), sample.values.end());
  in.codes.assign(sample.codes.begin() + static_cast<std::ptrdiff_t>(first), sample.codes.end());
  in.valid = in.codes.size();
  in.static_vec = sample.static_vec;
  return in;
}

ModelInput pad_input(ModelInput input, std::size_t length, double time_fill, double value_fill, int code_fill) {
  if (input.times.size() < length) {
    input.times.resize(length, time_fill);
    input.values.resize(length, value_fill);
    input.codes.resize(length, code_fill);
  }
  return input;
}

Array positional_encoding(std::size_t length, std::size_t width) {
  Array pe(Shape{length, width});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(width));
      const double angle = static_cast<double>(pos) * freq;
      pe.at(pos, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Discretized discretize(const Array& delta, const Array& a, const Array& b) {
  const std::size_t len = delta.dim(0), di = delta.dim(1), n = a.dim(1);
  if (a.dim(0) != di || b.dim(0) != len || b.dim(1) != n)
    throw std::invalid_argument("discretize: incompatible shapes " + ndgrad::shape_string(delta.shape()) + ", " +
                                ndgrad::shape_string(a.shape()) + ", " + ndgrad::shape_string(b.shape()));
  Discretized out{Array(Shape{len, di, n}), Array(Shape{len, di, n})};
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t c = 0; c < di; ++c) {
      const double dt = delta.at(t, c);
      for (std::size_t s = 0; s < n; ++s) {
        const std::size_t idx = (t * di + c) * n + s;
        out.a_bar[idx] = std::exp(dt * a.at(c, s));
        out.b_bar[idx] = dt * b.at(t, s);
      }
    }
  return out;
}

Array selective_scan(const Array& u, const Discretized& disc, const Array& c, const Array& d) {
  const std::size_t len = u.dim(0), di = u.dim(1);
  const std::size_t n = len ? disc.a_bar.dim(2) : c.dim(1);
  Array y(Shape{len, di});
  std::vector<double> h(di * n, 0.0);
  for (std::size_t t = 0; t < len; ++t) {
    const double* ab = disc.a_bar.data() + t * di * n;
    const double* bb = disc.b_bar.data() + t * di * n;
    const double* ct = c.data() + t * n;
    for (std::size_t ch = 0; ch < di; ++ch) {
      const double ut = u.at(t, ch);
      double* hc = h.data() + ch * n;
      double acc = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        hc[s] = ab[ch * n + s] * hc[s] + bb[ch * n + s] * ut;
        acc += ct[s] * hc[s];
      }
      y.at(t, ch) = acc + d[ch] * ut;
    }
  }
  return y;
}

Var ssm_scan(Var u, Var delta, Var a, Var b, Var c, Var d) {
  const Array& uv = u.value();
  const Array& dv = delta.value();
  const Array& av = a.value();
  const Array& bv = b.value();
  const Array& cv = c.value();
  const Array& Dv = d.value();
  if (uv.rank() != 2 || dv.shape() != uv.shape() || av.rank() != 2 || av.dim(0) != uv.dim(1) || bv.rank() != 2 ||
      bv.dim(0) != uv.dim(0) || bv.dim(1) != av.dim(1) || cv.shape() != bv.shape() || Dv.shape() != Shape{uv.dim(1)})
    throw std::invalid_argument("ssm_scan: incompatible shapes " + ndgrad::shape_string(uv.shape()) + " and " +
                                ndgrad::shape_string(av.shape()) + ", " + ndgrad::shape_string(bv.shape()));
  const std::size_t len = uv.dim(0), di = uv.dim(1), n = av.dim(1);
  auto states = std::make_shared<std::vector<double>>(len * di * n);
  Array y(Shape{len, di});
  std::vector<double> h(di * n, 0.0);
  for (std::size_t t = 0; t < len; ++t) {
    const double* bt = bv.data() + t * n;
    const double* ct = cv.data() + t * n;
    double* hs = states->data() + t * di * n;
    for (std::size_t ch = 0; ch < di; ++ch) {
      const double ut = uv.at(t, ch);
      const double dt = dv.at(t, ch);
      const double* arow = av.data() + ch * n;
      double* hc = h.data() + ch * n;
      double acc = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        hc[s] = std::exp(dt * arow[s]) * hc[s] + dt * bt[s] * ut;
        acc += ct[s] * hc[s];
      }
      std::copy(hc, hc + n, hs + ch * n);
      y.at(t, ch) = acc + Dv[ch] * ut;
    }
  }
  const std::size_t ui = u.id(), dli = delta.id(), ai = a.id(), bi = b.id(), ci = c.id(), Di = d.id();
  return u.tape().record(std::move(y), {u, delta, a, b, c, d}, [=](ndgrad::Tape& tp, std::size_t self) {
    const Array& gy = tp.grad(self);
    const Array& U = tp.value(ui);
    const Array& Dt = tp.value(dli);
    const Array& A = tp.value(ai);
    const Array& B = tp.value(bi);
    const Array& C = tp.value(ci);
    const Array& Dd = tp.value(Di);
    Array* gu = tp.accumulate_target(ui);
    Array* gdt = tp.accumulate_target(dli);
    Array* ga = tp.accumulate_target(ai);
    Array* gb = tp.accumulate_target(bi);
    Array* gc = tp.accumulate_target(ci);
    Array* gD = tp.accumulate_target(Di);
    const std::vector<double>& H = *states;
    // carry[ch, s] = dL/dh_{t+1} * a_bar_{t+1}, the gradient flowing into h_t
    std::vector<double> carry(di * n, 0.0);
    for (std::size_t t = len; t-- > 0;) {
      const double* ct = C.data() + t * n;
      const double* bt = B.data() + t * n;
      const double* ht = H.data() + t * di * n;
      const double* hp = t > 0 ? H.data() + (t - 1) * di * n : nullptr;
      for (std::size_t ch = 0; ch < di; ++ch) {
        const double g = gy.at(t, ch);
        const double ut = U.at(t, ch);
        const double dt = Dt.at(t, ch);
        const double* arow = A.data() + ch * n;
        if (gD) (*gD)[ch] += g * ut;
        double gut = g * Dd[ch];
        double gdtt = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
          const std::size_t k = ch * n + s;
          if (gc) (*gc)[t * n + s] += g * ht[k];
          const double gh = g * ct[s] + carry[k];
          const double abar = std::exp(dt * arow[s]);
          const double hprev = hp ? hp[k] : 0.0;
          const double gab = gh * hprev * abar;  // through exp(dt * A)
          gdtt += gab * arow[s] + gh * bt[s] * ut;
          if (ga) (*ga)[k] += gab * dt;
          if (gb) (*gb)[t * n + s] += gh * dt * ut;
          gut += gh * dt * bt[s];
          carry[k] = gh * abar;
        }
        if (gu) gu->at(t, ch) += gut;
        if (gdt) gdt->at(t, ch) += gdtt;
      }
    }
  });
}

Network::Network(Tape& tape, const ParamMap& params, const ModelConfig& config, bool trainable)
    : tape_(&tape), config_(config) {
  for (const auto& [name, shape] : param_shapes(config)) {
    const auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("model: missing parameter " + name);
    if (it->second.shape() != shape)
      throw std::invalid_argument("model: parameter " + name + " has shape " + ndgrad::shape_string(it->second.shape()) +
                                  ", expected " + ndgrad::shape_string(shape));
    vars_.emplace(name, trainable ? tape.parameter(it->second) : tape.constant(it->second));
  }
}

Var Network::param(const std::string& name) const {
  const auto it = vars_.find(name);
  if (it == vars_.end()) throw std::invalid_argument("model: unknown parameter " + name);
  return it->second;
}

Var Network::linear(Var x, const std::string& prefix, bool with_bias) const {
  Var y = ndgrad::matmul(x, param(prefix + ".weight"));
  return with_bias ? ndgrad::add(y, param(prefix + ".bias")) : y;
}

Var Network::embed_content(const ModelInput& in) const {
  const std::size_t len = in.codes.size();
  if (in.times.size() != len || in.values.size() != len)
    throw std::invalid_argument("embed: times, values and codes differ in length");
  Var times = tape_->constant(Array(Shape{len, 1}, in.times));
  Var values = tape_->constant(Array(Shape{len, 1}, in.values));
  Var e = ndgrad::add(ndgrad::conv1d(times, param("embed.time_conv.weight"), param("embed.time_conv.bias")),
                      ndgrad::conv1d(values, param("embed.value_conv.weight"), param("embed.value_conv.bias")));
  return ndgrad::add(e, ndgrad::embedding(param("embed.code.weight"), in.codes));
}

Var Network::add_position(Var content) const {
  return ndgrad::add(content, tape_->constant(positional_encoding(content.shape()[0], config_.d_model)));
}

Var Network::embed(const ModelInput& in) const { return add_position(embed_content(in)); }

Var Network::mamba_block(Var x, std::size_t block) const {
  const std::string p = block_prefix(block);
  const std::size_t di = config_.d_inner(), n = config_.d_state, r = config_.resolved_dt_rank();
  Var xn = ndgrad::layer_norm(x, param(p + "norm.gain"), param(p + "norm.bias"));
  Var proj = linear(xn, p + "in_proj", false);
  Var u = ndgrad::slice(proj, 1, 0, di);
  Var gate = ndgrad::slice(proj, 1, di, di);
  Var uc = ndgrad::silu(ndgrad::depthwise_conv1d(u, param(p + "conv.weight"), param(p + "conv.bias")));
  Var xdb = linear(uc, p + "x_proj", false);
  Var delta = ndgrad::softplus(linear(ndgrad::slice(xdb, 1, 0, r), p + "dt_proj"));
  Var b = ndgrad::slice(xdb, 1, r, n);
  Var c = ndgrad::slice(xdb, 1, r + n, n);
  Var a = ndgrad::scale(ndgrad::exp(param(p + "A_log")), -1.0);
  Var y = ssm_scan(uc, delta, a, b, c, param(p + "D"));
  Var out = linear(ndgrad::mul(y, ndgrad::silu(gate)), p + "out_proj", false);
  return ndgrad::add(x, out);
}

Var Network::pool(Var hidden, std::size_t valid) const {
  const std::size_t d = hidden.shape()[1];
  Var pooled = ndgrad::reshape(ndgrad::mean(ndgrad::topk_select(hidden, config_.k_top, valid), 0), {1, d});
  return linear(ndgrad::silu(linear(pooled, "pool_mlp.fc1")), "pool_mlp.fc2");
}

Var Network::static_embed(Var static_row) const {
  return linear(ndgrad::silu(linear(static_row, "static.fc1")), "static.fc2");
}

Var Network::heads(Var pooled, Var static_embedding) const {
  Var fused = ndgrad::silu(linear(ndgrad::concat({pooled, static_embedding}, 1), "fusion"));
  std::vector<Var> weights, biases;
  for (std::size_t h = 0; h < kNumHeads; ++h) {
    const std::string p = "head." + std::string(head_name(h)) + ".";
    weights.push_back(param(p + "weight"));
    biases.push_back(param(p + "bias"));
  }
  return ndgrad::add(ndgrad::matmul(fused, ndgrad::concat(weights, 1)), ndgrad::concat(biases, 0));
}

Var Network::static_row(const ModelInput& in) const {
  if (in.static_vec.size() != config_.n_static)
    throw std::invalid_argument("model: static vector has " + std::to_string(in.static_vec.size()) +
                                " entries, expected " + std::to_string(config_.n_static));
  return tape_->constant(Array(Shape{1, config_.n_static}, in.static_vec));
}

Var Network::forward_from_embedding(Var embedding, std::size_t valid, Var static_row) const {
  Var h = embedding;
  for (std::size_t b = 0; b < config_.n_blocks; ++b) h = mamba_block(h, b);
  h = ndgrad::layer_norm(h, param("norm_f.gain"), param("norm_f.bias"));
  return heads(pool(h, valid), static_embed(static_row));
}

Var Network::forward(const ModelInput& in) const {
  if (in.valid > in.codes.size()) throw std::invalid_argument("model: valid length exceeds sequence length");
  return forward_from_embedding(embed(in), in.valid, static_row(in));
}

std::array<double, kNumHeads> forward_logits(const ParamMap& params, const ModelConfig& config,
                                             const ModelInput& input) {
  Tape tape;
  const Network net(tape, params, config, false);
  const Array& z = net.forward(input).value();
  std::array<double, kNumHeads> out{};
  std::copy(z.values().begin(), z.values().end(), out.begin());
  return out;
}

HeadProbs forward(const ParamMap& params, const ModelConfig& config, const ModelInput& input) {
  HeadProbs p = forward_logits(params, config, input);
  for (double& v : p) v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return p;
}

HeadBits threshold_bits(const HeadProbs& probs, const std::array<double, kNumHeads>& thresholds) {
  HeadBits bits{};
  for (std::size_t h = 0; h < kNumHeads; ++h) bits[h] = probs[h] >= thresholds[h];
  return bits;
}

AcuityState decide_status(const HeadBits& bits) {
  if (bits[head_index(Head::kDeceased)]) return AcuityState::kDeceased;
  for (Head h : {Head::kUnstable, Head::kStableToUnstable, Head::kOnsetMV, Head::kOnsetVP, Head::kOnsetCRRT})
    if (bits[head_index(h)]) return AcuityState::kUnstable;
  if (bits[head_index(Head::kDischarge)]) return AcuityState::kDischarge;
  return AcuityState::kStable;
}

double instability_risk(const HeadProbs& probs) {
  double r = 0.0;
  for (Head h : {Head::kUnstable, Head::kStableToUnstable, Head::kOnsetMV, Head::kOnsetVP, Head::kOnsetCRRT})
    r = std::max(r, probs[head_index(h)]);
  return r;
}

}  // namespace apricot::model
