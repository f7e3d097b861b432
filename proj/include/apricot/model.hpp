#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "apricot/cohort.hpp"
#include "apricot/ndgrad/checkpoint.hpp"
#include "apricot/ndgrad/ops.hpp"
#include "apricot/types.hpp"

namespace apricot::model {

using ndgrad::Array;
using ndgrad::ParamMap;
using ndgrad::Tape;
using ndgrad::Var;

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_blocks = 2;
  std::size_t d_state = 16;
  std::size_t expand = 2;
  std::size_t conv_width = 4;
  std::size_t k_top = 4;
  std::size_t max_len = 256;
  std::size_t vocab_size = 24;
  std::size_t n_static = 16;
  std::size_t dt_rank = 0;  // 0 = ceil(d_model / 16)
  std::size_t fused_width = 64;
  std::size_t pool_hidden = 256;
  std::size_t static_hidden = 64;
  std::size_t fusion_hidden = 256;
  double dt_min = 1e-3;
  double dt_max = 1e-1;
  std::uint64_t seed = 0;

  std::size_t d_inner() const { return expand * d_model; }
  std::size_t resolved_dt_rank() const { return dt_rank ? dt_rank : (d_model + 15) / 16; }
  void validate() const;
};

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

// Learnable scalar count from the declared shapes:
//   embedding   2(K d + d) + V d
//   per block   2d + 2 d D_in + K D_in + D_in + D_in (R + 2N) + R D_in + D_in + D_in N + D_in + D_in d
//   final norm  2d
//   pool MLP    d H_p + H_p + H_p F + F
//   static      f H_s + H_s + H_s F + F
//   fusion      2F H_f + H_f
//   heads       9 (H_f + 1)
// with D_in = expand * d, R = dt rank, N = d_state, K = conv width, F = fused
// width. Doubling N adds n_blocks * 3 * D_in * N (x_proj B/C columns and A).
std::size_t param_count(const ModelConfig& config);
std::size_t count_scalars(const ParamMap& params);

// Seeded initialisation; A_log = log(1..N) per channel so A = -(1..N), and
// the dt bias satisfies softplus(bias) in [dt_min, dt_max].
ParamMap init_params(const ModelConfig& config);

// One model input. Rows at or beyond `valid` are padding: they never affect
// the output.
struct ModelInput {
  std::vector<double> times;
  std::vector<double> values;
  std::vector<int> codes;
  std::size_t valid = 0;
  std::vector<double> static_vec;
};

// Keeps the most recent max_len events of a window.
ModelInput make_input(const cohort::WindowSample& sample, const ModelConfig& config);
// Pads to `length` rows with the given filler triplet.
ModelInput pad_input(ModelInput input, std::size_t length, double time_fill = 0.0, double value_fill = 0.0,
                     int code_fill = 0);

using HeadProbs = std::array<double, kNumHeads>;
using HeadBits = std::array<bool, kNumHeads>;

Array positional_encoding(std::size_t length, std::size_t width);

// Selective state-space primitives on plain arrays. A is diagonal per inner
// channel, stored as [D_in, N].
struct Discretized {
  Array a_bar;  // [L, D_in, N] = exp(delta * A)
  Array b_bar;  // [L, D_in, N] = delta * B
};
Discretized discretize(const Array& delta, const Array& a, const Array& b);
// h_t = a_bar_t * h_{t-1} + b_bar_t * u_t ; y_t = <C_t, h_t> + D * u_t, h_0 = 0.
Array selective_scan(const Array& u, const Discretized& disc, const Array& c, const Array& d);

// Tape op fusing discretisation and scan: u, delta [L, D_in]; A [D_in, N];
// B, C [L, N]; D [D_in] -> y [L, D_in].
Var ssm_scan(Var u, Var delta, Var a, Var b, Var c, Var d);

// Binds a parameter map to a tape and builds the network graph.
class Network {
 public:
  Network(Tape& tape, const ParamMap& params, const ModelConfig& config, bool trainable);

  Var embed(const ModelInput& input) const;                      // [L, d_model]
  // Event-content part of the embedding (both convolutions plus the code
  // table) and the positional term added on top of it.
  Var embed_content(const ModelInput& input) const;
  Var add_position(Var content) const;
  Var mamba_block(Var x, std::size_t block) const;               // [L, d_model]
  Var pool(Var hidden, std::size_t valid) const;                 // [1, fused_width]
  Var static_embed(Var static_row) const;                        // [1, fused_width]
  Var heads(Var pooled, Var static_embedding) const;             // logits [1, 9]
  Var forward_from_embedding(Var embedding, std::size_t valid, Var static_row) const;
  Var forward(const ModelInput& input) const;                    // logits [1, 9]

  Var static_row(const ModelInput& input) const;
  Var param(const std::string& name) const;
  const std::map<std::string, Var>& params() const noexcept { return vars_; }
  Tape& tape() const noexcept { return *tape_; }
  const ModelConfig& config() const noexcept { return config_; }

 private:
  Var linear(Var x, const std::string& prefix, bool with_bias = true) const;

  Tape* tape_;
  ModelConfig config_;
  std::map<std::string, Var> vars_;
};

// Inference helpers.
std::array<double, kNumHeads> forward_logits(const ParamMap& params, const ModelConfig& config,
                                             const ModelInput& input);
HeadProbs forward(const ParamMap& params, const ModelConfig& config, const ModelInput& input);

// Positive iff probability >= threshold.
HeadBits threshold_bits(const HeadProbs& probs, const std::array<double, kNumHeads>& thresholds);

// Priority cascade Deceased > Unstable > Discharge > Stable over head bits.
AcuityState decide_status(const HeadBits& bits);

// Max of the unstable, stable->unstable and therapy-onset probabilities.
double instability_risk(const HeadProbs& probs);

}  // namespace apricot::model
