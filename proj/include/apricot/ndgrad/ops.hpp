#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "apricot/ndgrad/array.hpp"
#include "apricot/ndgrad/tape.hpp"

namespace apricot::ndgrad {

// Every op appends one node to the tape of its inputs and throws
// std::invalid_argument naming both shapes on a mismatch.

// [m,k] x [k,n] -> [m,n]
Var matmul(Var a, Var b);

// Same shape, or b of shape [n] broadcast over the rows of a [..., n].
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

Var scale(Var x, double factor);
Var add_scalar(Var x, double offset);

Var exp(Var x);
Var sigmoid(Var x);
Var silu(Var x);
Var softplus(Var x);

// Causal 1-D convolution over rows: x [L, in], weight [K, in, out], bias [out].
// Output row t sees input rows t-K+1..t (zero padded), so length is preserved.
Var conv1d(Var x, Var weight, Var bias);

// Per-channel causal convolution: x [L, C], weight [K, C], bias [C].
Var depthwise_conv1d(Var x, Var weight, Var bias);

// Row gather: table [V, D], indices in [0, V) -> [L, D].
Var embedding(Var table, std::span<const int> indices);

// Rank-1 or rank-2 inputs; axis 0 or 1.
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length);
Var reshape(Var x, Shape shape);

// Reductions over one axis of a rank-2 array, or the whole array.
Var sum(Var x, std::size_t axis);
Var mean(Var x, std::size_t axis);
Var sum_all(Var x);

// Per column of x [L, C], the min(k, valid_rows) largest entries among the
// first valid_rows rows, in descending order -> [min(k, valid_rows), C].
// Ties resolve to the lower row index.
Var topk_select(Var x, std::size_t k, std::size_t valid_rows);

// Row-wise normalisation of x [L, C] with gain and bias [C].
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

// sum_i weights_i * BCE(sigmoid(logits_i), targets_i) as a scalar [1].
Var bce_with_logits(Var logits, std::span<const double> targets, std::span<const double> weights);

// Builds an op from tape inputs; used by grad_check.
using OpBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Max over input elements of |analytic - numeric| / max(1e-8, |numeric|),
// where the scalar being differentiated is a fixed random projection of the
// op output and numeric gradients use central differences with step h.
double grad_check(const OpBuilder& op, const std::vector<Array>& inputs, double h = 1e-5,
                  unsigned long long seed = 17);

}  // namespace apricot::ndgrad
