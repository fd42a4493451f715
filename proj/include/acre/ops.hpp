#pragma once
// Differentiable tensor operations. Every op takes a Tape*; pass nullptr for
// inference-only evaluation, in which case no backward rule is recorded.
// Gradients accumulate additively, so fan-out works without extra bookkeeping.

#include "acre/tensor.hpp"

namespace acre::ops {

enum class Padding { valid, same_zero };

// x: [B, C_in, H, W], w: [C_out, C_in, k, k], bias: [C_out] (may be undefined).
// Cross-correlation with both spatial axes dilated by `rate`; rate 1 is the
// standard convolution.
Tensor conv2d_dilated(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& bias,
                      std::size_t rate, Padding pad);

// Dedicated non-dilated path (independent scalar loop nest). Exists so the
// rate-1 identity of conv2d_dilated can be checked bitwise against it.
Tensor conv2d_standard_reference(const Tensor& x, const Tensor& w, const Tensor& bias,
                                 Padding pad);

Tensor relu(Tape* tape, const Tensor& x);
Tensor sigmoid(Tape* tape, const Tensor& x);

// Elementwise sum; shapes must match after left-padding the shorter shape
// with 1s, where any dimension of size 1 broadcasts.
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);           // [M,K]x[K,N]
Tensor matmul_bt(Tape* tape, const Tensor& a, const Tensor& b);        // [M,K]x[N,K]^T -> [M,N]
Tensor affine(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b);  // xW + b

Tensor reshape(Tape* tape, const Tensor& x, Shape shape);
Tensor flatten(Tape* tape, const Tensor& x);              // -> [numel]
Tensor flatten_batch(Tape* tape, const Tensor& x);        // keep dim 0 -> [B, rest]
Tensor concat(Tape* tape, const std::vector<Tensor>& xs, std::size_t axis);

// table: [rows, m]; out: [ids.size(), m].
Tensor embedding_lookup(Tape* tape, const Tensor& table, const std::vector<std::size_t>& ids);

// Inverted dropout: zero with probability p, scale survivors by 1/(1-p);
// identity when !train or p == 0.
Tensor dropout(Tape* tape, const Tensor& x, double p, bool train, Rng& rng);

// x: [B, D] or [B, C, H, W] (per-channel statistics over everything else).
// Batch statistics in training, running statistics at evaluation time.
Tensor batchnorm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 Tensor running_mean, Tensor running_var, double momentum, double eps,
                 bool train);

Tensor sum(Tape* tape, const Tensor& x);  // -> scalar

// Mean over batch and entities of binary cross-entropy; probs clamped into
// [clamp_eps, 1 - clamp_eps] before the logs. labels is a constant.
Tensor bce_listwise(Tape* tape, const Tensor& probs, const Tensor& labels,
                    double clamp_eps = 1e-12);

double stable_sigmoid(double x);

}  // namespace acre::ops
