#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "phgcn/rng.hpp"
#include "phgcn/tape.hpp"
#include "phgcn/tensor.hpp"

namespace phgcn::ops {

// Dense ops. All take the tape as first argument; pass nullptr for
// inference-only evaluation (nothing is recorded, outputs carry no grad).

// [m×k] · [k×n] -> [m×n]
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);

// [m×n] -> [n×m]
Tensor transpose(Tape* tape, const Tensor& a);

// Elementwise x if x > 0 else exp(x) - 1.
Tensor elu(Tape* tape, const Tensor& x);

// Row-wise softmax with optional participation mask (1 = active). Masked
// entries are exactly 0; rows are renormalized over active entries only.
// A fully masked row raises.
Tensor softmax_rows(Tape* tape, const Tensor& logits,
                    const std::vector<uint8_t>* mask = nullptr);

// Mean cross-entropy over masked rows from raw logits.
Tensor nll_loss(Tape* tape, const Tensor& logits,
                const std::vector<int32_t>& labels,
                const std::vector<uint8_t>& mask);

// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
// Identity when training is false or p == 0.
Tensor dropout(Tape* tape, const Tensor& x, double p, bool training, Rng& rng);

// Dropout with a caller-provided keep mask (entries 0 or 1); used by the
// gradient checker so the mask stays fixed across function evaluations.
Tensor dropout_masked(Tape* tape, const Tensor& x, double p,
                      const std::vector<uint8_t>& keep);

// Column-wise concatenation of tensors with equal row counts.
Tensor concat_cols(Tape* tape, std::span<const Tensor> parts);
Tensor concat_cols(Tape* tape, const Tensor& a, const Tensor& b);

// Elementwise sum of two same-shape tensors.
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);

// Elementwise product of two same-shape tensors.
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);

// Multiply by a constant.
Tensor scale(Tape* tape, const Tensor& a, double c);

// Elementwise square.
Tensor square(Tape* tape, const Tensor& x);

// Sum of all entries -> scalar.
Tensor sum(Tape* tape, const Tensor& x);

// Row index of the max entry per row (ties to the lowest index).
std::vector<int32_t> argmax_rows(const Tensor& x);

// Fraction of masked rows whose argmax equals the label.
double masked_accuracy(const Tensor& logits, const std::vector<int32_t>& labels,
                       const std::vector<uint8_t>& mask);

}  // namespace phgcn::ops
