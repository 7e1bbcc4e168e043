#pragma once

// Scores contextual embeddings against the (shared) input embedding table
// and computes the smoothed-label cross entropy.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hahe/autograd.hpp"
#include "hahe/numerics.hpp"
#include "hahe/tensor.hpp"

namespace hahe {

struct DecoderParams {
  ad::Var w1, b1;            // d x d, d
  ad::Var ln_gain, ln_bias;  // d
  ad::Var w2, b2;            // d x d, d
  ad::Var entity_bias;       // |E|
  ad::Var relation_bias;     // |R|
};

// affine -> activation -> layer_norm -> affine, row-wise.
ad::Var decoder_mlp(ad::Tape& t, const ad::Var& x, const DecoderParams& p, const Activation& act);

// MLP(x) . table[0:n]^T + bias. `table` is the embedding table itself, not a
// copy, so the decoder always sees the current input embeddings.
ad::Var decoder_logits(ad::Tape& t, const ad::Var& x, const DecoderParams& p,
                       const Activation& act, const ad::Var& table, std::size_t n,
                       const ad::Var& bias);

// Probability vector over the first n rows of `table` for one position.
std::vector<double> decode_position(std::span<const double> x, const DecoderParams& p,
                                    const Activation& act, const ad::Var& table, std::size_t n,
                                    const ad::Var& bias);

// 1 - eps on the target, eps / (n - 1) elsewhere.
std::vector<double> soft_labels(std::size_t target, std::size_t n, double eps);

// -sum y log p with log clamped at 1e-12.
double cross_entropy(std::span<const double> p, std::span<const double> y);

}  // namespace hahe
