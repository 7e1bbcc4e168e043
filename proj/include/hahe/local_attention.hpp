#pragma once

// Heterogeneous self-attention over fact sequences. Queries, keys and values
// are projected with a matrix chosen by the role of the token (node bias)
// and shifted by a vector chosen by the edge type of the token pair (edge
// bias). Each encoder layer wraps the attention in residual connections,
// layer normalization and a position-wise feed-forward block.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hahe/autograd.hpp"
#include "hahe/hkg.hpp"
#include "hahe/numerics.hpp"
#include "hahe/tensor.hpp"

namespace hahe {

struct LocalLayerParams {
  ad::Var wq, wk, wv;  // roles x d x d; one role when node bias is off
  ad::Var bq, bk, bv;  // 14 x d, or null when edge bias is off
  ad::Var ff1_w, ff1_b, ff2_w, ff2_b;
  ad::Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

struct MaskedPosition {
  std::size_t row = 0;
  std::size_t pos = 0;
  std::int64_t target = 0;
  bool entity = true;
};

// B padded sequences of length L. Arrays are row-major over (b, i) and
// (b, i, j). Masked positions carry the MASK id of their vocabulary.
struct SequenceBatch {
  std::size_t batch = 0, length = 0;
  std::vector<int> ids;
  std::vector<std::uint8_t> roles;         // Role values
  std::vector<std::uint8_t> shared_roles;  // 0 for real tokens, 1 for PAD
  std::vector<std::uint8_t> valid;
  std::vector<std::uint8_t> edge_types;    // EdgeType values
  std::vector<MaskedPosition> masked;

  // Where each token embedding comes from: source 0 is the node table
  // (real entities), 1 the entity table (PAD, MASK), 2 the relation table.
  std::vector<ad::RowRef> sources;
  // Flat (b*L + pos) indices and targets of the masked positions, split by
  // vocabulary, in the order they appear in `masked`.
  std::vector<std::int64_t> entity_rows, entity_targets;
  std::vector<std::int64_t> relation_rows, relation_targets;
};

struct MaskedSequence {
  HFact fact;
  std::vector<std::size_t> positions;
};

SequenceBatch make_batch(std::span<const MaskedSequence> items, std::size_t max_qualifiers,
                         const Vocabulary& vocab);

struct LocalEncoderOptions {
  std::size_t heads = 4;
  Activation activation{ActivationKind::kGelu};
  double dropout = 0.0;
  bool training = false;
};

// Literal single-sequence, single-head evaluation of the attention scores
// and outputs, used as the readable reference. Scores toward PAD keys are
// -inf. apply() returns L x (d / heads).
Tensor hetero_attention_scores(const Tensor& x, std::span<const Role> roles,
                               std::span<const EdgeType> edge_types,
                               const LocalLayerParams& p, std::size_t heads, std::size_t head);
Tensor hetero_attention_apply(const Tensor& gamma, const Tensor& x, std::span<const Role> roles,
                              std::span<const EdgeType> edge_types, const LocalLayerParams& p,
                              std::size_t heads, std::size_t head);

// Multi-head attention sublayer only: x is (B*L) x d.
ad::Var hetero_self_attention(ad::Tape& t, const ad::Var& x, const SequenceBatch& batch,
                              const LocalLayerParams& p, const LocalEncoderOptions& opt);

ad::Var encoder_layer(ad::Tape& t, const ad::Var& x, const SequenceBatch& batch,
                      const LocalLayerParams& p, const LocalEncoderOptions& opt, Rng& rng);

ad::Var encoder_forward(ad::Tape& t, const ad::Var& x, const SequenceBatch& batch,
                        std::span<const LocalLayerParams> layers,
                        const LocalEncoderOptions& opt, Rng& rng);

}  // namespace hahe
