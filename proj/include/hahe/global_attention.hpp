#pragma once

// Hypergraph dual attention: members are pooled into their hyperedges
// (N-to-H), then hyperedges are pooled back into their member nodes (H-to-N).

#include <cstddef>
#include <span>

#include "hahe/autograd.hpp"
#include "hahe/hkg.hpp"
#include "hahe/numerics.hpp"

namespace hahe {

struct GlobalLayerParams {
  ad::Var weight;   // d x d, head h owns columns [h*d/H, (h+1)*d/H)
  ad::Var attn_nh;  // H x 2(d/H): hyperedge half, then member half
  ad::Var attn_hn;  // H x 2(d/H): node half, then hyperedge half
};

struct GlobalAttentionOptions {
  std::size_t heads = 4;
  Activation activation{ActivationKind::kElu};
  double dropout = 0.0;
  bool training = false;
};

// |H| x d. Hyperedge e attends over its members with
// score = leaky_relu(a . [W h_e || W h_v]) and outputs sigma(sum w W h_v).
ad::Var n_to_h_attention(ad::Tape& t, const ad::Var& nodes, const ad::Var& hyperedges,
                         const Hypergraph& graph, const GlobalLayerParams& p,
                         const GlobalAttentionOptions& opt, Rng& rng);

// |E| x d. Node v attends over its hyperedges with
// score = leaky_relu(a . [W h_v || W h~_e]) and outputs sigma(sum w h~_e).
// Nodes that belong to no hyperedge keep their input row.
ad::Var h_to_n_attention(ad::Tape& t, const ad::Var& nodes, const ad::Var& updated_hyperedges,
                         const Hypergraph& graph, const GlobalLayerParams& p,
                         const GlobalAttentionOptions& opt, Rng& rng);

// Runs every layer in order; the hyperedge state produced by one layer is
// the hyperedge input of the next. No layers returns `nodes` itself.
ad::Var global_forward(ad::Tape& t, const ad::Var& nodes, const ad::Var& hyperedges,
                       const Hypergraph& graph, std::span<const GlobalLayerParams> layers,
                       const GlobalAttentionOptions& opt, Rng& rng);

}  // namespace hahe
