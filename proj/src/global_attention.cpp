#include "hahe/global_attention.hpp"

#include "hahe/errors.hpp"

namespace hahe {

namespace {

void check(const ad::Var& nodes, const ad::Var& hyperedges, const Hypergraph& graph) {
  if (nodes->value.rows() != graph.num_nodes()) {
    throw ShapeError("global attention: node table has " + std::to_string(nodes->value.rows()) +
                     " rows for " + std::to_string(graph.num_nodes()) + " nodes");
  }
  if (hyperedges->value.rows() != graph.num_hyperedges()) {
    throw ShapeError("global attention: hyperedge table has " +
                     std::to_string(hyperedges->value.rows()) + " rows for " +
                     std::to_string(graph.num_hyperedges()) + " hyperedges");
  }
}

ad::IncidenceAttentionSpec spec_for(std::span<const std::size_t> offsets,
                                    std::span<const std::size_t> members,
                                    const GlobalAttentionOptions& opt) {
  ad::IncidenceAttentionSpec s;
  s.offsets = offsets;
  s.members = members;
  s.heads = opt.heads;
  s.slope = 0.2;
  s.dropout = opt.dropout;
  s.training = opt.training;
  return s;
}

}  // namespace

ad::Var n_to_h_attention(ad::Tape& t, const ad::Var& nodes, const ad::Var& hyperedges,
                         const Hypergraph& graph, const GlobalLayerParams& p,
                         const GlobalAttentionOptions& opt, Rng& rng) {
  check(nodes, hyperedges, graph);
  const ad::Var wx = ad::matmul(t, nodes, p.weight);
  const ad::Var we = ad::matmul(t, hyperedges, p.weight);
  const ad::Var pooled =
      ad::incidence_attention(t, we, wx, wx, p.attn_nh,
                              spec_for(graph.edge_offsets(), graph.edge_members(), opt), rng);
  return ad::activation(t, pooled, opt.activation);
}

ad::Var h_to_n_attention(ad::Tape& t, const ad::Var& nodes, const ad::Var& updated_hyperedges,
                         const Hypergraph& graph, const GlobalLayerParams& p,
                         const GlobalAttentionOptions& opt, Rng& rng) {
  check(nodes, updated_hyperedges, graph);
  const ad::Var wx = ad::matmul(t, nodes, p.weight);
  const ad::Var we = ad::matmul(t, updated_hyperedges, p.weight);
  const ad::Var pooled = ad::incidence_attention(
      t, wx, we, updated_hyperedges, p.attn_hn,
      spec_for(graph.node_offsets(), graph.node_edges(), opt), rng);
  const ad::Var out = ad::activation(t, pooled, opt.activation);
  return ad::select_rows(t, out, nodes, graph.isolated());
}

ad::Var global_forward(ad::Tape& t, const ad::Var& nodes, const ad::Var& hyperedges,
                       const Hypergraph& graph, std::span<const GlobalLayerParams> layers,
                       const GlobalAttentionOptions& opt, Rng& rng) {
  ad::Var x = nodes;
  ad::Var e = hyperedges;
  for (const GlobalLayerParams& layer : layers) {
    e = n_to_h_attention(t, x, e, graph, layer, opt, rng);
    x = h_to_n_attention(t, x, e, graph, layer, opt, rng);
  }
  return x;
}

}  // namespace hahe
