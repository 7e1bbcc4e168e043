#include "hahe/local_attention.hpp"

#include <cmath>
#include <limits>

#include "hahe/errors.hpp"

namespace hahe {

SequenceBatch make_batch(std::span<const MaskedSequence> items, std::size_t max_qualifiers,
                         const Vocabulary& vocab) {
  SequenceBatch b;
  b.batch = items.size();
  b.length = sequence_length(max_qualifiers);
  const std::size_t len = b.length;
  b.ids.resize(b.batch * len);
  b.roles.resize(b.batch * len);
  b.shared_roles.resize(b.batch * len);
  b.valid.resize(b.batch * len);
  b.edge_types.resize(b.batch * len * len);
  for (std::size_t r = 0; r < items.size(); ++r) {
    const Sequence seq = fact_to_sequence(items[r].fact, max_qualifiers, vocab);
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t at = r * len + i;
      b.ids[at] = seq.ids[i];
      b.roles[at] = static_cast<std::uint8_t>(seq.roles[i]);
      b.valid[at] = seq.roles[i] != Role::kPad;
      b.shared_roles[at] = b.valid[at] ? 0 : 1;
      for (std::size_t j = 0; j < len; ++j) {
        b.edge_types[at * len + j] = static_cast<std::uint8_t>(edge_type(i, j, seq.num_real));
      }
    }
    for (std::size_t pos : items[r].positions) {
      if (pos >= seq.num_real) {
        throw IndexError("masked position " + std::to_string(pos) + " outside a fact of " +
                         std::to_string(seq.num_real) + " tokens");
      }
      const std::size_t at = r * len + pos;
      const bool entity = is_entity_position(pos);
      b.masked.push_back({r, pos, seq.ids[pos], entity});
      b.ids[at] = entity ? vocab.entity_mask() : vocab.relation_mask();
      (entity ? b.entity_rows : b.relation_rows).push_back(static_cast<std::int64_t>(at));
      (entity ? b.entity_targets : b.relation_targets).push_back(seq.ids[pos]);
    }
  }
  b.sources.resize(b.ids.size());
  const int real_entities = static_cast<int>(vocab.num_entities());
  for (std::size_t at = 0; at < b.ids.size(); ++at) {
    const auto id = static_cast<std::uint32_t>(b.ids[at]);
    if (!is_entity_position(at % len)) {
      b.sources[at] = {2, id};
    } else {
      b.sources[at] = {b.ids[at] < real_entities ? 0u : 1u, id};
    }
  }
  return b;
}

namespace {

// Row `role` of a roles x d x d projection, restricted to the columns of one
// head, applied to x_i.
void project(const Tensor& w, std::span<const double> x, Role role, std::size_t col,
             std::size_t width, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  if (role == Role::kPad) return;
  const std::size_t d = w.dim(1);
  const std::size_t r = w.dim(0) == 1 ? 0 : static_cast<std::size_t>(role);
  const double* base = w.ptr() + r * d * d;
  for (std::size_t p = 0; p < d; ++p) {
    for (std::size_t c = 0; c < width; ++c) out[c] += x[p] * base[p * d + col + c];
  }
}

double edge_bias(const ad::Var& table, EdgeType type, std::size_t index) {
  if (!table || type == EdgeType::kPad) return 0.0;
  return table->value.at(static_cast<std::size_t>(type), index);
}

void check_single(const Tensor& x, std::span<const Role> roles,
                  std::span<const EdgeType> types, std::size_t heads, std::size_t head) {
  const std::size_t len = x.rows();
  if (roles.size() != len || types.size() != len * len) {
    throw ShapeError("hetero attention: roles/edge types do not match the sequence");
  }
  if (heads == 0 || x.cols() % heads != 0 || head >= heads) {
    throw ShapeError("hetero attention: bad head selection");
  }
}

}  // namespace

Tensor hetero_attention_scores(const Tensor& x, std::span<const Role> roles,
                               std::span<const EdgeType> edge_types,
                               const LocalLayerParams& p, std::size_t heads, std::size_t head) {
  check_single(x, roles, edge_types, heads, head);
  const std::size_t len = x.rows(), dh = x.cols() / heads, col = head * dh;
  Tensor q({len, dh}), k({len, dh});
  for (std::size_t i = 0; i < len; ++i) {
    project(p.wq->value, x.row(i), roles[i], col, dh, q.row(i));
    project(p.wk->value, x.row(i), roles[i], col, dh, k.row(i));
  }
  Tensor gamma({len, len});
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t j = 0; j < len; ++j) {
      if (roles[j] == Role::kPad) {
        gamma.at(i, j) = -std::numeric_limits<double>::infinity();
        continue;
      }
      const EdgeType type = edge_types[i * len + j];
      double s = 0.0;
      for (std::size_t c = 0; c < dh; ++c) {
        s += (q.at(i, c) + edge_bias(p.bq, type, col + c)) *
             (k.at(j, c) + edge_bias(p.bk, type, col + c));
      }
      gamma.at(i, j) = s * inv;
    }
  }
  return gamma;
}

Tensor hetero_attention_apply(const Tensor& gamma, const Tensor& x, std::span<const Role> roles,
                              std::span<const EdgeType> edge_types, const LocalLayerParams& p,
                              std::size_t heads, std::size_t head) {
  check_single(x, roles, edge_types, heads, head);
  const std::size_t len = x.rows(), dh = x.cols() / heads, col = head * dh;
  if (gamma.rows() != len || gamma.cols() != len) throw ShapeError("gamma must be L x L");
  Tensor v({len, dh});
  for (std::size_t j = 0; j < len; ++j) project(p.wv->value, x.row(j), roles[j], col, dh, v.row(j));
  std::vector<std::uint8_t> valid(len);
  for (std::size_t j = 0; j < len; ++j) valid[j] = roles[j] != Role::kPad;
  Tensor out({len, dh});
  for (std::size_t i = 0; i < len; ++i) {
    const auto w = masked_softmax(gamma.row(i), valid);
    for (std::size_t j = 0; j < len; ++j) {
      if (!valid[j]) continue;
      const EdgeType type = edge_types[i * len + j];
      for (std::size_t c = 0; c < dh; ++c) {
        out.at(i, c) += w[j] * (v.at(j, c) + edge_bias(p.bv, type, col + c));
      }
    }
  }
  return out;
}

ad::Var hetero_self_attention(ad::Tape& t, const ad::Var& x, const SequenceBatch& batch,
                              const LocalLayerParams& p, const LocalEncoderOptions& opt) {
  const bool shared = p.wq->value.dim(0) == 1;
  const std::span<const std::uint8_t> roles = shared ? batch.shared_roles : batch.roles;
  const ad::Var q = ad::role_linear(t, x, p.wq, roles);
  const ad::Var k = ad::role_linear(t, x, p.wk, roles);
  const ad::Var v = ad::role_linear(t, x, p.wv, roles);
  ad::HeteroAttentionSpec spec;
  spec.edge_types = batch.edge_types;
  spec.valid = batch.valid;
  spec.batch = batch.batch;
  spec.length = batch.length;
  spec.heads = opt.heads;
  return ad::hetero_attention(t, q, k, v, p.bq, p.bk, p.bv, spec);
}

ad::Var encoder_layer(ad::Tape& t, const ad::Var& x, const SequenceBatch& batch,
                      const LocalLayerParams& p, const LocalEncoderOptions& opt, Rng& rng) {
  ad::Var a = hetero_self_attention(t, x, batch, p, opt);
  a = ad::dropout(t, a, opt.dropout, opt.training, rng);
  const ad::Var h = ad::layer_norm(t, ad::add(t, x, a), p.ln1_gain, p.ln1_bias);
  ad::Var f = ad::add_row(t, ad::matmul(t, h, p.ff1_w), p.ff1_b);
  f = ad::activation(t, f, opt.activation);
  f = ad::add_row(t, ad::matmul(t, f, p.ff2_w), p.ff2_b);
  f = ad::dropout(t, f, opt.dropout, opt.training, rng);
  return ad::layer_norm(t, ad::add(t, h, f), p.ln2_gain, p.ln2_bias);
}

ad::Var encoder_forward(ad::Tape& t, const ad::Var& x, const SequenceBatch& batch,
                        std::span<const LocalLayerParams> layers,
                        const LocalEncoderOptions& opt, Rng& rng) {
  if (x->value.rows() != batch.batch * batch.length) {
    throw ShapeError("encoder input must have one row per sequence token");
  }
  ad::Var h = x;
  for (const LocalLayerParams& layer : layers) h = encoder_layer(t, h, batch, layer, opt, rng);
  return h;
}

}  // namespace hahe
