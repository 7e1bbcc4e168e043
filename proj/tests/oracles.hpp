#pragma once

// Reference computations written as plain loops, shared by the unit tests
// and the acceptance checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "hahe/evaluation.hpp"
#include "hahe/global_attention.hpp"
#include "hahe/hkg.hpp"
#include "hahe/local_attention.hpp"
#include "hahe/numerics.hpp"
#include "test_util.hpp"

namespace hahe::testing {

inline Tensor project(const Tensor& x, const Tensor& w) {
  Tensor out({x.rows(), w.cols()});
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c)
      for (std::size_t k = 0; k < x.cols(); ++k) out.at(r, c) += x.at(r, k) * w.at(k, c);
  return out;
}

inline double leaky(double u) { return u > 0.0 ? u : 0.2 * u; }

// For each target t, softmax over sources s with incident(t, s) of
// leaky(a_t . T[t] + a_s . S[s]) per head, then the weighted sum of V[s].
// Targets without sources are left at zero.
inline Tensor dense_attention(const Tensor& tgt, const Tensor& src, const Tensor& val,
                              const Tensor& attn, std::size_t heads,
                              const std::function<bool(std::size_t, std::size_t)>& incident,
                              const Activation& act) {
  const std::size_t d = tgt.cols(), dh = d / heads;
  Tensor out({tgt.rows(), d});
  for (std::size_t t = 0; t < tgt.rows(); ++t) {
    std::vector<std::uint8_t> mask(src.rows());
    for (std::size_t s = 0; s < src.rows(); ++s) mask[s] = incident(t, s);
    if (std::count(mask.begin(), mask.end(), 1) == 0) continue;
    for (std::size_t h = 0; h < heads; ++h) {
      std::vector<double> scores(src.rows(), 0.0);
      for (std::size_t s = 0; s < src.rows(); ++s) {
        double u = 0.0;
        for (std::size_t c = 0; c < dh; ++c) {
          u += attn.at(h, c) * tgt.at(t, h * dh + c) + attn.at(h, dh + c) * src.at(s, h * dh + c);
        }
        scores[s] = leaky(u);
      }
      const auto w = masked_softmax(scores, mask);
      for (std::size_t c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (std::size_t s = 0; s < src.rows(); ++s) acc += w[s] * val.at(s, h * dh + c);
        out.at(t, h * dh + c) = activate(act, acc);
      }
    }
  }
  return out;
}

// One dual-attention layer over the dense incidence matrix: hyperedges pool
// their members, then nodes pool their hyperedges. Isolated nodes keep
// their input row. Returns {nodes, hyperedges}.
inline std::pair<Tensor, Tensor> dense_dual_attention(const Hypergraph& g, const Tensor& nodes,
                                                      const Tensor& edges,
                                                      const GlobalLayerParams& p,
                                                      std::size_t heads, const Activation& act) {
  const Tensor& w = p.weight->value;
  const Tensor wx = project(nodes, w);
  const Tensor he = dense_attention(project(edges, w), wx, wx, p.attn_nh->value, heads,
                                    [&](std::size_t e, std::size_t v) { return g.incidence(v, e); },
                                    act);
  Tensor hv = dense_attention(wx, project(he, w), he, p.attn_hn->value, heads,
                              [&](std::size_t v, std::size_t e) { return g.incidence(v, e); }, act);
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    if (g.degree(v) == 0) std::ranges::copy(nodes.row(v), hv.row(v).begin());
  }
  return {hv, he};
}

// Random hyperedges of 1..4 distinct members over nodes 0..n-2; node n-1
// stays isolated.
inline std::vector<std::vector<std::size_t>> random_edges(std::size_t n, std::size_t m, Rng& rng) {
  std::uniform_int_distribution<std::size_t> size(1, 4), node(0, n - 2);
  std::vector<std::vector<std::size_t>> edges(m);
  for (auto& e : edges) {
    const std::size_t k = std::min<std::size_t>(size(rng), n - 1);
    while (e.size() < k) {
      const std::size_t v = node(rng);
      if (std::find(e.begin(), e.end(), v) == e.end()) e.push_back(v);
    }
  }
  return edges;
}

inline GlobalLayerParams random_global_layer(std::size_t d, std::size_t heads, Rng& rng) {
  const std::size_t dh = d / heads;
  return {ad::parameter(random_tensor({d, d}, rng, 0.5)),
          ad::parameter(random_tensor({heads, 2 * dh}, rng)),
          ad::parameter(random_tensor({heads, 2 * dh}, rng))};
}

inline LocalLayerParams random_local_layer(std::size_t d, std::size_t roles, std::size_t hidden,
                                           bool edge_bias, Rng& rng) {
  LocalLayerParams p;
  p.wq = ad::parameter(random_tensor({roles, d, d}, rng, 0.4));
  p.wk = ad::parameter(random_tensor({roles, d, d}, rng, 0.4));
  p.wv = ad::parameter(random_tensor({roles, d, d}, rng, 0.4));
  if (edge_bias) {
    p.bq = ad::parameter(random_tensor({kNumEdgeTypes, d}, rng, 0.3));
    p.bk = ad::parameter(random_tensor({kNumEdgeTypes, d}, rng, 0.3));
    p.bv = ad::parameter(random_tensor({kNumEdgeTypes, d}, rng, 0.3));
  }
  p.ff1_w = ad::parameter(random_tensor({d, hidden}, rng, 0.4));
  p.ff1_b = ad::parameter(random_tensor({hidden}, rng, 0.1));
  p.ff2_w = ad::parameter(random_tensor({hidden, d}, rng, 0.4));
  p.ff2_b = ad::parameter(random_tensor({d}, rng, 0.1));
  p.ln1_gain = ad::parameter(random_tensor({d}, rng, 0.1));
  p.ln2_gain = ad::parameter(random_tensor({d}, rng, 0.1));
  for (double& g : p.ln1_gain->value.data()) g += 1.0;
  for (double& g : p.ln2_gain->value.data()) g += 1.0;
  p.ln1_bias = ad::parameter(random_tensor({d}, rng, 0.1));
  p.ln2_bias = ad::parameter(random_tensor({d}, rng, 0.1));
  return p;
}

inline std::vector<Role> roles_of(const SequenceBatch& b, std::size_t row) {
  std::vector<Role> out(b.length);
  for (std::size_t i = 0; i < b.length; ++i) out[i] = static_cast<Role>(b.roles[row * b.length + i]);
  return out;
}

inline std::vector<EdgeType> types_of(const SequenceBatch& b, std::size_t row) {
  const std::size_t n = b.length * b.length;
  std::vector<EdgeType> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<EdgeType>(b.edge_types[row * n + i]);
  return out;
}

inline Tensor rows_of(const Tensor& x, std::size_t begin, std::size_t count) {
  Tensor out({count, x.cols()});
  for (std::size_t r = 0; r < count; ++r) std::ranges::copy(x.row(begin + r), out.row(r).begin());
  return out;
}

// Heterogeneous attention for one sequence, one query and key at a time:
//   q_i = x_i Wq[role i], k_j = x_j Wk[role j], v_j = x_j Wv[role j]
//   g_ij = (q_i + bq[t]) . (k_j + bk[t]) / sqrt(dh), t = type(i, j)
//   out_i = sum_j softmax_j(g_ij) (v_j + bv[t])
// With a single projection every real role shares it. PAD keys are skipped.
// Rows of PAD queries are left at zero.
inline Tensor literal_hetero_attention(const Tensor& x, const std::vector<Role>& roles,
                                       const std::vector<EdgeType>& types,
                                       const LocalLayerParams& p, std::size_t heads) {
  const std::size_t len = x.rows(), d = x.cols(), dh = d / heads;
  const std::size_t num_w = p.wq->value.dim(0);
  auto proj = [&](const ad::Var& w, std::size_t i, std::size_t col) {
    if (roles[i] == Role::kPad) return 0.0;
    const std::size_t r = num_w == 1 ? 0 : static_cast<std::size_t>(roles[i]);
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += x.at(i, k) * w->value[(r * d + k) * d + col];
    return s;
  };
  auto bias = [&](const ad::Var& b, EdgeType t, std::size_t col) {
    const auto ti = static_cast<std::size_t>(t);
    return b && ti < kNumEdgeTypes ? b->value.at(ti, col) : 0.0;
  };
  Tensor out({len, d});
  for (std::size_t i = 0; i < len; ++i) {
    if (roles[i] == Role::kPad) continue;
    for (std::size_t h = 0; h < heads; ++h) {
      std::vector<double> g(len, 0.0);
      std::vector<std::uint8_t> valid(len, 0);
      for (std::size_t j = 0; j < len; ++j) {
        if (roles[j] == Role::kPad) continue;
        valid[j] = 1;
        const EdgeType t = types[i * len + j];
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
          g[j] += (proj(p.wq, i, c) + bias(p.bq, t, c)) * (proj(p.wk, j, c) + bias(p.bk, t, c));
        }
        g[j] /= std::sqrt(static_cast<double>(dh));
      }
      const auto w = masked_softmax(g, valid);
      for (std::size_t j = 0; j < len; ++j) {
        if (!valid[j]) continue;
        const EdgeType t = types[i * len + j];
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
          out.at(i, c) += w[j] * (proj(p.wv, j, c) + bias(p.bv, t, c));
        }
      }
    }
  }
  return out;
}

// Standard transformer encoder layer with shared projections and no edge
// terms: attention, residual, layer norm, GELU feed-forward, residual,
// layer norm. Keys with valid[j] == 0 are masked out.
inline Tensor vanilla_layer(const Tensor& x, const LocalLayerParams& p, std::size_t heads,
                            const std::vector<std::uint8_t>& valid) {
  const std::size_t len = x.rows(), d = x.cols(), dh = d / heads;
  auto ln = [](const Tensor& a, const Tensor& gain, const Tensor& bias) {
    return layer_norm(a, gain.data(), bias.data());
  };
  const Tensor q = project(x, p.wq->value.reshaped({d, d}));
  const Tensor k = project(x, p.wk->value.reshaped({d, d}));
  const Tensor v = project(x, p.wv->value.reshaped({d, d}));
  Tensor att({len, d});
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < len; ++i) {
      std::vector<double> s(len);
      for (std::size_t j = 0; j < len; ++j) {
        for (std::size_t c = 0; c < dh; ++c) s[j] += q.at(i, h * dh + c) * k.at(j, h * dh + c);
        s[j] /= std::sqrt(static_cast<double>(dh));
      }
      const auto w = masked_softmax(s, valid);
      for (std::size_t j = 0; j < len; ++j)
        for (std::size_t c = 0; c < dh; ++c) att.at(i, h * dh + c) += w[j] * v.at(j, h * dh + c);
    }
  }
  Tensor h1({len, d});
  for (std::size_t i = 0; i < h1.size(); ++i) h1[i] = x[i] + att[i];
  h1 = ln(h1, p.ln1_gain->value, p.ln1_bias->value);
  Tensor f = project(h1, p.ff1_w->value);
  for (std::size_t r = 0; r < f.rows(); ++r)
    for (std::size_t c = 0; c < f.cols(); ++c)
      f.at(r, c) = activate(Activation{ActivationKind::kGelu}, f.at(r, c) + p.ff1_b->value[c]);
  const Tensor f2 = project(f, p.ff2_w->value);
  Tensor h2({len, d});
  for (std::size_t r = 0; r < len; ++r)
    for (std::size_t c = 0; c < d; ++c) h2.at(r, c) = h1.at(r, c) + f2.at(r, c) + p.ff2_b->value[c];
  return ln(h2, p.ln2_gain->value, p.ln2_bias->value);
}

// Every tuple of the full product, sorted by score desc then ids asc.
inline std::vector<TupleCandidate> exhaustive(const std::vector<std::vector<double>>& m) {
  std::vector<TupleCandidate> all{{{}, 0.0}};
  for (const auto& lp : m) {
    std::vector<TupleCandidate> next;
    for (const auto& t : all) {
      for (std::size_t c = 0; c < lp.size(); ++c) {
        TupleCandidate n = t;
        n.ids.push_back(static_cast<int>(c));
        n.log_score += lp[c];
        next.push_back(std::move(n));
      }
    }
    all = std::move(next);
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.log_score > b.log_score || (a.log_score == b.log_score && a.ids < b.ids);
  });
  return all;
}

}  // namespace hahe::testing
