#include "hahe/model.hpp"

#include <algorithm>
#include <cmath>

#include "hahe/errors.hpp"

namespace hahe {

std::vector<std::pair<std::string, ad::Var>> ModelParams::named() const {
  std::vector<std::pair<std::string, ad::Var>> out;
  auto put = [&out](std::string name, const ad::Var& v) {
    if (v) out.emplace_back(std::move(name), v);
  };
  put("entity_embedding", entity_embedding);
  put("relation_embedding", relation_embedding);
  put("hyperedge_embedding", hyperedge_embedding);
  for (std::size_t i = 0; i < global.size(); ++i) {
    const std::string p = "global." + std::to_string(i) + ".";
    put(p + "weight", global[i].weight);
    put(p + "attn_nh", global[i].attn_nh);
    put(p + "attn_hn", global[i].attn_hn);
  }
  for (std::size_t i = 0; i < local.size(); ++i) {
    const std::string p = "local." + std::to_string(i) + ".";
    const LocalLayerParams& l = local[i];
    put(p + "wq", l.wq);
    put(p + "wk", l.wk);
    put(p + "wv", l.wv);
    put(p + "bq", l.bq);
    put(p + "bk", l.bk);
    put(p + "bv", l.bv);
    put(p + "ff1_w", l.ff1_w);
    put(p + "ff1_b", l.ff1_b);
    put(p + "ff2_w", l.ff2_w);
    put(p + "ff2_b", l.ff2_b);
    put(p + "ln1_gain", l.ln1_gain);
    put(p + "ln1_bias", l.ln1_bias);
    put(p + "ln2_gain", l.ln2_gain);
    put(p + "ln2_bias", l.ln2_bias);
  }
  const DecoderParams& d = decoder;
  put("decoder.w1", d.w1);
  put("decoder.b1", d.b1);
  put("decoder.ln_gain", d.ln_gain);
  put("decoder.ln_bias", d.ln_bias);
  put("decoder.w2", d.w2);
  put("decoder.b2", d.b2);
  put("decoder.entity_bias", d.entity_bias);
  put("decoder.relation_bias", d.relation_bias);
  return out;
}

double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

namespace {

ad::Var xavier(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double b = xavier_bound(fan_in, fan_out);
  std::uniform_real_distribution<double> u(-b, b);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return ad::parameter(std::move(t));
}

ad::Var zeros(Shape shape) { return ad::parameter(Tensor(std::move(shape))); }
ad::Var ones(Shape shape) { return ad::parameter(Tensor(std::move(shape), 1.0)); }

ad::Var embedding(std::size_t real, std::size_t d, Rng& rng) {
  std::normal_distribution<double> n(0.0, 0.02);
  Tensor t({real + 2, d});
  for (double& v : t.data()) v = n(rng);
  for (double& v : t.row(real)) v = 0.0;  // PAD
  return ad::parameter(std::move(t));
}

}  // namespace

ModelParams init_parameters(const TrainConfig& c, std::size_t num_entities,
                            std::size_t num_relations, std::size_t num_hyperedges, Rng& rng) {
  c.validate();
  const std::size_t d = c.embedding_dim;
  ModelParams p;
  p.entity_embedding = embedding(num_entities, d, rng);
  p.relation_embedding = embedding(num_relations, d, rng);
  const std::size_t global_layers = c.effective_global_layers();
  if (global_layers > 0) {
    p.hyperedge_embedding = xavier({num_hyperedges, d}, d, num_hyperedges, rng);
    const std::size_t dh = d / c.global_heads;
    for (std::size_t i = 0; i < global_layers; ++i) {
      GlobalLayerParams g;
      g.weight = xavier({d, d}, d, d, rng);
      g.attn_nh = xavier({c.global_heads, 2 * dh}, 2 * dh, 1, rng);
      g.attn_hn = xavier({c.global_heads, 2 * dh}, 2 * dh, 1, rng);
      p.global.push_back(std::move(g));
    }
  }
  const std::size_t roles = c.no_node_bias ? 1 : kNumRoles;
  for (std::size_t i = 0; i < c.local_layers; ++i) {
    LocalLayerParams l;
    l.wq = xavier({roles, d, d}, d, d, rng);
    l.wk = xavier({roles, d, d}, d, d, rng);
    l.wv = xavier({roles, d, d}, d, d, rng);
    if (!c.no_edge_bias) {
      l.bq = zeros({kNumEdgeTypes, d});
      l.bk = zeros({kNumEdgeTypes, d});
      l.bv = zeros({kNumEdgeTypes, d});
    }
    l.ff1_w = xavier({d, c.hidden_size}, d, c.hidden_size, rng);
    l.ff1_b = zeros({c.hidden_size});
    l.ff2_w = xavier({c.hidden_size, d}, c.hidden_size, d, rng);
    l.ff2_b = zeros({d});
    l.ln1_gain = ones({d});
    l.ln1_bias = zeros({d});
    l.ln2_gain = ones({d});
    l.ln2_bias = zeros({d});
    p.local.push_back(std::move(l));
  }
  DecoderParams& dec = p.decoder;
  dec.w1 = xavier({d, d}, d, d, rng);
  dec.b1 = zeros({d});
  dec.ln_gain = ones({d});
  dec.ln_bias = zeros({d});
  dec.w2 = xavier({d, d}, d, d, rng);
  dec.b2 = zeros({d});
  dec.entity_bias = zeros({num_entities});
  dec.relation_bias = zeros({num_relations});
  return p;
}

std::size_t trainable_parameter_count(const ModelParams& params) {
  std::size_t total = 0;
  for (const auto& [name, v] : params.named()) total += v->value.size();
  total -= params.entity_embedding->value.cols();
  total -= params.relation_embedding->value.cols();
  return total;
}

Model::Model(TrainConfig config, Vocabulary vocab, Hypergraph graph, ModelParams params)
    : config_(std::move(config)),
      vocab_(std::move(vocab)),
      graph_(std::move(graph)),
      params_(std::move(params)) {
  config_.validate();
  if (!config_.max_qualifiers) throw ConfigError("model needs a resolved max_qualifiers");
  const std::size_t d = config_.embedding_dim;
  if (params_.entity_embedding->value.rows() != vocab_.num_entities() + 2 ||
      params_.relation_embedding->value.rows() != vocab_.num_relations() + 2 ||
      params_.entity_embedding->value.cols() != d) {
    throw ShapeError("embedding tables do not match the vocabulary");
  }
  if (graph_.num_nodes() != vocab_.num_entities()) {
    throw ShapeError("hypergraph node count differs from the entity vocabulary");
  }
  if (params_.global.size() != config_.effective_global_layers() ||
      params_.local.size() != config_.local_layers) {
    throw ShapeError("parameter layer counts differ from the configuration");
  }
  if (!params_.global.empty() &&
      (!params_.hyperedge_embedding ||
       params_.hyperedge_embedding->value.rows() != graph_.num_hyperedges())) {
    throw ShapeError("hyperedge table does not match the hypergraph");
  }
}

SequenceBatch Model::batch(std::span<const MaskedSequence> items) const {
  return make_batch(items, max_qualifiers(), vocab_);
}

GlobalAttentionOptions Model::global_options(bool training) const {
  return {config_.global_heads, config_.global_activation, config_.global_dropout, training};
}

LocalEncoderOptions Model::local_options(bool training) const {
  return {config_.local_heads, config_.decoder_activation, config_.local_dropout, training};
}

ad::Var Model::node_embeddings(ad::Tape& t, bool training, Rng& rng) const {
  const ad::Var nodes = ad::slice_rows(t, params_.entity_embedding, 0, vocab_.num_entities());
  if (params_.global.empty()) return nodes;
  return global_forward(t, nodes, params_.hyperedge_embedding, graph_, params_.global,
                        global_options(training), rng);
}

ad::Var Model::encode(ad::Tape& t, const ad::Var& nodes, const SequenceBatch& batch,
                      bool training, Rng& rng) const {
  const ad::Var x = ad::gather_rows_from(
      t, {nodes, params_.entity_embedding, params_.relation_embedding}, batch.sources);
  return encoder_forward(t, x, batch, params_.local, local_options(training), rng);
}

ad::Var Model::loss(ad::Tape& t, const SequenceBatch& batch, bool training, Rng& rng) const {
  if (batch.masked.empty()) throw ShapeError("loss needs at least one masked position");
  const ad::Var nodes = node_embeddings(t, training, rng);
  const ad::Var h = encode(t, nodes, batch, training, rng);
  const DecoderParams& dec = params_.decoder;
  const Activation& act = config_.decoder_activation;
  ad::Var total;
  if (!batch.entity_rows.empty()) {
    const ad::Var x = ad::gather_rows(t, h, batch.entity_rows);
    const ad::Var logits = decoder_logits(t, x, dec, act, params_.entity_embedding,
                                          vocab_.num_entities(), dec.entity_bias);
    total = ad::soft_label_cross_entropy(t, logits, batch.entity_targets,
                                         config_.soft_label_entity);
  }
  if (!batch.relation_rows.empty()) {
    const ad::Var x = ad::gather_rows(t, h, batch.relation_rows);
    const ad::Var logits = decoder_logits(t, x, dec, act, params_.relation_embedding,
                                          vocab_.num_relations(), dec.relation_bias);
    const ad::Var l = ad::soft_label_cross_entropy(t, logits, batch.relation_targets,
                                                   config_.soft_label_relation);
    total = total ? ad::add(t, total, l) : l;
  }
  return ad::scale(t, total, 1.0 / static_cast<double>(batch.masked.size()));
}

Tensor Model::inference_nodes() const {
  ad::Tape t(false);
  Rng unused(0);
  return node_embeddings(t, false, unused)->value;
}

std::vector<std::vector<double>> Model::log_probs(const SequenceBatch& batch,
                                                  const Tensor& nodes) const {
  ad::Tape t(false);
  Rng unused(0);
  const ad::Var h = encode(t, ad::constant(nodes), batch, false, unused);
  const DecoderParams& dec = params_.decoder;
  const Activation& act = config_.decoder_activation;
  auto run = [&](const std::vector<std::int64_t>& rows, const ad::Var& table, std::size_t n,
                 const ad::Var& bias) {
    std::vector<std::vector<double>> out;
    if (rows.empty()) return out;
    const ad::Var x = ad::gather_rows(t, h, rows);
    const Tensor z = decoder_logits(t, x, dec, act, table, n, bias)->value;
    for (std::size_t r = 0; r < z.rows(); ++r) {
      const auto row = z.row(r);
      const double peak = *std::max_element(row.begin(), row.end());
      double s = 0.0;
      for (double v : row) s += std::exp(v - peak);
      const double lse = peak + std::log(s);
      std::vector<double> lp(n);
      for (std::size_t c = 0; c < n; ++c) lp[c] = row[c] - lse;
      out.push_back(std::move(lp));
    }
    return out;
  };
  auto ent = run(batch.entity_rows, params_.entity_embedding, vocab_.num_entities(),
                 dec.entity_bias);
  auto rel = run(batch.relation_rows, params_.relation_embedding, vocab_.num_relations(),
                 dec.relation_bias);
  std::vector<std::vector<double>> out;
  out.reserve(batch.masked.size());
  std::size_t ei = 0, ri = 0;
  for (const MaskedPosition& m : batch.masked) {
    out.push_back(std::move(m.entity ? ent[ei++] : rel[ri++]));
  }
  return out;
}

void Model::mask_frozen_gradients() {
  for (const ad::Var* table : {&params_.entity_embedding, &params_.relation_embedding}) {
    Tensor& g = (*table)->grad;
    if (g.empty()) continue;
    const std::size_t pad = g.rows() - 2;
    for (double& v : g.row(pad)) v = 0.0;
  }
}

}  // namespace hahe
