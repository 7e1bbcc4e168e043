#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "hahe/autograd.hpp"
#include "hahe/config.hpp"
#include "hahe/decoder.hpp"
#include "hahe/global_attention.hpp"
#include "hahe/hkg.hpp"
#include "hahe/local_attention.hpp"

namespace hahe {

struct ModelParams {
  ad::Var entity_embedding;     // (|E| + 2) x d, rows PAD and MASK last
  ad::Var relation_embedding;   // (|R| + 2) x d
  ad::Var hyperedge_embedding;  // |H| x d, null without global layers
  std::vector<GlobalLayerParams> global;
  std::vector<LocalLayerParams> local;
  DecoderParams decoder;

  // Every parameter tensor under a stable dotted name, in a fixed order.
  // Absent tensors (ablations) are skipped.
  std::vector<std::pair<std::string, ad::Var>> named() const;
};

ModelParams init_parameters(const TrainConfig& config, std::size_t num_entities,
                            std::size_t num_relations, std::size_t num_hyperedges, Rng& rng);

// Scalars that receive gradient updates. The PAD rows of both embedding
// tables are frozen and excluded.
std::size_t trainable_parameter_count(const ModelParams& params);

// Uniform(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
double xavier_bound(std::size_t fan_in, std::size_t fan_out);

class Model {
 public:
  // config.max_qualifiers must be set; it fixes the sequence length.
  Model(TrainConfig config, Vocabulary vocab, Hypergraph graph, ModelParams params);

  const TrainConfig& config() const noexcept { return config_; }
  const Vocabulary& vocab() const noexcept { return vocab_; }
  const Hypergraph& graph() const noexcept { return graph_; }
  ModelParams& params() noexcept { return params_; }
  const ModelParams& params() const noexcept { return params_; }
  std::size_t max_qualifiers() const noexcept { return *config_.max_qualifiers; }

  SequenceBatch batch(std::span<const MaskedSequence> items) const;

  // Entity rows after the global layers, |E| x d.
  ad::Var node_embeddings(ad::Tape& t, bool training, Rng& rng) const;
  // Contextual token embeddings, (B*L) x d.
  ad::Var encode(ad::Tape& t, const ad::Var& nodes, const SequenceBatch& batch, bool training,
                 Rng& rng) const;
  // Smoothed cross entropy averaged over the masked positions.
  ad::Var loss(ad::Tape& t, const SequenceBatch& batch, bool training, Rng& rng) const;

  // Inference-mode node embeddings, computed once and reused across queries.
  Tensor inference_nodes() const;
  // Log-probabilities for every masked position, in batch.masked order, over
  // the entity or relation vocabulary of that position.
  std::vector<std::vector<double>> log_probs(const SequenceBatch& batch, const Tensor& nodes) const;

  void mask_frozen_gradients();

 private:
  GlobalAttentionOptions global_options(bool training) const;
  LocalEncoderOptions local_options(bool training) const;

  TrainConfig config_;
  Vocabulary vocab_;
  Hypergraph graph_;
  ModelParams params_;
};

}  // namespace hahe
