#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "hahe/config.hpp"
#include "hahe/hkg.hpp"
#include "hahe/model.hpp"
#include "hahe/numerics.hpp"

namespace hahe {

struct MaskedSample {
  std::size_t fact = 0;
  std::size_t position = 0;
  Role role = Role::kS;
  std::int64_t target = 0;
};

// One sample per token of the fact: 3 + 2 * (arity - 2) samples.
std::vector<MaskedSample> generate_masked_samples(const HFact& fact, std::size_t fact_id);
std::vector<MaskedSample> generate_masked_samples(std::span<const HFact> facts);

struct EpochStats {
  double mean_loss = 0.0;
  double samples_per_second = 0.0;
  std::size_t batches = 0;
};

class Trainer {
 public:
  Trainer(Model& model, std::vector<HFact> facts);

  // Shuffles the samples, then per batch: forward, backward, Adam step.
  // A non-finite loss raises NumericError.
  EpochStats train_epoch();

  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t num_samples() const noexcept { return samples_.size(); }

 private:
  Model& model_;
  std::vector<HFact> facts_;
  std::vector<MaskedSample> samples_;
  Adam adam_;
  Rng rng_;
  std::vector<Tensor*> values_;
  std::vector<const Tensor*> grads_;
  std::size_t epoch_ = 0;
};

struct TrainingResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
  std::filesystem::path log;
  double best_valid_mrr = 0.0;
};

// Loads the dataset, trains for config.epochs and writes final.ckpt,
// best.ckpt and train_log.jsonl under out_dir. Validation runs every
// eval_every epochs and after the last one; best.ckpt keeps the highest
// filtered all-entity MRR.
TrainingResult run_training(TrainConfig config, const std::filesystem::path& data_dir,
                            const std::filesystem::path& out_dir,
                            std::optional<DataFormat> format = std::nullopt);

// Builds the model for a dataset: resolves max_qualifiers, builds the
// training hypergraph and initializes parameters from config.seed.
Model build_model(TrainConfig config, const Dataset& data);

}  // namespace hahe
