#include "hahe/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "hahe/checkpoint.hpp"
#include "hahe/errors.hpp"
#include "hahe/evaluation.hpp"

namespace hahe {

std::vector<MaskedSample> generate_masked_samples(const HFact& fact, std::size_t fact_id) {
  const std::size_t n = 3 + 2 * fact.qualifiers.size();
  std::vector<MaskedSample> out;
  out.reserve(n);
  for (std::size_t p = 0; p < n; ++p) {
    std::int64_t target = 0;
    if (p == 0) target = fact.subject;
    else if (p == 1) target = fact.relation;
    else if (p == 2) target = fact.object;
    else {
      const Qualifier& q = fact.qualifiers[(p - 3) / 2];
      target = (p - 3) % 2 == 0 ? q.attribute : q.value;
    }
    out.push_back({fact_id, p, role_at(p, n), target});
  }
  return out;
}

std::vector<MaskedSample> generate_masked_samples(std::span<const HFact> facts) {
  std::vector<MaskedSample> out;
  for (std::size_t f = 0; f < facts.size(); ++f) {
    auto s = generate_masked_samples(facts[f], f);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

Trainer::Trainer(Model& model, std::vector<HFact> facts)
    : model_(model),
      facts_(std::move(facts)),
      samples_(generate_masked_samples(facts_)),
      adam_(AdamOptions{model.config().learning_rate, 0.9, 0.999, 1e-8,
                        model.config().weight_decay}),
      rng_(model.config().seed ^ 0x9e3779b97f4a7c15ULL) {
  if (samples_.empty()) throw ShapeError("no training facts");
  for (const auto& [name, v] : model_.params().named()) {
    values_.push_back(&v->value);
    grads_.push_back(&v->grad_buffer());
  }
}

EpochStats Trainer::train_epoch() {
  const auto start = std::chrono::steady_clock::now();
  std::shuffle(samples_.begin(), samples_.end(), rng_);
  const std::size_t bs = model_.config().batch_size;
  const auto named = model_.params().named();
  EpochStats stats;
  double weighted = 0.0;
  std::vector<MaskedSequence> items;
  for (std::size_t begin = 0; begin < samples_.size(); begin += bs) {
    const std::size_t end = std::min(samples_.size(), begin + bs);
    items.clear();
    for (std::size_t i = begin; i < end; ++i) {
      items.push_back({facts_[samples_[i].fact], {samples_[i].position}});
    }
    const SequenceBatch batch = model_.batch(items);
    ad::Tape tape;
    const ad::Var loss = model_.loss(tape, batch, true, rng_);
    const double value = loss->value[0];
    if (!std::isfinite(value)) {
      throw NumericError("non-finite loss " + std::to_string(value) + " at epoch " +
                         std::to_string(epoch_ + 1) + ", batch " +
                         std::to_string(stats.batches + 1) + " (" +
                         std::to_string(end - begin) + " samples)");
    }
    tape.backward(loss);
    model_.mask_frozen_gradients();
    adam_.step(values_, grads_);
    for (const auto& [name, v] : named) v->grad.fill(0.0);
    weighted += value * static_cast<double>(end - begin);
    ++stats.batches;
  }
  ++epoch_;
  stats.mean_loss = weighted / static_cast<double>(samples_.size());
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  stats.samples_per_second = secs > 0.0 ? static_cast<double>(samples_.size()) / secs : 0.0;
  return stats;
}

Model build_model(TrainConfig config, const Dataset& data) {
  const std::size_t needed = data.max_qualifiers();
  if (!config.max_qualifiers) {
    config.max_qualifiers = needed;
  } else if (*config.max_qualifiers < needed) {
    throw CapacityError("max_qualifiers = " + std::to_string(*config.max_qualifiers) +
                        " but the data has facts with " + std::to_string(needed) +
                        " qualifiers");
  }
  std::vector<HFact> edges = data.train;
  if (config.global_full_graph) {
    edges.insert(edges.end(), data.valid.begin(), data.valid.end());
    edges.insert(edges.end(), data.test.begin(), data.test.end());
  }
  Hypergraph graph = Hypergraph::build(edges, data.vocab.num_entities());
  Rng rng(config.seed);
  ModelParams params = init_parameters(config, data.vocab.num_entities(),
                                       data.vocab.num_relations(), graph.num_hyperedges(), rng);
  return Model(std::move(config), data.vocab, std::move(graph), std::move(params));
}

TrainingResult run_training(TrainConfig config, const std::filesystem::path& data_dir,
                            const std::filesystem::path& out_dir,
                            std::optional<DataFormat> format) {
  config.validate();
  const Dataset data = load_dataset(data_dir, format, config.seed);
  const SplitFiles files = locate_splits(data_dir, format);
  Model model = build_model(std::move(config), data);
  const TrainConfig& cfg = model.config();

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  TrainingResult result;
  result.final_checkpoint = out_dir / "final.ckpt";
  result.best_checkpoint = out_dir / "best.ckpt";
  result.log = out_dir / "train_log.jsonl";
  std::ofstream log(result.log, std::ios::trunc);
  if (!log) throw IoError("cannot write " + result.log.string());
  const CheckpointInfo info{data_dir.string(), files.format};

  const FilterIndex filter({data.train, data.valid, data.test});
  const std::vector<HFact>& valid = data.valid.empty() ? data.train : data.valid;
  double best_mrr = -1.0;
  auto validate = [&](std::size_t epoch) {
    ModelScorer scorer(model);
    const RankReport r = evaluate_link_prediction(scorer, valid, &filter, model.graph());
    const double mrr = r.all_entities.mrr;
    const bool improved = mrr > best_mrr;
    if (improved) {
      best_mrr = mrr;
      save_checkpoint(result.best_checkpoint, model, info);
    }
    nlohmann::json line = {{"epoch", epoch},
                           {"valid_all_entity_mrr", mrr},
                           {"best_valid_mrr", best_mrr},
                           {"improved", improved}};
    log << line.dump() << "\n";
  };

  Trainer trainer(model, data.train);
  double best_loss = std::numeric_limits<double>::infinity();
  if (cfg.epochs == 0) validate(0);
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    const EpochStats s = trainer.train_epoch();
    best_loss = std::min(best_loss, s.mean_loss);
    nlohmann::json line = {{"epoch", e},
                           {"loss", s.mean_loss},
                           {"best_loss", best_loss},
                           {"batches", s.batches}};
    log << line.dump() << "\n";
    if (e % cfg.eval_every == 0 || e == cfg.epochs) validate(e);
  }
  save_checkpoint(result.final_checkpoint, model, info);
  result.best_valid_mrr = best_mrr;
  if (!log) throw IoError("write failure on " + result.log.string());
  return result;
}

}  // namespace hahe
