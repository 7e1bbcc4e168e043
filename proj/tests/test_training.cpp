#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include <json.hpp>

#include "hahe/checkpoint.hpp"
#include "hahe/config.hpp"
#include "hahe/errors.hpp"
#include "hahe/kernels.hpp"
#include "hahe/training.hpp"
#include "test_util.hpp"

namespace hahe {
namespace {

Dataset toy_dataset(std::size_t facts, std::uint64_t seed) {
  Rng rng(seed);
  return testing::dataset_from_text(testing::random_facts_text(facts, 20, 5, 2, rng));
}

std::vector<Tensor> snapshot(const Model& m) {
  std::vector<Tensor> out;
  for (const auto& [name, v] : m.params().named()) out.push_back(v->value);
  return out;
}

TEST(MaskedSamples, OnePerToken) {
  const Dataset d = testing::dataset_from_text("A\tr\tB\nA\tr\tB\tq\tC\ts\tD\n");
  const auto two = generate_masked_samples(d.train[0], 0);
  ASSERT_EQ(two.size(), 3u);
  EXPECT_EQ(two[0].target, 0);
  EXPECT_EQ(two[1].target, 0);
  EXPECT_EQ(two[2].target, 1);
  EXPECT_EQ(two[1].role, Role::kR);
  const auto four = generate_masked_samples(d.train[1], 1);
  ASSERT_EQ(four.size(), 7u);
  EXPECT_EQ(four[5].role, Role::kA);
  EXPECT_EQ(four[5].target, *d.vocab.relation_id("s"));
  EXPECT_EQ(four[6].target, *d.vocab.entity_id("D"));
  EXPECT_EQ(generate_masked_samples(d.train).size(), 10u);
}

TEST(MaskedSamples, CountMatchesArityHistogramAndNeverTargetsSpecialIds) {
  const Dataset d = toy_dataset(300, 1);
  std::map<std::size_t, std::size_t> histogram;
  for (const HFact& f : d.train) ++histogram[f.arity()];
  std::size_t expected = 0;
  for (const auto& [arity, count] : histogram) expected += count * (3 + 2 * (arity - 2));
  const auto samples = generate_masked_samples(d.train);
  EXPECT_EQ(samples.size(), expected);
  for (const MaskedSample& s : samples) {
    const bool entity = is_entity_position(s.position);
    const auto n = static_cast<std::int64_t>(entity ? d.vocab.num_entities() : d.vocab.num_relations());
    EXPECT_GE(s.target, 0);
    EXPECT_LT(s.target, n);
  }
}

TEST(Init, ReproducibleAndWithinBounds) {
  const Dataset d = toy_dataset(40, 2);
  TrainConfig c = testing::small_config();
  c.embedding_dim = 16;
  c.hidden_size = 24;
  const Model a = build_model(c, d), b = build_model(c, d);
  const auto sa = snapshot(a), sb = snapshot(b);
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(max_abs_diff(sa[i], sb[i]), 0.0);

  const ModelParams& p = a.params();
  auto within = [](const ad::Var& v, double bound) {
    for (double x : v->value.data()) {
      EXPECT_LE(std::abs(x), bound);
    }
  };
  within(p.global[0].weight, std::sqrt(6.0 / 32.0));
  within(p.global[0].attn_nh, std::sqrt(6.0 / (16.0 / 2 + 1)));
  within(p.local[0].wq, std::sqrt(6.0 / 32.0));
  within(p.local[0].ff1_w, std::sqrt(6.0 / 40.0));
  within(p.decoder.w2, std::sqrt(6.0 / 32.0));
  EXPECT_DOUBLE_EQ(xavier_bound(16, 24), std::sqrt(6.0 / 40.0));
  for (double x : p.local[0].bq->value.data()) EXPECT_EQ(x, 0.0);
  for (double x : p.decoder.entity_bias->value.data()) EXPECT_EQ(x, 0.0);
  for (double x : p.local[0].ln1_gain->value.data()) EXPECT_EQ(x, 1.0);

  const Tensor& e = p.entity_embedding->value;
  for (double x : e.row(d.vocab.entity_pad())) EXPECT_EQ(x, 0.0);
  for (double x : p.relation_embedding->value.row(d.vocab.relation_pad())) EXPECT_EQ(x, 0.0);
  double sq = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < d.vocab.num_entities(); ++r)
    for (double x : e.row(r)) sq += x * x, ++n;
  EXPECT_NEAR(std::sqrt(sq / static_cast<double>(n)), 0.02, 0.005);
}

TEST(Init, ParameterCountMatchesHandTally) {
  // 3 facts over 5 entities and 2 relations.
  const Dataset d = testing::dataset_from_text("A\tr\tB\nB\tr\tC\tq\tD\nE\tq\tA\n");
  TrainConfig c = testing::small_config();
  c.embedding_dim = 16;
  c.global_layers = 1;
  c.global_heads = 4;
  c.local_layers = 2;
  c.local_heads = 2;
  c.hidden_size = 16;
  const Model m = build_model(c, d);
  const std::size_t entity_table = (5 + 2) * 16 - 16;   // PAD row frozen
  const std::size_t relation_table = (2 + 2) * 16 - 16;
  const std::size_t hyperedges = 3 * 16;
  const std::size_t global = 16 * 16 + 2 * (4 * 8);
  const std::size_t local_layer = 3 * (5 * 16 * 16)  // role projections
                                  + 3 * (14 * 16)    // edge biases
                                  + (16 * 16 + 16) * 2 // feed-forward
                                  + 4 * 16;          // two layer norms
  const std::size_t decoder = 2 * (16 * 16 + 16) + 2 * 16 + 5 + 2;
  EXPECT_EQ(trainable_parameter_count(m.params()),
            entity_table + relation_table + hyperedges + global + 2 * local_layer + decoder);
}

TEST(Init, AblationsRemoveParameters) {
  const Dataset d = toy_dataset(30, 3);
  const TrainConfig full = testing::small_config();
  const std::size_t base = trainable_parameter_count(build_model(full, d).params());
  for (int which = 0; which < 3; ++which) {
    TrainConfig c = full;
    (which == 0 ? c.no_global : which == 1 ? c.no_node_bias : c.no_edge_bias) = true;
    const Model m = build_model(c, d);
    EXPECT_LT(trainable_parameter_count(m.params()), base) << which;
  }
  TrainConfig c = full;
  c.no_global = true;
  const Model m = build_model(c, d);
  for (const auto& [name, v] : m.params().named()) {
    EXPECT_FALSE(name.starts_with("global.")) << name;
    EXPECT_NE(name, "hyperedge_embedding");
  }
}

TEST(Init, CapacityErrorWhenSequencesTooShort) {
  const Dataset d = testing::dataset_from_text("A\tr\tB\tq\tC\tq\tD\n");
  TrainConfig c = testing::small_config();
  c.max_qualifiers = 1;
  EXPECT_THROW(build_model(c, d), CapacityError);
  c.max_qualifiers.reset();
  EXPECT_EQ(build_model(c, d).max_qualifiers(), 2u);
}

TEST(Trainer, ZeroLearningRateLeavesParametersUnchanged) {
  const Dataset d = toy_dataset(30, 4);
  TrainConfig c = testing::small_config();
  c.learning_rate = 0.0;
  c.global_dropout = c.local_dropout = 0.1;
  Model m = build_model(c, d);
  const auto before = snapshot(m);
  Trainer trainer(m, d.train);
  trainer.train_epoch();
  const auto after = snapshot(m);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(max_abs_diff(before[i], after[i]), 0.0);
}

TEST(Trainer, PadRowsStayZero) {
  const Dataset d = toy_dataset(30, 5);
  Model m = build_model(testing::small_config(), d);
  Trainer trainer(m, d.train);
  for (int e = 0; e < 3; ++e) trainer.train_epoch();
  for (double x : m.params().entity_embedding->value.row(d.vocab.entity_pad())) EXPECT_EQ(x, 0.0);
  for (double x : m.params().relation_embedding->value.row(d.vocab.relation_pad())) EXPECT_EQ(x, 0.0);
}

TEST(Trainer, SameSeedGivesIdenticalLossSequence) {
  const Dataset d = toy_dataset(40, 6);
  TrainConfig c = testing::small_config();
  c.global_dropout = c.local_dropout = 0.1;
  std::vector<double> runs[2];
  for (auto& losses : runs) {
    Model m = build_model(c, d);
    Trainer trainer(m, d.train);
    for (int e = 0; e < 4; ++e) losses.push_back(trainer.train_epoch().mean_loss);
  }
  EXPECT_EQ(runs[0], runs[1]);
}

TEST(Trainer, LossDecreasesOverEpochWindows) {
  const Dataset d = toy_dataset(200, 7);
  TrainConfig c = testing::small_config();
  c.embedding_dim = c.hidden_size = 16;
  c.learning_rate = 0.003;
  c.batch_size = 128;
  c.weight_decay = 0.0;
  Model m = build_model(c, d);
  Trainer trainer(m, d.train);
  std::vector<double> windows;
  double acc = 0.0;
  for (int e = 1; e <= 100; ++e) {
    const EpochStats s = trainer.train_epoch();
    ASSERT_TRUE(std::isfinite(s.mean_loss));
    acc += s.mean_loss;
    if (e % 10 == 0) {
      windows.push_back(acc / 10.0);
      acc = 0.0;
    }
  }
  for (std::size_t i = 1; i < windows.size(); ++i) EXPECT_LT(windows[i], windows[i - 1]) << i;
}

TEST(Trainer, NonFiniteLossIsNumericError) {
  const Dataset d = toy_dataset(10, 8);
  Model m = build_model(testing::small_config(), d);
  m.params().entity_embedding->value[0] = std::numeric_limits<double>::quiet_NaN();
  Trainer trainer(m, d.train);
  EXPECT_THROW(trainer.train_epoch(), NumericError);
}

TEST(Config, RenderParseRoundTrip) {
  TrainConfig c;
  c.embedding_dim = 64;
  c.global_activation = parse_activation("leaky_relu(0.3)");
  c.learning_rate = 1.25e-4;
  c.no_edge_bias = true;
  c.max_qualifiers = 5;
  c.seed = 123456789012345ULL;
  const std::string text = render_config(c);
  EXPECT_EQ(render_config(parse_config_text(text)), text);
  EXPECT_EQ(render_config(parse_config_text(render_config(TrainConfig{}))),
            render_config(TrainConfig{}));
}

TEST(Config, ParsesCommentsAndRejectsBadInput) {
  const TrainConfig c = parse_config_text("# tiny\nembedding_dim = 32\n\nno_global = true # off\n");
  EXPECT_EQ(c.embedding_dim, 32u);
  EXPECT_TRUE(c.no_global);
  EXPECT_EQ(c.effective_global_layers(), 0u);
  EXPECT_THROW(parse_config_text("bogus = 1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("embedding_dim = -3\n"), ConfigError);
  EXPECT_THROW(parse_config_text("embedding_dim 3\n"), ConfigError);
  EXPECT_THROW(parse_config_text("global_activation = swish\n"), ConfigError);
  TrainConfig bad;
  bad.embedding_dim = 10;
  bad.global_heads = 4;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Checkpoint, RoundTripPreservesModel) {
  testing::TempDir dir("ckpt");
  const Dataset d = toy_dataset(30, 9);
  Model m = build_model(testing::small_config(), d);
  Trainer trainer(m, d.train);
  trainer.train_epoch();
  save_checkpoint(dir.path() / "a.ckpt", m, {"some/dir", DataFormat::kJsonl});
  CheckpointInfo info;
  const Model loaded = load_checkpoint(dir.path() / "a.ckpt", &info);
  EXPECT_EQ(info.data_dir, "some/dir");
  EXPECT_EQ(info.format, DataFormat::kJsonl);
  EXPECT_EQ(loaded.vocab().entities(), m.vocab().entities());
  EXPECT_EQ(loaded.vocab().relations(), m.vocab().relations());
  EXPECT_EQ(render_config(loaded.config()), render_config(m.config()));
  ASSERT_EQ(loaded.graph().num_hyperedges(), m.graph().num_hyperedges());
  for (std::size_t e = 0; e < m.graph().num_hyperedges(); ++e) {
    const auto a = m.graph().members(e), b = loaded.graph().members(e);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
  const auto pa = m.params().named(), pb = loaded.params().named();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_EQ(pa[i].second->value.shape(), pb[i].second->value.shape());
    for (std::size_t k = 0; k < pa[i].second->value.size(); ++k) {
      EXPECT_EQ(static_cast<float>(pa[i].second->value[k]), pb[i].second->value[k]);
    }
  }
  // A reloaded model writes the same bytes back.
  save_checkpoint(dir.path() / "b.ckpt", loaded, {"some/dir", DataFormat::kJsonl});
  EXPECT_EQ(testing::read_bytes(dir.path() / "a.ckpt"), testing::read_bytes(dir.path() / "b.ckpt"));
}

TEST(Checkpoint, RejectsForeignAndTruncatedFiles) {
  testing::TempDir dir("ckpt_bad");
  testing::write_text(dir.path() / "x.ckpt", "not a checkpoint at all");
  EXPECT_THROW(load_checkpoint(dir.path() / "x.ckpt"), IoError);
  EXPECT_THROW(load_checkpoint(dir.path() / "missing.ckpt"), IoError);
  const Dataset d = toy_dataset(10, 10);
  save_checkpoint(dir.path() / "ok.ckpt", build_model(testing::small_config(), d), {});
  const std::string bytes = testing::read_bytes(dir.path() / "ok.ckpt");
  testing::write_text(dir.path() / "cut.ckpt", bytes.substr(0, bytes.size() - 7));
  EXPECT_THROW(load_checkpoint(dir.path() / "cut.ckpt"), IoError);
}

void write_toy_dataset(const std::filesystem::path& dir, std::uint64_t seed) {
  Rng rng(seed);
  std::filesystem::create_directories(dir);
  testing::write_text(dir / "train.txt", testing::random_facts_text(60, 15, 4, 2, rng));
  testing::write_text(dir / "test.txt", testing::random_facts_text(10, 15, 4, 2, rng));
}

TEST(RunTraining, ZeroEpochsWritesInitialization) {
  testing::TempDir dir("run0");
  write_toy_dataset(dir.path() / "data", 11);
  TrainConfig c = testing::small_config();
  c.epochs = 0;
  const TrainingResult r = run_training(c, dir.path() / "data", dir.path() / "out");
  ASSERT_TRUE(std::filesystem::exists(r.final_checkpoint));
  ASSERT_TRUE(std::filesystem::exists(r.best_checkpoint));
  const Model loaded = load_checkpoint(r.final_checkpoint);
  const Dataset data = load_dataset(dir.path() / "data", std::nullopt, c.seed);
  const Model fresh = build_model(c, data);
  const auto a = fresh.params().named(), b = loaded.params().named();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < a[i].second->value.size(); ++k) {
      EXPECT_EQ(static_cast<float>(a[i].second->value[k]), b[i].second->value[k]);
    }
  }
}

TEST(RunTraining, LogRecordsMonotoneBestLoss) {
  testing::TempDir dir("runlog");
  write_toy_dataset(dir.path() / "data", 12);
  TrainConfig c = testing::small_config();
  c.epochs = 6;
  c.eval_every = 3;
  const TrainingResult r = run_training(c, dir.path() / "data", dir.path() / "out");
  std::ifstream in(r.log);
  std::string line;
  double best = std::numeric_limits<double>::infinity();
  std::size_t epochs = 0, validations = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j.contains("loss")) {
      ++epochs;
      EXPECT_LE(j["best_loss"].get<double>(), best);
      best = j["best_loss"].get<double>();
      EXPECT_LE(best, j["loss"].get<double>());
    } else {
      ++validations;
      EXPECT_GE(j["best_valid_mrr"].get<double>(), j["valid_all_entity_mrr"].get<double>());
    }
  }
  EXPECT_EQ(epochs, 6u);
  EXPECT_EQ(validations, 2u);
}

TEST(RunTraining, NoGlobalCheckpointLacksGlobalParameters) {
  testing::TempDir dir("runng");
  write_toy_dataset(dir.path() / "data", 13);
  TrainConfig c = testing::small_config();
  c.epochs = 1;
  c.no_global = true;
  const TrainingResult r = run_training(c, dir.path() / "data", dir.path() / "out");
  const Model loaded = load_checkpoint(r.final_checkpoint);
  for (const auto& [name, v] : loaded.params().named()) {
    EXPECT_FALSE(name.starts_with("global.")) << name;
    EXPECT_NE(name, "hyperedge_embedding");
  }
}

TEST(RunTraining, RepeatedRunsAreByteIdentical) {
  testing::TempDir dir("rundet");
  write_toy_dataset(dir.path() / "data", 14);
  TrainConfig c = testing::small_config();
  c.epochs = 3;
  c.eval_every = 1;
  c.global_dropout = c.local_dropout = 0.1;
  const int saved = kernels::max_threads();
  const std::pair<const char*, int> runs[] = {{"a", 1}, {"b", 1}, {"c", 4}};
  for (const auto& [name, threads] : runs) {
    kernels::set_threads(threads);
    run_training(c, dir.path() / "data", dir.path() / name);
  }
  kernels::set_threads(saved);
  for (const char* f : {"final.ckpt", "best.ckpt", "train_log.jsonl"}) {
    const std::string a = testing::read_bytes(dir.path() / "a" / f);
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, testing::read_bytes(dir.path() / "b" / f)) << f;
    EXPECT_EQ(a, testing::read_bytes(dir.path() / "c" / f)) << f;
  }
}

}  // namespace
}  // namespace hahe
