#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "hahe/decoder.hpp"
#include "hahe/errors.hpp"
#include "hahe/training.hpp"
#include "test_util.hpp"

namespace hahe {
namespace {

using testing::random_tensor;

DecoderParams random_decoder(std::size_t d, std::size_t ne, std::size_t nr, Rng& rng) {
  DecoderParams p;
  p.w1 = ad::parameter(random_tensor({d, d}, rng, 0.5));
  p.b1 = ad::parameter(random_tensor({d}, rng, 0.1));
  p.ln_gain = ad::parameter(random_tensor({d}, rng, 0.1));
  for (double& g : p.ln_gain->value.data()) g += 1.0;
  p.ln_bias = ad::parameter(random_tensor({d}, rng, 0.1));
  p.w2 = ad::parameter(random_tensor({d, d}, rng, 0.5));
  p.b2 = ad::parameter(random_tensor({d}, rng, 0.1));
  p.entity_bias = ad::parameter(random_tensor({ne}, rng, 0.1));
  p.relation_bias = ad::parameter(random_tensor({nr}, rng, 0.1));
  return p;
}

TEST(SoftLabels, Examples) {
  const auto y = soft_labels(1, 4, 0.3);
  ASSERT_EQ(y.size(), 4u);
  EXPECT_NEAR(y[0], 0.1, 1e-15);
  EXPECT_NEAR(y[1], 0.7, 1e-15);
  EXPECT_NEAR(y[3], 0.1, 1e-15);
  EXPECT_EQ(soft_labels(0, 3, 0.0), (std::vector<double>{1.0, 0.0, 0.0}));
  EXPECT_EQ(soft_labels(0, 1, 0.0), (std::vector<double>{1.0}));
}

TEST(SoftLabels, AlwaysADistribution) {
  Rng rng(1);
  std::uniform_int_distribution<std::size_t> n(2, 200);
  std::uniform_real_distribution<double> eps(0.0, 0.99);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t classes = n(rng);
    const auto y = soft_labels(classes / 2, classes, eps(rng));
    EXPECT_NEAR(std::accumulate(y.begin(), y.end(), 0.0), 1.0, 1e-12);
    for (double v : y) EXPECT_GE(v, 0.0);
  }
}

TEST(SoftLabels, Errors) {
  EXPECT_THROW(soft_labels(0, 3, 1.0), ConfigError);
  EXPECT_THROW(soft_labels(0, 3, -0.1), ConfigError);
  EXPECT_THROW(soft_labels(3, 3, 0.1), IndexError);
  EXPECT_THROW(soft_labels(0, 1, 0.1), ConfigError);
}

TEST(CrossEntropy, Examples) {
  EXPECT_NEAR(cross_entropy(std::vector<double>{0.25, 0.25, 0.25, 0.25},
                            std::vector<double>{0, 1, 0, 0}),
              std::log(4.0), 1e-15);
  EXPECT_NEAR(cross_entropy(std::vector<double>{1.0, 0.0}, std::vector<double>{1, 0}), 0.0, 1e-15);
  EXPECT_NEAR(cross_entropy(std::vector<double>{0.0, 1.0}, std::vector<double>{1, 0}),
              -std::log(1e-12), 1e-9);
  EXPECT_THROW(cross_entropy(std::vector<double>{1.0}, std::vector<double>{1, 0}), ShapeError);
}

TEST(CrossEntropy, BoundedBelowByLabelEntropy) {
  Rng rng(2);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + trial % 30;
    std::vector<double> p(n);
    for (double& v : p) v = u(rng);
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    for (double& v : p) v /= total;
    const auto y = soft_labels(trial % n, n, 0.2);
    EXPECT_GE(cross_entropy(p, y) + 1e-12, cross_entropy(y, y));
  }
}

TEST(Decoder, ProbabilitiesMatchHandComputation) {
  Rng rng(3);
  const std::size_t d = 6, n = 9;
  const DecoderParams p = random_decoder(d, n, 3, rng);
  const ad::Var table = ad::parameter(random_tensor({n + 2, d}, rng));
  const Tensor x = random_tensor({1, d}, rng);
  const Activation act{ActivationKind::kGelu};
  const auto probs = decode_position(x.data(), p, act, table, n, p.entity_bias);

  std::vector<double> h(d);
  for (std::size_t c = 0; c < d; ++c) {
    double s = p.b1->value[c];
    for (std::size_t k = 0; k < d; ++k) s += x[k] * p.w1->value.at(k, c);
    h[c] = activate(act, s);
  }
  const Tensor hn = layer_norm(Tensor({1, d}, h), p.ln_gain->value.data(), p.ln_bias->value.data());
  std::vector<double> z(d);
  for (std::size_t c = 0; c < d; ++c) {
    z[c] = p.b2->value[c];
    for (std::size_t k = 0; k < d; ++k) z[c] += hn[k] * p.w2->value.at(k, c);
  }
  std::vector<double> logits(n);
  for (std::size_t e = 0; e < n; ++e) {
    logits[e] = p.entity_bias->value[e];
    for (std::size_t c = 0; c < d; ++c) logits[e] += z[c] * table->value.at(e, c);
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double l : logits) total += std::exp(l - peak);
  ASSERT_EQ(probs.size(), n);
  for (std::size_t e = 0; e < n; ++e) {
    EXPECT_NEAR(probs[e], std::exp(logits[e] - peak) / total, 1e-14);
  }
  EXPECT_NEAR(std::accumulate(probs.begin(), probs.end(), 0.0), 1.0, 1e-12);
}

TEST(Decoder, LogitsReadTheLiveEmbeddingTable) {
  Rng rng(4);
  const std::size_t d = 4, n = 5;
  const DecoderParams p = random_decoder(d, n, 3, rng);
  const ad::Var table = ad::parameter(random_tensor({n + 2, d}, rng));
  const ad::Var x = ad::constant(random_tensor({2, d}, rng));
  const Activation act{ActivationKind::kRelu};
  ad::Tape t(false);
  const Tensor before = decoder_logits(t, x, p, act, table, n, p.entity_bias)->value;
  for (double& v : table->value.row(3)) v += 1.0;
  const Tensor after = decoder_logits(t, x, p, act, table, n, p.entity_bias)->value;
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t e = 0; e < n; ++e) {
      if (e == 3) {
        EXPECT_NE(before.at(r, e), after.at(r, e));
      } else {
        EXPECT_EQ(before.at(r, e), after.at(r, e));
      }
    }
  }
  // PAD and MASK rows are never scored.
  for (double& v : table->value.row(n)) v += 5.0;
  for (double& v : table->value.row(n + 1)) v += 5.0;
  EXPECT_EQ(max_abs_diff(after, decoder_logits(t, x, p, act, table, n, p.entity_bias)->value), 0.0);
}

TEST(Decoder, LossGradientIsProbabilitiesMinusLabels) {
  Rng rng(5);
  const ad::Var logits = ad::parameter(random_tensor({3, 7}, rng));
  const std::vector<std::int64_t> targets{0, 4, 6};
  const double eps = 0.2;
  ad::Tape t;
  const ad::Var loss = ad::soft_label_cross_entropy(t, logits, targets, eps);
  double expected = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    const std::vector<double> row(logits->value.row(r).begin(), logits->value.row(r).end());
    const auto probs = masked_softmax(row, std::vector<std::uint8_t>(7, 1));
    const auto y = soft_labels(static_cast<std::size_t>(targets[r]), 7, eps);
    expected += cross_entropy(probs, y);
  }
  EXPECT_NEAR(loss->value[0], expected, 1e-12);
  t.backward(loss);
  for (std::size_t r = 0; r < 3; ++r) {
    const std::vector<double> row(logits->value.row(r).begin(), logits->value.row(r).end());
    const auto probs = masked_softmax(row, std::vector<std::uint8_t>(7, 1));
    const auto y = soft_labels(static_cast<std::size_t>(targets[r]), 7, eps);
    for (std::size_t c = 0; c < 7; ++c) EXPECT_NEAR(logits->grad.at(r, c), probs[c] - y[c], 1e-14);
  }
}

TEST(Decoder, BiasLengthMismatchIsShapeError) {
  Rng rng(6);
  const DecoderParams p = random_decoder(4, 5, 3, rng);
  const ad::Var table = ad::parameter(random_tensor({7, 4}, rng));
  ad::Tape t(false);
  EXPECT_THROW(decoder_logits(t, ad::constant(Tensor({1, 4})), p, Activation{}, table, 4,
                              p.entity_bias),
               ShapeError);
}

TEST(ModelLoss, MeanOfPerPositionCrossEntropies) {
  Rng rng(7);
  const Dataset data =
      testing::dataset_from_text(testing::random_facts_text(30, 15, 4, 2, rng));
  TrainConfig config = testing::small_config();
  config.soft_label_entity = 0.3;
  config.soft_label_relation = 0.05;
  const Model model = build_model(config, data);
  std::vector<MaskedSequence> items;
  for (std::size_t i = 0; i < 6; ++i) {
    const HFact& f = data.train[i];
    items.push_back({f, {i % (3 + 2 * f.qualifiers.size())}});
  }
  items.push_back({data.train[6], {0, 1}});
  const SequenceBatch batch = model.batch(items);
  ad::Tape t(false);
  Rng unused(0);
  const double loss = model.loss(t, batch, false, unused)->value[0];
  const auto lp = model.log_probs(batch, model.inference_nodes());
  ASSERT_EQ(lp.size(), batch.masked.size());
  double expected = 0.0;
  for (std::size_t k = 0; k < lp.size(); ++k) {
    const MaskedPosition& m = batch.masked[k];
    const std::size_t n = m.entity ? data.vocab.num_entities() : data.vocab.num_relations();
    ASSERT_EQ(lp[k].size(), n);
    const auto y = soft_labels(static_cast<std::size_t>(m.target), n,
                               m.entity ? 0.3 : 0.05);
    for (std::size_t c = 0; c < n; ++c) expected -= y[c] * lp[k][c];
  }
  EXPECT_NEAR(loss, expected / static_cast<double>(lp.size()), 1e-10);
}

}  // namespace
}  // namespace hahe
