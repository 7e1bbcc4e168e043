#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "hahe/autograd.hpp"
#include "hahe/errors.hpp"
#include "test_util.hpp"

namespace hahe {
namespace {

using testing::random_tensor;

// Scalar probe sensitive to every entry of y: sum(tanh(y)) + CE(y, targets).
ad::Var probe(ad::Tape& t, const ad::Var& y) {
  static thread_local std::vector<std::int64_t> targets;
  targets.assign(y->value.rows(), 0);
  for (std::size_t r = 0; r < targets.size(); ++r) {
    targets[r] = static_cast<std::int64_t>(r % y->value.cols());
  }
  const ad::Var a = ad::sum(t, ad::activation(t, y, Activation{ActivationKind::kTanh}));
  return ad::add(t, a, ad::soft_label_cross_entropy(t, y, targets, 0.1));
}

// Compares reverse-mode gradients of build(inputs) against central
// differences for every input tensor.
void expect_gradients(std::vector<ad::Var> inputs,
                      const std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>& build,
                      double tol = 1e-6) {
  {
    ad::Tape t;
    t.backward(probe(t, build(t, inputs)));
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const ad::Var& in = inputs[k];
    if (!in->requires_grad) continue;
    const Tensor analytic = in->grad.empty() ? Tensor(in->value.shape()) : in->grad;
    const Tensor saved = in->value;
    const Tensor numeric = finite_difference_gradient(
        [&](const Tensor& x) {
          in->value = x;
          ad::Tape t(false);
          const double v = probe(t, build(t, inputs))->value[0];
          in->value = saved;
          return v;
        },
        saved);
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-3});
      EXPECT_LE(std::abs(analytic[i] - numeric[i]) / denom, tol)
          << "input " << k << " entry " << i << ": " << analytic[i] << " vs " << numeric[i];
    }
  }
}

TEST(Autograd, MatmulVariants) {
  Rng rng(1);
  expect_gradients({ad::parameter(random_tensor({3, 4}, rng)), ad::parameter(random_tensor({4, 5}, rng))},
                   [](ad::Tape& t, const auto& v) { return ad::matmul(t, v[0], v[1]); });
  expect_gradients({ad::parameter(random_tensor({3, 4}, rng)), ad::parameter(random_tensor({6, 4}, rng))},
                   [](ad::Tape& t, const auto& v) { return ad::matmul_nt(t, v[0], v[1], 4); });
}

TEST(Autograd, ElementwiseOps) {
  Rng rng(2);
  expect_gradients({ad::parameter(random_tensor({3, 4}, rng)), ad::parameter(random_tensor({3, 4}, rng))},
                   [](ad::Tape& t, const auto& v) { return ad::add(t, v[0], ad::scale(t, v[1], -1.7)); });
  expect_gradients({ad::parameter(random_tensor({3, 4}, rng)), ad::parameter(random_tensor({4}, rng))},
                   [](ad::Tape& t, const auto& v) { return ad::add_row(t, v[0], v[1]); });
  for (const char* name : {"elu", "gelu", "tanh", "leaky_relu"}) {
    const Activation a = parse_activation(name);
    expect_gradients({ad::parameter(random_tensor({3, 4}, rng))},
                     [a](ad::Tape& t, const auto& v) { return ad::activation(t, v[0], a); });
  }
}

TEST(Autograd, SameNodeUsedTwice) {
  Rng rng(3);
  expect_gradients({ad::parameter(random_tensor({3, 3}, rng))},
                   [](ad::Tape& t, const auto& v) { return ad::matmul(t, v[0], v[0]); });
}

TEST(Autograd, DropoutWithFixedMask) {
  Rng rng(4);
  expect_gradients({ad::parameter(random_tensor({5, 4}, rng))}, [](ad::Tape& t, const auto& v) {
    Rng mask(77);
    return ad::dropout(t, v[0], 0.4, true, mask);
  });
}

TEST(Autograd, LayerNorm) {
  Rng rng(5);
  expect_gradients({ad::parameter(random_tensor({4, 6}, rng)), ad::parameter(random_tensor({6}, rng)),
                    ad::parameter(random_tensor({6}, rng))},
                   [](ad::Tape& t, const auto& v) { return ad::layer_norm(t, v[0], v[1], v[2]); });
}

TEST(Autograd, RowSelection) {
  Rng rng(6);
  static const std::vector<std::int64_t> ids{2, 0, 2, 3};
  expect_gradients({ad::parameter(random_tensor({4, 3}, rng))},
                   [](ad::Tape& t, const auto& v) { return ad::gather_rows(t, v[0], ids); });
  static const std::vector<ad::RowRef> refs{{0, 1}, {1, 0}, {2, 2}, {0, 1}, {1, 1}};
  expect_gradients({ad::parameter(random_tensor({2, 3}, rng)), ad::parameter(random_tensor({2, 3}, rng)),
                    ad::parameter(random_tensor({3, 3}, rng))},
                   [](ad::Tape& t, const auto& v) {
                     return ad::gather_rows_from(t, {v[0], v[1], v[2]}, refs);
                   });
  expect_gradients({ad::parameter(random_tensor({5, 3}, rng))},
                   [](ad::Tape& t, const auto& v) { return ad::slice_rows(t, v[0], 1, 4); });
  static const std::vector<std::uint8_t> use{0, 1, 1, 0};
  expect_gradients({ad::parameter(random_tensor({4, 3}, rng)), ad::parameter(random_tensor({4, 3}, rng))},
                   [](ad::Tape& t, const auto& v) { return ad::select_rows(t, v[0], v[1], use); });
}

TEST(Autograd, RoleLinearIncludingPadRows) {
  Rng rng(7);
  static const std::vector<std::uint8_t> roles{0, 1, 2, 3, 4, 5, 3, 0};
  expect_gradients({ad::parameter(random_tensor({8, 4}, rng)), ad::parameter(random_tensor({5, 4, 6}, rng))},
                   [](ad::Tape& t, const auto& v) { return ad::role_linear(t, v[0], v[1], roles); });
}

TEST(Autograd, RoleLinearPadRowsAreZero) {
  Rng rng(8);
  ad::Tape t(false);
  const std::vector<std::uint8_t> roles{0, 5};
  const auto y = ad::role_linear(t, ad::constant(random_tensor({2, 3}, rng)),
                                 ad::constant(random_tensor({5, 3, 3}, rng)), roles);
  for (double v : y->value.row(1)) EXPECT_EQ(v, 0.0);
}

TEST(Autograd, IncidenceAttention) {
  Rng rng(9);
  static const std::vector<std::size_t> offsets{0, 2, 2, 5, 6};
  static const std::vector<std::size_t> members{0, 3, 1, 2, 3, 4};
  for (double rate : {0.0, 0.3}) {
    expect_gradients(
        {ad::parameter(random_tensor({4, 6}, rng)), ad::parameter(random_tensor({5, 6}, rng)),
         ad::parameter(random_tensor({5, 6}, rng)), ad::parameter(random_tensor({2, 6}, rng))},
        [rate](ad::Tape& t, const auto& v) {
          ad::IncidenceAttentionSpec s;
          s.offsets = offsets;
          s.members = members;
          s.heads = 2;
          s.dropout = rate;
          s.training = true;
          Rng mask(5);
          return ad::incidence_attention(t, v[0], v[1], v[2], v[3], s, mask);
        });
  }
}

TEST(Autograd, IncidenceAttentionSharedSourceAndValues) {
  Rng rng(10);
  static const std::vector<std::size_t> offsets{0, 3, 4};
  static const std::vector<std::size_t> members{0, 1, 2, 1};
  expect_gradients({ad::parameter(random_tensor({2, 4}, rng)), ad::parameter(random_tensor({3, 4}, rng)),
                    ad::parameter(random_tensor({1, 8}, rng))},
                   [](ad::Tape& t, const auto& v) {
                     ad::IncidenceAttentionSpec s;
                     s.offsets = offsets;
                     s.members = members;
                     Rng unused(0);
                     return ad::incidence_attention(t, v[0], v[1], v[1], v[2], s, unused);
                   });
}

TEST(Autograd, HeteroAttention) {
  Rng rng(11);
  const std::size_t batch = 2, len = 5, dim = 6;
  static std::vector<std::uint8_t> types, valid;
  types.resize(batch * len * len);
  std::uniform_int_distribution<int> ty(0, 14);
  for (auto& x : types) x = static_cast<std::uint8_t>(ty(rng));
  valid = {1, 1, 1, 0, 0, 1, 1, 1, 1, 1};
  for (bool biases : {true, false}) {
    std::vector<ad::Var> in{ad::parameter(random_tensor({batch * len, dim}, rng)),
                            ad::parameter(random_tensor({batch * len, dim}, rng)),
                            ad::parameter(random_tensor({batch * len, dim}, rng))};
    if (biases) {
      for (int i = 0; i < 3; ++i) in.push_back(ad::parameter(random_tensor({14, dim}, rng)));
    }
    expect_gradients(in, [biases](ad::Tape& t, const auto& v) {
      ad::HeteroAttentionSpec s{types, valid, 2, 5, 3};
      const ad::Var none;
      return ad::hetero_attention(t, v[0], v[1], v[2], biases ? v[3] : none,
                                  biases ? v[4] : none, biases ? v[5] : none, s);
    });
  }
}

TEST(Autograd, SoftLabelCrossEntropyValue) {
  ad::Tape t(false);
  const std::vector<std::int64_t> target{0};
  const auto logits = ad::constant(Tensor::matrix(1, 3, {0, 0, 0}));
  EXPECT_NEAR(ad::soft_label_cross_entropy(t, logits, target, 0.0)->value[0], std::log(3.0), 1e-12);
  EXPECT_NEAR(ad::soft_label_cross_entropy(t, logits, target, 0.3)->value[0], std::log(3.0), 1e-12);
}

TEST(Autograd, BackwardNeedsScalarRoot) {
  ad::Tape t;
  const auto x = ad::parameter(Tensor({2, 2}, 1.0));
  const auto y = ad::scale(t, x, 2.0);
  EXPECT_THROW(t.backward(y), ShapeError);
}

TEST(Autograd, ShapeErrors) {
  ad::Tape t;
  EXPECT_THROW(ad::matmul(t, ad::constant(Tensor({2, 3})), ad::constant(Tensor({2, 3}))), ShapeError);
  const std::vector<std::int64_t> bad{7};
  EXPECT_THROW(ad::gather_rows(t, ad::constant(Tensor({2, 3})), bad), IndexError);
}

TEST(Autograd, NonRecordingTapeKeepsNoNodes) {
  ad::Tape t(false);
  const auto x = ad::parameter(Tensor({2, 2}, 1.0));
  ad::sum(t, ad::scale(t, x, 3.0));
  EXPECT_EQ(t.size(), 0u);
}

}  // namespace
}  // namespace hahe
