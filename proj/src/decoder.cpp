#include "hahe/decoder.hpp"

#include <algorithm>
#include <cmath>

#include "hahe/errors.hpp"

namespace hahe {

ad::Var decoder_mlp(ad::Tape& t, const ad::Var& x, const DecoderParams& p, const Activation& act) {
  ad::Var h = ad::add_row(t, ad::matmul(t, x, p.w1), p.b1);
  h = ad::activation(t, h, act);
  h = ad::layer_norm(t, h, p.ln_gain, p.ln_bias);
  return ad::add_row(t, ad::matmul(t, h, p.w2), p.b2);
}

ad::Var decoder_logits(ad::Tape& t, const ad::Var& x, const DecoderParams& p,
                       const Activation& act, const ad::Var& table, std::size_t n,
                       const ad::Var& bias) {
  if (bias->value.size() != n) {
    throw ShapeError("decoder: output bias has " + std::to_string(bias->value.size()) +
                     " entries for " + std::to_string(n) + " classes");
  }
  const ad::Var h = decoder_mlp(t, x, p, act);
  return ad::add_row(t, ad::matmul_nt(t, h, table, n), bias);
}

std::vector<double> decode_position(std::span<const double> x, const DecoderParams& p,
                                    const Activation& act, const ad::Var& table, std::size_t n,
                                    const ad::Var& bias) {
  ad::Tape t(false);
  const ad::Var in = ad::constant(Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end())));
  const Tensor logits = decoder_logits(t, in, p, act, table, n, bias)->value;
  std::vector<std::uint8_t> all(n, 1);
  return masked_softmax(logits.data(), all);
}

std::vector<double> soft_labels(std::size_t target, std::size_t n, double eps) {
  if (eps < 0.0 || eps >= 1.0) throw ConfigError("soft label epsilon must lie in [0, 1)");
  if (target >= n) throw IndexError("soft label target outside vocabulary");
  if (eps > 0.0 && n < 2) throw ConfigError("soft labels with eps > 0 need at least two classes");
  std::vector<double> y(n, n > 1 ? eps / static_cast<double>(n - 1) : 0.0);
  y[target] = 1.0 - eps;
  return y;
}

double cross_entropy(std::span<const double> p, std::span<const double> y) {
  if (p.size() != y.size()) throw ShapeError("cross_entropy: length mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (y[i] != 0.0) loss -= y[i] * std::log(std::max(p[i], 1e-12));
  }
  return loss;
}

}  // namespace hahe
