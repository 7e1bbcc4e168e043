#include "hahe/numerics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>

#include "hahe/errors.hpp"

namespace hahe {

Activation parse_activation(std::string_view name) {
  if (name == "relu") return {ActivationKind::kRelu};
  if (name == "elu") return {ActivationKind::kElu};
  if (name == "gelu") return {ActivationKind::kGelu};
  if (name == "tanh") return {ActivationKind::kTanh};
  if (name == "leaky_relu") return {ActivationKind::kLeakyRelu, 0.2};
  constexpr std::string_view prefix = "leaky_relu(";
  if (name.starts_with(prefix) && name.ends_with(")")) {
    const std::string inner(name.substr(prefix.size(), name.size() - prefix.size() - 1));
    try {
      std::size_t used = 0;
      const double slope = std::stod(inner, &used);
      if (used == inner.size()) return {ActivationKind::kLeakyRelu, slope};
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string to_string(const Activation& act) {
  switch (act.kind) {
    case ActivationKind::kRelu: return "relu";
    case ActivationKind::kElu: return "elu";
    case ActivationKind::kGelu: return "gelu";
    case ActivationKind::kTanh: return "tanh";
    case ActivationKind::kLeakyRelu:
      if (act.slope == 0.2) return "leaky_relu";
      return "leaky_relu(" + std::to_string(act.slope) + ")";
  }
  return "relu";
}

double activate(const Activation& act, double x) {
  switch (act.kind) {
    case ActivationKind::kRelu: return x > 0.0 ? x : 0.0;
    case ActivationKind::kElu: return x > 0.0 ? x : std::expm1(x);
    case ActivationKind::kGelu: return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
    case ActivationKind::kTanh: return std::tanh(x);
    case ActivationKind::kLeakyRelu: return x > 0.0 ? x : act.slope * x;
  }
  return x;
}

double activate_derivative(const Activation& act, double x) {
  switch (act.kind) {
    case ActivationKind::kRelu: return x > 0.0 ? 1.0 : 0.0;
    case ActivationKind::kElu: return x > 0.0 ? 1.0 : std::exp(x);
    case ActivationKind::kGelu: {
      const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
      return cdf + x * pdf;
    }
    case ActivationKind::kTanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case ActivationKind::kLeakyRelu: return x > 0.0 ? 1.0 : act.slope;
  }
  return 1.0;
}

Tensor activation(const Activation& act, const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = activate(act, x[i]);
  return out;
}

std::vector<double> masked_softmax(std::span<const double> scores,
                                   std::span<const std::uint8_t> valid) {
  if (scores.size() != valid.size()) {
    throw ShapeError("masked_softmax: scores and mask differ in length");
  }
  double peak = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!valid[i]) continue;
    any = true;
    peak = std::max(peak, scores[i]);
  }
  if (!any) throw NumericError("masked_softmax: no valid entry");
  std::vector<double> out(scores.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!valid[i]) continue;
    out[i] = std::exp(scores[i] - peak);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout rate must lie in [0, 1)");
  }
  if (!training || rate == 0.0) return x;
  std::bernoulli_distribution drop(rate);
  const double scale = 1.0 / (1.0 - rate);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = drop(rng) ? 0.0 : x[i] * scale;
  return out;
}

Tensor layer_norm(const Tensor& x, std::span<const double> gain,
                  std::span<const double> bias) {
  const std::size_t d = x.cols();
  if (gain.size() != d || bias.size() != d) {
    throw ShapeError("layer_norm: gain/bias length must equal the last axis");
  }
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto in = x.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    auto o = out.row(r);
    for (std::size_t c = 0; c < d; ++c) o[c] = (in[c] - mean) * inv * gain[c] + bias[c];
  }
  return out;
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double eps) {
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double up = f(probe);
    probe[i] = saved - eps;
    const double down = f(probe);
    probe[i] = saved;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor* const> grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam: parameter and gradient lists differ in length");
  }
  if (first_.empty()) {
    for (const Tensor* p : params) {
      first_.emplace_back(p->shape());
      second_.emplace_back(p->shape());
    }
  }
  if (first_.size() != params.size()) {
    throw ShapeError("adam: parameter list changed between steps");
  }
  ++steps_;
  const AdamOptions& o = options_;
  const double t = static_cast<double>(steps_);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    require_same_shape(p, g, "adam");
    Tensor& m = first_[i];
    Tensor& v = second_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g[j];
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= o.learning_rate * (m_hat / (std::sqrt(v_hat) + o.epsilon) +
                                 o.weight_decay * p[j]);
    }
  }
}

}  // namespace hahe
