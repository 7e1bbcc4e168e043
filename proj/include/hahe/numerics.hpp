#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hahe/tensor.hpp"

namespace hahe {

using Rng = std::mt19937_64;

enum class ActivationKind { kRelu, kElu, kGelu, kTanh, kLeakyRelu };

struct Activation {
  ActivationKind kind = ActivationKind::kRelu;
  double slope = 0.2;  // leaky_relu only

  friend bool operator==(const Activation&, const Activation&) = default;
};

/// Accepts "relu", "elu", "gelu", "tanh", "leaky_relu" and "leaky_relu(<slope>)".
Activation parse_activation(std::string_view name);
std::string to_string(const Activation& act);

double activate(const Activation& act, double x);
double activate_derivative(const Activation& act, double x);
Tensor activation(const Activation& act, const Tensor& x);

/// Softmax restricted to entries with valid[i] != 0. Invalid entries come out
/// as exactly zero. Throws NumericError when no entry is valid.
std::vector<double> masked_softmax(std::span<const double> scores,
                                   std::span<const std::uint8_t> valid);

/// Inverted dropout. Identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);

/// Per-row layer normalization over the last axis with eps = 1e-5.
Tensor layer_norm(const Tensor& x, std::span<const double> gain,
                  std::span<const double> bias);

inline constexpr double kLayerNormEps = 1e-5;

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / 2 eps per coordinate.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double eps = 1e-5);

struct AdamOptions {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

// Adam with decoupled weight decay. Moment buffers are keyed by the position
// of the parameter in the spans passed to step(), so callers must pass the
// same parameter list every time.
class Adam {
 public:
  explicit Adam(AdamOptions options) : options_(options) {}

  void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads);

  const AdamOptions& options() const noexcept { return options_; }
  std::uint64_t steps() const noexcept { return steps_; }

 private:
  AdamOptions options_;
  std::uint64_t steps_ = 0;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
};

}  // namespace hahe
