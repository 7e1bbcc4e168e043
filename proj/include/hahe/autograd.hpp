#pragma once

// Reverse-mode differentiation over whole tensors. Each op computes its
// value eagerly and, while the tape is recording, registers a closure that
// pushes the output gradient back into its inputs. Tape::backward() replays
// the closures in reverse creation order.
//
// Ops that take index structures (row ids, incidence lists, sequence
// layouts) keep views into them; those structures must outlive the tape.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

#include "hahe/kernels.hpp"
#include "hahe/numerics.hpp"
#include "hahe/tensor.hpp"

namespace hahe::ad {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  bool requires_grad = false;
  std::function<void(const Tensor&)> backward;

  Tensor& grad_buffer();
  void zero_grad() { grad = Tensor(); }
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
Var parameter(Tensor value);

class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }

  // Creates the output node of an op. The closure is attached only when the
  // tape records and at least one input requires a gradient.
  Var make(Tensor value, std::initializer_list<const Var*> inputs,
           std::function<void(const Tensor&)> backward);

  // Seeds d(root)/d(root) = 1 and runs every closure in reverse order.
  void backward(const Var& root);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  bool record_;
  std::vector<Var> nodes_;
};

// Row reference used by gather_rows_from: row `row` of source `source`.
struct RowRef {
  std::uint32_t source;
  std::uint32_t row;
};

Var matmul(Tape& t, const Var& a, const Var& b);
// a * b[0:b_rows]^T
Var matmul_nt(Tape& t, const Var& a, const Var& b, std::size_t b_rows);
Var add(Tape& t, const Var& a, const Var& b);
Var add_row(Tape& t, const Var& x, const Var& bias);
Var scale(Tape& t, const Var& x, double factor);
Var sum(Tape& t, const Var& x);
Var activation(Tape& t, const Var& x, const Activation& act);
Var dropout(Tape& t, const Var& x, double rate, bool training, Rng& rng);
Var layer_norm(Tape& t, const Var& x, const Var& gain, const Var& bias);

Var gather_rows(Tape& t, const Var& table, std::span<const std::int64_t> ids);
Var gather_rows_from(Tape& t, std::vector<Var> sources, std::span<const RowRef> refs);
Var slice_rows(Tape& t, const Var& x, std::size_t begin, std::size_t end);
// out[r] = use_fallback[r] ? fallback[r] : x[r]
Var select_rows(Tape& t, const Var& x, const Var& fallback,
                std::span<const std::uint8_t> use_fallback);

// Row r of the output is x[r] * weights[roles[r]], weights stored
// roles x in x out. Rows whose role id is >= the role count produce zeros.
Var role_linear(Tape& t, const Var& x, const Var& weights,
                std::span<const std::uint8_t> roles);

struct IncidenceAttentionSpec {
  std::span<const std::size_t> offsets;
  std::span<const std::size_t> members;
  std::size_t heads = 1;
  double slope = 0.2;
  double dropout = 0.0;  // applied to the normalized weights
  bool training = false;
};
Var incidence_attention(Tape& t, const Var& target, const Var& source,
                        const Var& values, const Var& attn,
                        const IncidenceAttentionSpec& spec, Rng& rng);

struct HeteroAttentionSpec {
  std::span<const std::uint8_t> edge_types;  // batch x length x length
  std::span<const std::uint8_t> valid;       // batch x length
  std::size_t batch = 0, length = 0, heads = 1;
};
// bias_* may be null to disable the edge-bias terms.
Var hetero_attention(Tape& t, const Var& q, const Var& k, const Var& v,
                     const Var& bias_q, const Var& bias_k, const Var& bias_v,
                     const HeteroAttentionSpec& spec);

// Sum over rows of -sum_c y_rc log softmax(logits_r)_c where y is the soft
// label with 1 - eps on the target and eps / (N - 1) elsewhere.
Var soft_label_cross_entropy(Tape& t, const Var& logits,
                             std::span<const std::int64_t> targets, double eps);

}  // namespace hahe::ad
