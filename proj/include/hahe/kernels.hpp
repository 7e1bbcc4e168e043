#pragma once

// Compute kernels behind the autograd ops. Every forward kernel exists twice:
// a plain serial reference in kernels::serial and an OpenMP version in
// kernels::parallel. The parallel versions partition work by output element,
// so their results do not depend on the thread count. Tests pin the two
// against each other and bench/kernels_bench.cpp compares their speed.

#include <cstddef>
#include <cstdint>
#include <span>

namespace hahe::kernels {

// Number of edge types that carry trainable bias rows. Edge type ids at or
// above this value (the padding sentinel) contribute a zero bias.
inline constexpr std::size_t kBiasedEdgeTypes = 14;

// C (m x n) = op(A) * op(B), where op(A) is m x k and op(B) is k x n.
// With trans_a the buffer A is stored k x m, with trans_b B is stored n x k.
struct Gemm {
  bool trans_a = false;
  bool trans_b = false;
  std::size_t m = 0, n = 0, k = 0;
  const double* a = nullptr;
  const double* b = nullptr;
  double* c = nullptr;
  bool accumulate = false;
};

// Attention of each target over its member sources, one score network per
// head: u = attn_t . target[h] + attn_s . source[h], weight = softmax over the
// group of leaky_relu(u), out[h] = sum weight * keep * values[h].
struct IncidenceAttention {
  const double* target = nullptr;  // n_targets x dim
  const double* source = nullptr;  // n_sources x dim
  const double* values = nullptr;  // n_sources x dim
  const double* attn = nullptr;    // heads x 2*(dim/heads), target half first
  std::span<const std::size_t> offsets;  // n_targets + 1
  std::span<const std::size_t> members;  // source index per incidence entry
  std::size_t dim = 0;
  std::size_t heads = 1;
  double slope = 0.2;
  const double* keep = nullptr;  // optional nnz x heads dropout multipliers

  double* out = nullptr;      // n_targets x dim
  double* weights = nullptr;  // nnz x heads, softmax weights before dropout
  double* scores = nullptr;   // nnz x heads, u before leaky_relu
};

// Multi-head attention over padded sequences with role-projected q/k/v and
// per-edge-type additive biases.
//   gamma_ij = (q_i + bq_t) . (k_j + bk_t) / sqrt(head_dim),  t = type(i, j)
//   out_i    = sum_j softmax_j(gamma_ij) (v_j + bv_t)
// Keys that are not valid get weight zero.
struct HeteroAttention {
  const double* q = nullptr;  // (batch*length) x dim
  const double* k = nullptr;
  const double* v = nullptr;
  const double* bias_q = nullptr;  // kBiasedEdgeTypes x dim, or null
  const double* bias_k = nullptr;
  const double* bias_v = nullptr;
  const std::uint8_t* edge_types = nullptr;  // batch x length x length
  const std::uint8_t* valid = nullptr;       // batch x length
  std::size_t batch = 0, length = 0, dim = 0, heads = 1;

  double* out = nullptr;    // (batch*length) x dim
  double* probs = nullptr;  // batch x heads x length x length
};

namespace serial {
void gemm(const Gemm& g);
void incidence_attention(const IncidenceAttention& a);
void hetero_attention(const HeteroAttention& a);
}  // namespace serial

namespace parallel {
void gemm(const Gemm& g);
void incidence_attention(const IncidenceAttention& a);
void hetero_attention(const HeteroAttention& a);
}  // namespace parallel

// Gradients of incidence_attention. All gradient buffers accumulate; any of
// them may be null when the corresponding input needs no gradient.
struct IncidenceAttentionGrad {
  const IncidenceAttention* fwd = nullptr;  // forward arguments and saved state
  const double* d_out = nullptr;
  double* d_target = nullptr;
  double* d_source = nullptr;
  double* d_values = nullptr;
  double* d_attn = nullptr;
};
void incidence_attention_backward(const IncidenceAttentionGrad& g);

struct HeteroAttentionGrad {
  const HeteroAttention* fwd = nullptr;
  const double* d_out = nullptr;
  double* d_q = nullptr;
  double* d_k = nullptr;
  double* d_v = nullptr;
  double* d_bias_q = nullptr;
  double* d_bias_k = nullptr;
  double* d_bias_v = nullptr;
};
void hetero_attention_backward(const HeteroAttentionGrad& g);

// Thread control for the parallel kernels. set_threads(1) gives the
// single-threaded mode used by reproducibility tests.
void set_threads(int threads);
int max_threads();

}  // namespace hahe::kernels
