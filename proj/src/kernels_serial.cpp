#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "hahe/kernels.hpp"

namespace hahe::kernels::serial {

void gemm(const Gemm& g) {
  for (std::size_t i = 0; i < g.m; ++i) {
    for (std::size_t j = 0; j < g.n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < g.k; ++p) {
        const double a = g.trans_a ? g.a[p * g.m + i] : g.a[i * g.k + p];
        const double b = g.trans_b ? g.b[j * g.k + p] : g.b[p * g.n + j];
        s += a * b;
      }
      double& c = g.c[i * g.n + j];
      c = g.accumulate ? c + s : s;
    }
  }
}

void incidence_attention(const IncidenceAttention& a) {
  const std::size_t head_dim = a.dim / a.heads;
  const std::size_t targets = a.offsets.size() - 1;
  for (std::size_t t = 0; t < targets; ++t) {
    const std::size_t begin = a.offsets[t];
    const std::size_t end = a.offsets[t + 1];
    for (std::size_t h = 0; h < a.heads; ++h) {
      const std::size_t col = h * head_dim;
      double* out = a.out + t * a.dim + col;
      std::fill(out, out + head_dim, 0.0);
      if (begin == end) continue;

      const double* attn_t = a.attn + h * 2 * head_dim;
      const double* attn_s = attn_t + head_dim;
      double target_part = 0.0;
      for (std::size_t c = 0; c < head_dim; ++c) {
        target_part += attn_t[c] * a.target[t * a.dim + col + c];
      }
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t e = begin; e < end; ++e) {
        const std::size_t s = a.members[e];
        double u = target_part;
        for (std::size_t c = 0; c < head_dim; ++c) {
          u += attn_s[c] * a.source[s * a.dim + col + c];
        }
        a.scores[e * a.heads + h] = u;
        const double z = u > 0.0 ? u : a.slope * u;
        a.weights[e * a.heads + h] = z;
        peak = std::max(peak, z);
      }
      double total = 0.0;
      for (std::size_t e = begin; e < end; ++e) {
        double& w = a.weights[e * a.heads + h];
        w = std::exp(w - peak);
        total += w;
      }
      for (std::size_t e = begin; e < end; ++e) {
        double& w = a.weights[e * a.heads + h];
        w /= total;
        const double scale = a.keep ? w * a.keep[e * a.heads + h] : w;
        const double* value = a.values + a.members[e] * a.dim + col;
        for (std::size_t c = 0; c < head_dim; ++c) out[c] += scale * value[c];
      }
    }
  }
}

namespace {

inline double bias_at(const double* table, std::uint8_t type, std::size_t dim,
                      std::size_t index) {
  if (table == nullptr || type >= kBiasedEdgeTypes) return 0.0;
  return table[type * dim + index];
}

}  // namespace

void hetero_attention(const HeteroAttention& a) {
  const std::size_t head_dim = a.dim / a.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const std::size_t len = a.length;
  std::vector<double> gamma(len);
  for (std::size_t b = 0; b < a.batch; ++b) {
    for (std::size_t h = 0; h < a.heads; ++h) {
      const std::size_t col = h * head_dim;
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t qi = b * len + i;
        double* p = a.probs + ((b * a.heads + h) * len + i) * len;
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t kj = b * len + j;
          if (!a.valid[kj]) continue;
          const std::uint8_t t = a.edge_types[qi * len + j];
          double s = 0.0;
          for (std::size_t c = 0; c < head_dim; ++c) {
            const double qv = a.q[qi * a.dim + col + c] + bias_at(a.bias_q, t, a.dim, col + c);
            const double kv = a.k[kj * a.dim + col + c] + bias_at(a.bias_k, t, a.dim, col + c);
            s += qv * kv;
          }
          gamma[j] = s * scale;
          peak = std::max(peak, gamma[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
          if (a.valid[b * len + j]) {
            p[j] = std::exp(gamma[j] - peak);
            total += p[j];
          } else {
            p[j] = 0.0;
          }
        }
        double* out = a.out + qi * a.dim + col;
        std::fill(out, out + head_dim, 0.0);
        if (total == 0.0) continue;
        for (std::size_t j = 0; j < len; ++j) {
          if (p[j] == 0.0 && !a.valid[b * len + j]) continue;
          p[j] /= total;
          const std::size_t vj = b * len + j;
          const std::uint8_t t = a.edge_types[qi * len + j];
          for (std::size_t c = 0; c < head_dim; ++c) {
            out[c] += p[j] * (a.v[vj * a.dim + col + c] +
                              bias_at(a.bias_v, t, a.dim, col + c));
          }
        }
      }
    }
  }
}

}  // namespace hahe::kernels::serial
