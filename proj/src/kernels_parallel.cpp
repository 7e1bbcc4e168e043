#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "hahe/kernels.hpp"

namespace hahe::kernels {

void set_threads(int threads) { omp_set_num_threads(std::max(1, threads)); }

int max_threads() { return omp_get_max_threads(); }

namespace {

inline const double* bias_row(const double* table, std::uint8_t type,
                              std::size_t dim) {
  if (table == nullptr || type >= kBiasedEdgeTypes) return nullptr;
  return table + type * dim;
}

}  // namespace

namespace parallel {

void gemm(const Gemm& g) {
  const auto m = static_cast<std::ptrdiff_t>(g.m);
  if (g.trans_b) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < g.n; ++j) {
        const double* brow = g.b + j * g.k;
        double s = 0.0;
        if (g.trans_a) {
          for (std::size_t p = 0; p < g.k; ++p) s += g.a[p * g.m + i] * brow[p];
        } else {
          const double* arow = g.a + i * g.k;
          for (std::size_t p = 0; p < g.k; ++p) s += arow[p] * brow[p];
        }
        double& c = g.c[i * g.n + j];
        c = g.accumulate ? c + s : s;
      }
    }
    return;
  }
#pragma omp parallel
  {
    std::vector<double> acc(g.n);
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < m; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t p = 0; p < g.k; ++p) {
        const double a = g.trans_a ? g.a[p * g.m + i] : g.a[i * g.k + p];
        const double* brow = g.b + p * g.n;
        for (std::size_t j = 0; j < g.n; ++j) acc[j] += a * brow[j];
      }
      double* crow = g.c + i * g.n;
      if (g.accumulate) {
        for (std::size_t j = 0; j < g.n; ++j) crow[j] += acc[j];
      } else {
        std::copy(acc.begin(), acc.end(), crow);
      }
    }
  }
}

void incidence_attention(const IncidenceAttention& a) {
  const std::size_t head_dim = a.dim / a.heads;
  const auto targets = static_cast<std::ptrdiff_t>(a.offsets.size() - 1);

  // Source halves of the score network are shared by every group the source
  // belongs to, so they are computed once up front.
  std::size_t sources = 0;
  for (std::size_t s : a.members) sources = std::max(sources, s + 1);
  std::vector<double> source_part(sources * a.heads);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(sources); ++s) {
    for (std::size_t h = 0; h < a.heads; ++h) {
      const double* attn_s = a.attn + h * 2 * head_dim + head_dim;
      const double* src = a.source + s * a.dim + h * head_dim;
      double acc = 0.0;
      for (std::size_t c = 0; c < head_dim; ++c) acc += attn_s[c] * src[c];
      source_part[s * a.heads + h] = acc;
    }
  }

#pragma omp parallel for schedule(dynamic, 64)
  for (std::ptrdiff_t t = 0; t < targets; ++t) {
    const std::size_t begin = a.offsets[t];
    const std::size_t end = a.offsets[t + 1];
    for (std::size_t h = 0; h < a.heads; ++h) {
      const std::size_t col = h * head_dim;
      double* out = a.out + t * a.dim + col;
      std::fill(out, out + head_dim, 0.0);
      if (begin == end) continue;
      const double* attn_t = a.attn + h * 2 * head_dim;
      double target_part = 0.0;
      for (std::size_t c = 0; c < head_dim; ++c) {
        target_part += attn_t[c] * a.target[t * a.dim + col + c];
      }
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t e = begin; e < end; ++e) {
        const double u = target_part + source_part[a.members[e] * a.heads + h];
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

void hetero_attention(const HeteroAttention& a) {
  const std::size_t head_dim = a.dim / a.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const std::size_t len = a.length;
  const auto jobs = static_cast<std::ptrdiff_t>(a.batch * a.heads);
#pragma omp parallel
  {
    std::vector<double> qb(head_dim);
#pragma omp for schedule(static)
    for (std::ptrdiff_t job = 0; job < jobs; ++job) {
      const std::size_t b = job / a.heads;
      const std::size_t h = job % a.heads;
      const std::size_t col = h * head_dim;
      const std::uint8_t* valid = a.valid + b * len;
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t qi = b * len + i;
        const std::uint8_t* types = a.edge_types + qi * len;
        double* p = a.probs + ((b * a.heads + h) * len + i) * len;
        double* out = a.out + qi * a.dim + col;
        std::fill(out, out + head_dim, 0.0);
        double peak = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::size_t j = 0; j < len; ++j) {
          p[j] = 0.0;
          if (!valid[j]) continue;
          any = true;
          const double* bq = bias_row(a.bias_q, types[j], a.dim);
          const double* bk = bias_row(a.bias_k, types[j], a.dim);
          const double* qrow = a.q + qi * a.dim + col;
          const double* krow = a.k + (b * len + j) * a.dim + col;
          double s = 0.0;
          for (std::size_t c = 0; c < head_dim; ++c) {
            const double qv = qrow[c] + (bq ? bq[col + c] : 0.0);
            const double kv = krow[c] + (bk ? bk[col + c] : 0.0);
            s += qv * kv;
          }
          p[j] = s * scale;
          peak = std::max(peak, p[j]);
        }
        if (!any) continue;
        double total = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
          if (!valid[j]) continue;
          p[j] = std::exp(p[j] - peak);
          total += p[j];
        }
        for (std::size_t j = 0; j < len; ++j) {
          if (!valid[j]) continue;
          p[j] /= total;
          const double* bv = bias_row(a.bias_v, types[j], a.dim);
          const double* vrow = a.v + (b * len + j) * a.dim + col;
          for (std::size_t c = 0; c < head_dim; ++c) {
            out[c] += p[j] * (vrow[c] + (bv ? bv[col + c] : 0.0));
          }
        }
      }
    }
  }
}

}  // namespace parallel

// Backward passes split work by head: every head owns a disjoint column slice
// of each gradient buffer, so accumulation is race free and deterministic.

void incidence_attention_backward(const IncidenceAttentionGrad& g) {
  const IncidenceAttention& a = *g.fwd;
  const std::size_t head_dim = a.dim / a.heads;
  const std::size_t targets = a.offsets.size() - 1;
  const auto heads = static_cast<std::ptrdiff_t>(a.heads);
#pragma omp parallel
  {
    std::vector<double> du;
#pragma omp for schedule(static)
    for (std::ptrdiff_t h = 0; h < heads; ++h) {
      const std::size_t col = h * head_dim;
      const double* attn_t = a.attn + h * 2 * head_dim;
      const double* attn_s = attn_t + head_dim;
      double* d_attn_t = g.d_attn ? g.d_attn + h * 2 * head_dim : nullptr;
      double* d_attn_s = d_attn_t ? d_attn_t + head_dim : nullptr;
      for (std::size_t t = 0; t < targets; ++t) {
        const std::size_t begin = a.offsets[t];
        const std::size_t end = a.offsets[t + 1];
        if (begin == end) continue;
        const double* dout = g.d_out + t * a.dim + col;
        du.assign(end - begin, 0.0);
        double dot = 0.0;
        for (std::size_t e = begin; e < end; ++e) {
          const std::size_t s = a.members[e];
          const double w = a.weights[e * a.heads + h];
          const double keep = a.keep ? a.keep[e * a.heads + h] : 1.0;
          const double* value = a.values + s * a.dim + col;
          double dw = 0.0;
          for (std::size_t c = 0; c < head_dim; ++c) dw += dout[c] * value[c];
          dw *= keep;
          du[e - begin] = dw;
          dot += w * dw;
          if (g.d_values) {
            double* dv = g.d_values + s * a.dim + col;
            for (std::size_t c = 0; c < head_dim; ++c) dv[c] += w * keep * dout[c];
          }
        }
        double du_total = 0.0;
        for (std::size_t e = begin; e < end; ++e) {
          const double w = a.weights[e * a.heads + h];
          const double u = a.scores[e * a.heads + h];
          double& d = du[e - begin];
          d = w * (d - dot) * (u > 0.0 ? 1.0 : a.slope);
          du_total += d;
          const std::size_t s = a.members[e];
          if (g.d_source) {
            double* ds = g.d_source + s * a.dim + col;
            for (std::size_t c = 0; c < head_dim; ++c) ds[c] += d * attn_s[c];
          }
          if (d_attn_s) {
            const double* src = a.source + s * a.dim + col;
            for (std::size_t c = 0; c < head_dim; ++c) d_attn_s[c] += d * src[c];
          }
        }
        if (g.d_target) {
          double* dt = g.d_target + t * a.dim + col;
          for (std::size_t c = 0; c < head_dim; ++c) dt[c] += du_total * attn_t[c];
        }
        if (d_attn_t) {
          const double* tgt = a.target + t * a.dim + col;
          for (std::size_t c = 0; c < head_dim; ++c) d_attn_t[c] += du_total * tgt[c];
        }
      }
    }
  }
}

void hetero_attention_backward(const HeteroAttentionGrad& g) {
  const HeteroAttention& a = *g.fwd;
  const std::size_t head_dim = a.dim / a.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const std::size_t len = a.length;
  const auto heads = static_cast<std::ptrdiff_t>(a.heads);
#pragma omp parallel
  {
    std::vector<double> dp(len);
#pragma omp for schedule(static)
    for (std::ptrdiff_t h = 0; h < heads; ++h) {
      const std::size_t col = h * head_dim;
      for (std::size_t b = 0; b < a.batch; ++b) {
        const std::uint8_t* valid = a.valid + b * len;
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t qi = b * len + i;
          const std::uint8_t* types = a.edge_types + qi * len;
          const double* p = a.probs + ((b * a.heads + h) * len + i) * len;
          const double* dout = g.d_out + qi * a.dim + col;
          double dot = 0.0;
          for (std::size_t j = 0; j < len; ++j) {
            dp[j] = 0.0;
            if (!valid[j]) continue;
            const std::size_t vj = b * len + j;
            const double* bv = bias_row(a.bias_v, types[j], a.dim);
            const double* vrow = a.v + vj * a.dim + col;
            double s = 0.0;
            for (std::size_t c = 0; c < head_dim; ++c) {
              s += dout[c] * (vrow[c] + (bv ? bv[col + c] : 0.0));
            }
            dp[j] = s;
            dot += p[j] * s;
            if (g.d_v) {
              double* dv = g.d_v + vj * a.dim + col;
              for (std::size_t c = 0; c < head_dim; ++c) dv[c] += p[j] * dout[c];
            }
            if (g.d_bias_v && types[j] < kBiasedEdgeTypes) {
              double* dbv = g.d_bias_v + types[j] * a.dim + col;
              for (std::size_t c = 0; c < head_dim; ++c) dbv[c] += p[j] * dout[c];
            }
          }
          const double* qrow = a.q + qi * a.dim + col;
          for (std::size_t j = 0; j < len; ++j) {
            if (!valid[j]) continue;
            const double dg = p[j] * (dp[j] - dot) * scale;
            if (dg == 0.0) continue;
            const std::size_t kj = b * len + j;
            const double* krow = a.k + kj * a.dim + col;
            const double* bq = bias_row(a.bias_q, types[j], a.dim);
            const double* bk = bias_row(a.bias_k, types[j], a.dim);
            const bool typed = types[j] < kBiasedEdgeTypes;
            for (std::size_t c = 0; c < head_dim; ++c) {
              const double kv = krow[c] + (bk ? bk[col + c] : 0.0);
              const double qv = qrow[c] + (bq ? bq[col + c] : 0.0);
              if (g.d_q) g.d_q[qi * a.dim + col + c] += dg * kv;
              if (g.d_k) g.d_k[kj * a.dim + col + c] += dg * qv;
              if (typed && g.d_bias_q) g.d_bias_q[types[j] * a.dim + col + c] += dg * kv;
              if (typed && g.d_bias_k) g.d_bias_k[types[j] * a.dim + col + c] += dg * qv;
            }
          }
        }
      }
    }
  }
}

}  // namespace hahe::kernels
