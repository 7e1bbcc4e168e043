#include "hahe/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hahe/errors.hpp"

namespace hahe::ad {

namespace kp = kernels::parallel;

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape());
  return grad;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

Var Tape::make(Tensor value, std::initializer_list<const Var*> inputs,
               std::function<void(const Tensor&)> backward) {
  auto out = std::make_shared<Node>();
  out->value = std::move(value);
  if (!record_) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Var* v) {
    return *v && (*v)->requires_grad;
  });
  if (needs) {
    out->requires_grad = true;
    out->backward = std::move(backward);
    nodes_.push_back(out);
  }
  return out;
}

void Tape::backward(const Var& root) {
  if (root->value.size() != 1) {
    throw ShapeError("backward root must be a scalar, got " +
                     shape_string(root->value.shape()));
  }
  if (!root->requires_grad) return;
  root->grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.backward && !n.grad.empty()) n.backward(n.grad);
  }
}

namespace {

bool wants(const Var& v) { return v && v->requires_grad; }

void require_matrix_cols(const Tensor& t, std::size_t cols, const char* what) {
  if (t.cols() != cols) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(cols) +
                     " columns, got shape " + shape_string(t.shape()));
  }
}

}  // namespace

Var matmul(Tape& t, const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (bv.rank() != 2 || av.cols() != bv.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_string(av.shape()) +
                     " * " + shape_string(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.dim(1);
  Tensor out({m, n});
  kp::gemm({false, false, m, n, k, av.ptr(), bv.ptr(), out.ptr(), false});
  return t.make(std::move(out), {&a, &b}, [a, b, m, n, k](const Tensor& g) {
    if (wants(a)) {
      kp::gemm({false, true, m, k, n, g.ptr(), b->value.ptr(), a->grad_buffer().ptr(), true});
    }
    if (wants(b)) {
      kp::gemm({true, false, k, n, m, a->value.ptr(), g.ptr(), b->grad_buffer().ptr(), true});
    }
  });
}

Var matmul_nt(Tape& t, const Var& a, const Var& b, std::size_t b_rows) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.cols() != bv.cols() || b_rows > bv.rows()) {
    throw ShapeError("matmul_nt: incompatible shapes " + shape_string(av.shape()) +
                     " and " + shape_string(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = b_rows;
  Tensor out({m, n});
  kp::gemm({false, true, m, n, k, av.ptr(), bv.ptr(), out.ptr(), false});
  return t.make(std::move(out), {&a, &b}, [a, b, m, n, k](const Tensor& g) {
    if (wants(a)) {
      kp::gemm({false, false, m, k, n, g.ptr(), b->value.ptr(), a->grad_buffer().ptr(), true});
    }
    if (wants(b)) {
      kp::gemm({true, false, n, k, m, g.ptr(), a->value.ptr(), b->grad_buffer().ptr(), true});
    }
  });
}

Var add(Tape& t, const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return t.make(std::move(out), {&a, &b}, [a, b](const Tensor& g) {
    for (const Var* v : {&a, &b}) {
      if (!wants(*v)) continue;
      Tensor& dst = (*v)->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  });
}

Var add_row(Tape& t, const Var& x, const Var& bias) {
  const std::size_t d = x->value.cols();
  if (bias->value.size() != d) throw ShapeError("add_row: bias length mismatch");
  Tensor out = x->value;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < d; ++c) row[c] += bias->value[c];
  }
  return t.make(std::move(out), {&x, &bias}, [x, bias, d](const Tensor& g) {
    if (wants(x)) {
      Tensor& dx = x->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    }
    if (wants(bias)) {
      Tensor& db = bias->grad_buffer();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < d; ++c) db[c] += g.at(r, c);
      }
    }
  });
}

Var scale(Tape& t, const Var& x, double factor) {
  Tensor out = x->value;
  for (double& v : out.data()) v *= factor;
  return t.make(std::move(out), {&x}, [x, factor](const Tensor& g) {
    Tensor& dx = x->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += factor * g[i];
  });
}

Var sum(Tape& t, const Var& x) {
  double total = 0.0;
  for (double v : x->value.data()) total += v;
  return t.make(Tensor({1}, total), {&x}, [x](const Tensor& g) {
    Tensor& dx = x->grad_buffer();
    for (double& v : dx.data()) v += g[0];
  });
}

Var activation(Tape& t, const Var& x, const Activation& act) {
  Tensor out(x->value.shape());
  const auto n = static_cast<std::ptrdiff_t>(out.size());
  const double* in = x->value.ptr();
  double* o = out.ptr();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) o[i] = activate(act, in[i]);
  return t.make(std::move(out), {&x}, [x, act](const Tensor& g) {
    Tensor& dx = x->grad_buffer();
    const auto n = static_cast<std::ptrdiff_t>(g.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      dx[i] += g[i] * activate_derivative(act, x->value[i]);
    }
  });
}

Var dropout(Tape& t, const Var& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  std::bernoulli_distribution drop(rate);
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x->value.size());
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = drop(rng) ? 0.0 : keep_scale;
    out[i] = x->value[i] * (*mask)[i];
  }
  return t.make(std::move(out), {&x}, [x, mask](const Tensor& g) {
    Tensor& dx = x->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (*mask)[i];
  });
}

Var layer_norm(Tape& t, const Var& x, const Var& gain, const Var& bias) {
  const std::size_t d = x->value.cols();
  if (gain->value.size() != d || bias->value.size() != d) {
    throw ShapeError("layer_norm: gain/bias length must equal the last axis");
  }
  const std::size_t rows = x->value.rows();
  auto normalized = std::make_shared<Tensor>(x->value.shape());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Tensor out(x->value.shape());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
    const auto in = x->value.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    (*inv_std)[r] = inv;
    auto xh = normalized->row(r);
    auto o = out.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      xh[c] = (in[c] - mean) * inv;
      o[c] = xh[c] * gain->value[c] + bias->value[c];
    }
  }
  return t.make(std::move(out), {&x, &gain, &bias},
                [x, gain, bias, normalized, inv_std, d, rows](const Tensor& g) {
    if (wants(gain) || wants(bias)) {
      Tensor* dg = wants(gain) ? &gain->grad_buffer() : nullptr;
      Tensor* db = wants(bias) ? &bias->grad_buffer() : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
          if (dg) (*dg)[c] += g.at(r, c) * normalized->at(r, c);
          if (db) (*db)[c] += g.at(r, c);
        }
      }
    }
    if (!wants(x)) return;
    Tensor& dx = x->grad_buffer();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
      double mean_dxh = 0.0, mean_dxh_xh = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double dxh = g.at(r, c) * gain->value[c];
        mean_dxh += dxh;
        mean_dxh_xh += dxh * normalized->at(r, c);
      }
      mean_dxh /= static_cast<double>(d);
      mean_dxh_xh /= static_cast<double>(d);
      for (std::size_t c = 0; c < d; ++c) {
        const double dxh = g.at(r, c) * gain->value[c];
        dx.at(r, c) += (*inv_std)[r] * (dxh - mean_dxh - normalized->at(r, c) * mean_dxh_xh);
      }
    }
  });
}

Var gather_rows(Tape& t, const Var& table, std::span<const std::int64_t> ids) {
  const std::size_t d = table->value.cols();
  const std::size_t rows = table->value.rows();
  Tensor out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= rows) {
      throw IndexError("gather_rows: id " + std::to_string(ids[r]) + " outside table of " +
                       std::to_string(rows) + " rows");
    }
    std::copy_n(table->value.row(ids[r]).begin(), d, out.row(r).begin());
  }
  return t.make(std::move(out), {&table}, [table, ids, d](const Tensor& g) {
    Tensor& dt = table->grad_buffer();
    for (std::size_t r = 0; r < ids.size(); ++r) {
      auto dst = dt.row(ids[r]);
      for (std::size_t c = 0; c < d; ++c) dst[c] += g.at(r, c);
    }
  });
}

Var gather_rows_from(Tape& t, std::vector<Var> sources, std::span<const RowRef> refs) {
  if (sources.empty()) throw ShapeError("gather_rows_from: no sources");
  const std::size_t d = sources.front()->value.cols();
  for (const Var& s : sources) require_matrix_cols(s->value, d, "gather_rows_from");
  Tensor out({refs.size(), d});
  for (std::size_t r = 0; r < refs.size(); ++r) {
    if (refs[r].source >= sources.size() ||
        refs[r].row >= sources[refs[r].source]->value.rows()) {
      throw IndexError("gather_rows_from: reference out of range");
    }
    const auto src = sources[refs[r].source]->value.row(refs[r].row);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  bool needs = false;
  for (const Var& s : sources) needs = needs || wants(s);
  Var any = needs ? *std::find_if(sources.begin(), sources.end(), wants) : sources.front();
  return t.make(std::move(out), {&any}, [sources, refs, d](const Tensor& g) {
    for (std::size_t r = 0; r < refs.size(); ++r) {
      const Var& s = sources[refs[r].source];
      if (!wants(s)) continue;
      auto dst = s->grad_buffer().row(refs[r].row);
      for (std::size_t c = 0; c < d; ++c) dst[c] += g.at(r, c);
    }
  });
}

Var slice_rows(Tape& t, const Var& x, std::size_t begin, std::size_t end) {
  const std::size_t d = x->value.cols();
  if (begin > end || end > x->value.rows()) throw IndexError("slice_rows: bad range");
  Tensor out({end - begin, d});
  std::copy_n(x->value.ptr() + begin * d, (end - begin) * d, out.ptr());
  return t.make(std::move(out), {&x}, [x, begin, d](const Tensor& g) {
    Tensor& dx = x->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) dx[begin * d + i] += g[i];
  });
}

Var select_rows(Tape& t, const Var& x, const Var& fallback,
                std::span<const std::uint8_t> use_fallback) {
  require_same_shape(x->value, fallback->value, "select_rows");
  const std::size_t d = x->value.cols();
  if (use_fallback.size() != x->value.rows()) throw ShapeError("select_rows: mask length");
  Tensor out = x->value;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    if (use_fallback[r]) std::copy_n(fallback->value.row(r).begin(), d, out.row(r).begin());
  }
  return t.make(std::move(out), {&x, &fallback}, [x, fallback, use_fallback, d](const Tensor& g) {
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const Var& dst = use_fallback[r] ? fallback : x;
      if (!wants(dst)) continue;
      auto row = dst->grad_buffer().row(r);
      for (std::size_t c = 0; c < d; ++c) row[c] += g.at(r, c);
    }
  });
}

Var role_linear(Tape& t, const Var& x, const Var& weights,
                std::span<const std::uint8_t> roles) {
  const Tensor& w = weights->value;
  if (w.rank() != 3 || w.dim(1) != x->value.cols()) {
    throw ShapeError("role_linear: weights must be roles x in x out, got " +
                     shape_string(w.shape()));
  }
  const std::size_t n = x->value.rows(), din = w.dim(1), dout = w.dim(2), nroles = w.dim(0);
  if (roles.size() != n) throw ShapeError("role_linear: one role per row required");
  Tensor out({n, dout});
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(n); ++r) {
    if (roles[r] >= nroles) continue;
    const double* wr = w.ptr() + roles[r] * din * dout;
    const double* xr = x->value.ptr() + r * din;
    double* o = out.ptr() + r * dout;
    for (std::size_t p = 0; p < din; ++p) {
      const double xv = xr[p];
      const double* wrow = wr + p * dout;
      for (std::size_t c = 0; c < dout; ++c) o[c] += xv * wrow[c];
    }
  }
  return t.make(std::move(out), {&x, &weights},
                [x, weights, roles, n, din, dout, nroles](const Tensor& g) {
    const Tensor& w = weights->value;
    if (wants(x)) {
      Tensor& dx = x->grad_buffer();
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(n); ++r) {
        if (roles[r] >= nroles) continue;
        const double* wr = w.ptr() + roles[r] * din * dout;
        const double* gr = g.ptr() + r * dout;
        for (std::size_t p = 0; p < din; ++p) {
          double s = 0.0;
          for (std::size_t c = 0; c < dout; ++c) s += gr[c] * wr[p * dout + c];
          dx.at(r, p) += s;
        }
      }
    }
    if (wants(weights)) {
      Tensor& dw = weights->grad_buffer();
      const auto jobs = static_cast<std::ptrdiff_t>(nroles * din);
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t job = 0; job < jobs; ++job) {
        const std::size_t role = job / din, p = job % din;
        double* dst = dw.ptr() + (role * din + p) * dout;
        for (std::size_t r = 0; r < n; ++r) {
          if (roles[r] != role) continue;
          const double xv = x->value.at(r, p);
          const double* gr = g.ptr() + r * dout;
          for (std::size_t c = 0; c < dout; ++c) dst[c] += xv * gr[c];
        }
      }
    }
  });
}

Var incidence_attention(Tape& t, const Var& target, const Var& source,
                        const Var& values, const Var& attn,
                        const IncidenceAttentionSpec& spec, Rng& rng) {
  const std::size_t dim = target->value.cols();
  require_matrix_cols(source->value, dim, "incidence_attention source");
  require_matrix_cols(values->value, dim, "incidence_attention values");
  if (spec.heads == 0 || dim % spec.heads != 0) {
    throw ShapeError("incidence_attention: width not divisible by head count");
  }
  if (attn->value.size() != spec.heads * 2 * (dim / spec.heads)) {
    throw ShapeError("incidence_attention: attention vector size mismatch");
  }
  if (spec.offsets.size() != target->value.rows() + 1) {
    throw ShapeError("incidence_attention: offsets must have one entry per target plus one");
  }
  if (spec.dropout < 0.0 || spec.dropout >= 1.0) {
    throw ConfigError("dropout rate must lie in [0, 1)");
  }
  const std::size_t nnz = spec.members.size();
  struct State {
    kernels::IncidenceAttention args;
    std::vector<double> weights, scores, keep;
  };
  auto st = std::make_shared<State>();
  st->weights.resize(nnz * spec.heads);
  st->scores.resize(nnz * spec.heads);
  if (spec.training && spec.dropout > 0.0) {
    std::bernoulli_distribution drop(spec.dropout);
    const double keep_scale = 1.0 / (1.0 - spec.dropout);
    st->keep.resize(nnz * spec.heads);
    for (double& k : st->keep) k = drop(rng) ? 0.0 : keep_scale;
  }
  Tensor out({target->value.rows(), dim});
  kernels::IncidenceAttention& a = st->args;
  a.target = target->value.ptr();
  a.source = source->value.ptr();
  a.values = values->value.ptr();
  a.attn = attn->value.ptr();
  a.offsets = spec.offsets;
  a.members = spec.members;
  a.dim = dim;
  a.heads = spec.heads;
  a.slope = spec.slope;
  a.keep = st->keep.empty() ? nullptr : st->keep.data();
  a.out = out.ptr();
  a.weights = st->weights.data();
  a.scores = st->scores.data();
  kp::incidence_attention(a);
  a.out = nullptr;
  return t.make(std::move(out), {&target, &source, &values, &attn},
                [st, target, source, values, attn](const Tensor& g) {
    kernels::IncidenceAttentionGrad grad;
    grad.fwd = &st->args;
    grad.d_out = g.ptr();
    // The same node may be passed as several inputs; grad_buffer() hands
    // back the shared buffer in that case, which is what accumulation needs.
    grad.d_target = wants(target) ? target->grad_buffer().ptr() : nullptr;
    grad.d_source = wants(source) ? source->grad_buffer().ptr() : nullptr;
    grad.d_values = wants(values) ? values->grad_buffer().ptr() : nullptr;
    grad.d_attn = wants(attn) ? attn->grad_buffer().ptr() : nullptr;
    kernels::incidence_attention_backward(grad);
  });
}

Var hetero_attention(Tape& t, const Var& q, const Var& k, const Var& v,
                     const Var& bias_q, const Var& bias_k, const Var& bias_v,
                     const HeteroAttentionSpec& spec) {
  const std::size_t dim = q->value.cols();
  const std::size_t rows = spec.batch * spec.length;
  for (const Var* x : {&q, &k, &v}) {
    if ((*x)->value.rows() != rows || (*x)->value.cols() != dim) {
      throw ShapeError("hetero_attention: q/k/v must be (batch*length) x dim");
    }
  }
  for (const Var* b : {&bias_q, &bias_k, &bias_v}) {
    if (*b && (*b)->value.size() != kernels::kBiasedEdgeTypes * dim) {
      throw ShapeError("hetero_attention: edge bias tables must be 14 x dim");
    }
  }
  if (spec.heads == 0 || dim % spec.heads != 0) {
    throw ShapeError("hetero_attention: width not divisible by head count");
  }
  if (spec.edge_types.size() != rows * spec.length || spec.valid.size() != rows) {
    throw ShapeError("hetero_attention: layout does not match batch shape");
  }
  struct State {
    kernels::HeteroAttention args;
    std::vector<double> probs;
  };
  auto st = std::make_shared<State>();
  st->probs.resize(spec.batch * spec.heads * spec.length * spec.length);
  Tensor out({rows, dim});
  kernels::HeteroAttention& a = st->args;
  a.q = q->value.ptr();
  a.k = k->value.ptr();
  a.v = v->value.ptr();
  a.bias_q = bias_q ? bias_q->value.ptr() : nullptr;
  a.bias_k = bias_k ? bias_k->value.ptr() : nullptr;
  a.bias_v = bias_v ? bias_v->value.ptr() : nullptr;
  a.edge_types = spec.edge_types.data();
  a.valid = spec.valid.data();
  a.batch = spec.batch;
  a.length = spec.length;
  a.dim = dim;
  a.heads = spec.heads;
  a.out = out.ptr();
  a.probs = st->probs.data();
  kp::hetero_attention(a);
  a.out = nullptr;
  return t.make(std::move(out), {&q, &k, &v, &bias_q, &bias_k, &bias_v},
                [st, q, k, v, bias_q, bias_k, bias_v](const Tensor& g) {
    kernels::HeteroAttentionGrad grad;
    grad.fwd = &st->args;
    grad.d_out = g.ptr();
    grad.d_q = wants(q) ? q->grad_buffer().ptr() : nullptr;
    grad.d_k = wants(k) ? k->grad_buffer().ptr() : nullptr;
    grad.d_v = wants(v) ? v->grad_buffer().ptr() : nullptr;
    grad.d_bias_q = wants(bias_q) ? bias_q->grad_buffer().ptr() : nullptr;
    grad.d_bias_k = wants(bias_k) ? bias_k->grad_buffer().ptr() : nullptr;
    grad.d_bias_v = wants(bias_v) ? bias_v->grad_buffer().ptr() : nullptr;
    kernels::hetero_attention_backward(grad);
  });
}

Var soft_label_cross_entropy(Tape& t, const Var& logits,
                             std::span<const std::int64_t> targets, double eps) {
  const std::size_t rows = logits->value.rows(), n = logits->value.cols();
  if (targets.size() != rows) throw ShapeError("cross entropy: one target per row");
  if (eps < 0.0 || eps >= 1.0) throw ConfigError("soft label epsilon must lie in [0, 1)");
  if (eps > 0.0 && n < 2) throw ConfigError("soft labels with eps > 0 need at least two classes");
  const double off = n > 1 ? eps / static_cast<double>(n - 1) : 0.0;
  auto probs = std::make_shared<Tensor>(logits->value.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= n) {
      throw IndexError("cross entropy: target outside vocabulary");
    }
    const auto z = logits->value.row(r);
    const double peak = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - peak);
    const double lse = peak + std::log(s);
    auto p = probs->row(r);
    double loss = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double logp = z[c] - lse;
      p[c] = std::exp(logp);
      const double y = static_cast<std::int64_t>(c) == targets[r] ? 1.0 - eps : off;
      if (y != 0.0) loss -= y * logp;
    }
    total += loss;
  }
  return t.make(Tensor({1}, total), {&logits},
                [logits, probs, targets, eps, off, n](const Tensor& g) {
    Tensor& dz = logits->grad_buffer();
    for (std::size_t r = 0; r < probs->rows(); ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        const double y = static_cast<std::int64_t>(c) == targets[r] ? 1.0 - eps : off;
        dz.at(r, c) += g[0] * (probs->at(r, c) - y);
      }
    }
  });
}

}  // namespace hahe::ad
