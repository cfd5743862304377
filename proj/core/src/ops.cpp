#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "textldm/tensor.hpp"

#ifdef TEXTLDM_USE_CBLAS
#include <cblas.h>
#endif

namespace tldm {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

// ---------------------------------------------------------------------------
// sgemm kernel: C = alpha * op(A) * op(B) + beta * C, row-major.
// ---------------------------------------------------------------------------

void sgemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
           float alpha, const float* a, std::int64_t lda, const float* b, std::int64_t ldb,
           float beta, float* c, std::int64_t ldc) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (beta == 0.0f) {
      for (std::int64_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, 0.0f);
    } else if (beta != 1.0f) {
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) c[i * ldc + j] *= beta;
    }
    return;
  }
#ifdef TEXTLDM_USE_CBLAS
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<blasint>(m),
              static_cast<blasint>(n), static_cast<blasint>(k), alpha, a,
              static_cast<blasint>(lda), b, static_cast<blasint>(ldb), beta, c,
              static_cast<blasint>(ldc));
#else
  auto at = [&](std::int64_t i, std::int64_t p) { return trans_a ? a[p * lda + i] : a[i * lda + p]; };
  auto bt = [&](std::int64_t p, std::int64_t j) { return trans_b ? b[j * ldb + p] : b[p * ldb + j]; };
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t p = 0; p < k; ++p) acc += double(at(i, p)) * double(bt(p, j));
      float& dst = c[i * ldc + j];
      dst = alpha * static_cast<float>(acc) + (beta == 0.0f ? 0.0f : beta * dst);
    }
  }
#endif
}

// ---------------------------------------------------------------------------
// Broadcasting
// ---------------------------------------------------------------------------

struct BroadcastPlan {
  Shape out;
  std::vector<std::int64_t> stride_a;  // per output dim; 0 where a is broadcast
  std::vector<std::int64_t> stride_b;
  bool same_shape = false;
};

std::vector<std::int64_t> contiguous_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size());
  std::int64_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

BroadcastPlan make_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan plan;
  plan.same_shape = (a == b);
  const std::size_t rank = std::max(a.size(), b.size());
  plan.out.resize(rank);
  auto sa = contiguous_strides(a);
  auto sb = contiguous_strides(b);
  plan.stride_a.assign(rank, 0);
  plan.stride_b.assign(rank, 0);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t oi = rank - 1 - i;
    const std::int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      fail(std::string(op) + ": shapes do not broadcast: " + shape_str(a) + " vs " + shape_str(b));
    }
    plan.out[oi] = std::max(da, db);
    plan.stride_a[oi] = (da == 1) ? 0 : (i < a.size() ? sa[a.size() - 1 - i] : 0);
    plan.stride_b[oi] = (db == 1) ? 0 : (i < b.size() ? sb[b.size() - 1 - i] : 0);
  }
  return plan;
}

/// Calls fn(out_flat, a_flat, b_flat) for every output element.
template <typename Fn>
void for_each_broadcast(const BroadcastPlan& plan, Fn&& fn) {
  const std::int64_t total = shape_numel(plan.out);
  if (total == 0) return;
  const std::size_t rank = plan.out.size();
  if (rank == 0) {
    fn(0, 0, 0);
    return;
  }
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t flat = 0; flat < total; ++flat) {
    fn(flat, oa, ob);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      oa += plan.stride_a[d];
      ob += plan.stride_b[d];
      if (idx[d] < plan.out[d]) break;
      oa -= plan.stride_a[d] * plan.out[d];
      ob -= plan.stride_b[d] * plan.out[d];
      idx[d] = 0;
    }
  }
}

enum class BinOp { Add, Sub, Mul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  auto plan = std::make_shared<BroadcastPlan>(make_broadcast(a.shape(), b.shape(), name));
  const auto da = a.data();
  const auto db = b.data();
  std::vector<float> out(static_cast<std::size_t>(shape_numel(plan->out)));

  if (plan->same_shape) {
    switch (op) {
      case BinOp::Add:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
        break;
      case BinOp::Sub:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
        break;
      case BinOp::Mul:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
        break;
    }
  } else {
    switch (op) {
      case BinOp::Add:
        for_each_broadcast(*plan, [&](auto o, auto i, auto j) { out[o] = da[i] + db[j]; });
        break;
      case BinOp::Sub:
        for_each_broadcast(*plan, [&](auto o, auto i, auto j) { out[o] = da[i] - db[j]; });
        break;
      case BinOp::Mul:
        for_each_broadcast(*plan, [&](auto o, auto i, auto j) { out[o] = da[i] * db[j]; });
        break;
    }
  }

  Tensor ta = a, tb = b;
  return make_op_result(plan->out, std::move(out), {a, b},
                        [ta, tb, plan, op](const detail::BackwardCtx& ctx) {
    float* ga = ctx.parent_grad(0);
    float* gb = ctx.parent_grad(1);
    const float* g = ctx.out_grad;
    const auto va = ta.data();
    const auto vb = tb.data();
    switch (op) {
      case BinOp::Add:
        for_each_broadcast(*plan, [&](auto o, auto i, auto j) {
          if (ga) ga[i] += g[o];
          if (gb) gb[j] += g[o];
        });
        break;
      case BinOp::Sub:
        for_each_broadcast(*plan, [&](auto o, auto i, auto j) {
          if (ga) ga[i] += g[o];
          if (gb) gb[j] -= g[o];
        });
        break;
      case BinOp::Mul:
        for_each_broadcast(*plan, [&](auto o, auto i, auto j) {
          if (ga) ga[i] += g[o] * vb[j];
          if (gb) gb[j] += g[o] * va[i];
        });
        break;
    }
  });
}

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd&& fwd, Bwd&& bwd) {
  const auto da = a.data();
  std::vector<float> out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(da[i]);
  Tensor ta = a;
  return make_op_result(a.shape(), std::move(out), {a},
                        [ta, bwd](const detail::BackwardCtx& ctx) {
    float* ga = ctx.parent_grad(0);
    if (!ga) return;
    const auto va = ta.data();
    const auto& vo = ctx.node->data;
    for (std::size_t i = 0; i < vo.size(); ++i) ga[i] += ctx.out_grad[i] * bwd(va[i], vo[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Mul, "mul"); }

Tensor scale(const Tensor& a, float s) {
  return unary_op(a, [s](float x) { return x * s; }, [s](float, float) { return s; });
}

Tensor add_scalar(const Tensor& a, float s) {
  return unary_op(a, [s](float x) { return x + s; }, [](float, float) { return 1.0f; });
}

Tensor exp(const Tensor& a) {
  return unary_op(a, [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

Tensor silu(const Tensor& a) {
  return unary_op(
      a,
      [](float x) { return x / (1.0f + std::exp(-x)); },
      [](float x, float) {
        const float s = 1.0f / (1.0f + std::exp(-x));
        return s * (1.0f + x * (1.0f - s));
      });
}

Tensor clamp(const Tensor& a, float lo, float hi) {
  if (lo > hi) fail("clamp: lo must not exceed hi");
  return unary_op(
      a, [lo, hi](float x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](float x, float) { return (x >= lo && x <= hi) ? 1.0f : 0.0f; });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

namespace {

struct MatmulDims {
  std::int64_t batch_a = 1, batch_b = 1, batch = 1;
  std::int64_t m = 0, k = 0, n = 0;
  bool batched = false;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b, bool tb, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() < 2 || sa.size() > 3 || sb.size() < 2 || sb.size() > 3) {
    fail(std::string(op) + ": operands must be rank 2 or 3, got " + shape_str(sa) + " x " +
         shape_str(sb));
  }
  MatmulDims d;
  d.batched = sa.size() == 3 || sb.size() == 3;
  d.batch_a = sa.size() == 3 ? sa[0] : 1;
  d.batch_b = sb.size() == 3 ? sb[0] : 1;
  if (d.batch_a != d.batch_b && d.batch_a != 1 && d.batch_b != 1) {
    fail(std::string(op) + ": batch dimensions do not broadcast: " + shape_str(sa) + " x " +
         shape_str(sb));
  }
  d.batch = std::max(d.batch_a, d.batch_b);
  d.m = sa[sa.size() - 2];
  d.k = sa[sa.size() - 1];
  const std::int64_t bk = tb ? sb[sb.size() - 1] : sb[sb.size() - 2];
  d.n = tb ? sb[sb.size() - 2] : sb[sb.size() - 1];
  if (d.k != bk) {
    fail(std::string(op) + ": inner dimensions disagree: " + shape_str(sa) + " x " +
         shape_str(sb));
  }
  return d;
}

Tensor matmul_impl(const Tensor& a, const Tensor& b, bool tb, const char* op) {
  const MatmulDims d = matmul_dims(a, b, tb, op);
  Shape out_shape = d.batched ? Shape{d.batch, d.m, d.n} : Shape{d.m, d.n};
  std::vector<float> out(static_cast<std::size_t>(shape_numel(out_shape)));

  const float* pa = a.data().data();
  const float* pb = b.data().data();
  const std::int64_t step_a = (d.batch_a == 1) ? 0 : d.m * d.k;
  const std::int64_t step_b = (d.batch_b == 1) ? 0 : (tb ? d.n * d.k : d.k * d.n);
  for (std::int64_t bi = 0; bi < d.batch; ++bi) {
    sgemm(false, tb, d.m, d.n, d.k, 1.0f, pa + bi * step_a, d.k, pb + bi * step_b,
          tb ? d.k : d.n, 0.0f, out.data() + bi * d.m * d.n, d.n);
  }

  Tensor ta = a, tbb = b;
  return make_op_result(std::move(out_shape), std::move(out), {a, b},
                        [ta, tbb, d, tb](const detail::BackwardCtx& ctx) {
    float* ga = ctx.parent_grad(0);
    float* gb = ctx.parent_grad(1);
    const float* g = ctx.out_grad;
    const float* pa = ta.data().data();
    const float* pb = tbb.data().data();
    const std::int64_t step_a = (d.batch_a == 1) ? 0 : d.m * d.k;
    const std::int64_t step_b = (d.batch_b == 1) ? 0 : (tb ? d.n * d.k : d.k * d.n);
    for (std::int64_t bi = 0; bi < d.batch; ++bi) {
      const float* gc = g + bi * d.m * d.n;
      if (ga) {
        // dA = dC * B^T  (or dC * B when b was already transposed)
        sgemm(false, !tb, d.m, d.k, d.n, 1.0f, gc, d.n, pb + bi * step_b, tb ? d.k : d.n,
              1.0f, ga + bi * step_a, d.k);
      }
      if (gb) {
        if (!tb) {
          // dB = A^T * dC
          sgemm(true, false, d.k, d.n, d.m, 1.0f, pa + bi * step_a, d.k, gc, d.n, 1.0f,
                gb + bi * step_b, d.n);
        } else {
          // dB = dC^T * A
          sgemm(true, false, d.n, d.k, d.m, 1.0f, gc, d.n, pa + bi * step_a, d.k, 1.0f,
                gb + bi * step_b, d.k);
        }
      }
    }
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, false, "matmul"); }
Tensor matmul_nt(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, true, "matmul_nt"); }

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    fail("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<float> out(a.data().begin(), a.data().end());
  return make_op_result(std::move(shape), std::move(out), {a},
                        [](const detail::BackwardCtx& ctx) {
    float* ga = ctx.parent_grad(0);
    if (!ga) return;
    for (std::size_t i = 0; i < ctx.node->data.size(); ++i) ga[i] += ctx.out_grad[i];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) fail("concat_rows: no inputs");
  Shape trailing(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::int64_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() < 1) fail("concat_rows: rank must be at least 1");
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != trailing) {
      fail("concat_rows: trailing dimensions disagree: " + shape_str(parts[0].shape()) +
           " vs " + shape_str(p.shape()));
    }
    rows += p.shape()[0];
  }
  Shape out_shape;
  out_shape.push_back(rows);
  out_shape.insert(out_shape.end(), trailing.begin(), trailing.end());

  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(shape_numel(out_shape)));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());

  std::vector<Tensor> inputs(parts.begin(), parts.end());
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) sizes.push_back(p.data().size());
  return make_op_result(std::move(out_shape), std::move(out), inputs,
                        [sizes](const detail::BackwardCtx& ctx) {
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < sizes.size(); ++pi) {
      float* gp = ctx.parent_grad(pi);
      if (gp) {
        for (std::size_t i = 0; i < sizes[pi]; ++i) gp[i] += ctx.out_grad[offset + i];
      }
      offset += sizes[pi];
    }
  });
}

Tensor slice_rows(const Tensor& a, std::int64_t begin, std::int64_t end) {
  if (a.rank() < 1) fail("slice_rows: rank must be at least 1");
  const std::int64_t rows = a.shape()[0];
  if (begin < 0 || end < begin || end > rows) {
    std::ostringstream os;
    os << "slice_rows: range [" << begin << ", " << end << ") invalid for " << rows << " rows";
    fail(os.str());
  }
  const std::int64_t row_size = rows == 0 ? 0 : a.numel() / rows;
  Shape out_shape = a.shape();
  out_shape[0] = end - begin;
  const auto da = a.data();
  std::vector<float> out(da.begin() + begin * row_size, da.begin() + end * row_size);
  return make_op_result(std::move(out_shape), std::move(out), {a},
                        [begin, row_size](const detail::BackwardCtx& ctx) {
    float* ga = ctx.parent_grad(0);
    if (!ga) return;
    const std::size_t n = ctx.node->data.size();
    for (std::size_t i = 0; i < n; ++i) ga[static_cast<std::size_t>(begin * row_size) + i] += ctx.out_grad[i];
  });
}

Tensor split_heads(const Tensor& a, int heads) {
  if (a.rank() != 2) fail("split_heads: expected [rows, dim], got " + shape_str(a.shape()));
  const std::int64_t n = a.shape()[0], dim = a.shape()[1];
  if (heads <= 0 || dim % heads != 0) {
    fail("split_heads: dim " + std::to_string(dim) + " not divisible by heads " +
         std::to_string(heads));
  }
  const std::int64_t dh = dim / heads;
  const auto da = a.data();
  std::vector<float> out(da.size());
  for (std::int64_t h = 0; h < heads; ++h)
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < dh; ++j)
        out[static_cast<std::size_t>((h * n + i) * dh + j)] = da[static_cast<std::size_t>(i * dim + h * dh + j)];
  return make_op_result({heads, n, dh}, std::move(out), {a},
                        [heads, n, dh, dim](const detail::BackwardCtx& ctx) {
    float* ga = ctx.parent_grad(0);
    if (!ga) return;
    for (std::int64_t h = 0; h < heads; ++h)
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < dh; ++j)
          ga[i * dim + h * dh + j] += ctx.out_grad[(h * n + i) * dh + j];
  });
}

Tensor merge_heads(const Tensor& a) {
  if (a.rank() != 3) fail("merge_heads: expected [heads, rows, dh], got " + shape_str(a.shape()));
  const std::int64_t heads = a.shape()[0], n = a.shape()[1], dh = a.shape()[2];
  const std::int64_t dim = heads * dh;
  const auto da = a.data();
  std::vector<float> out(da.size());
  for (std::int64_t h = 0; h < heads; ++h)
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < dh; ++j)
        out[static_cast<std::size_t>(i * dim + h * dh + j)] = da[static_cast<std::size_t>((h * n + i) * dh + j)];
  return make_op_result({n, dim}, std::move(out), {a},
                        [heads, n, dh, dim](const detail::BackwardCtx& ctx) {
    float* ga = ctx.parent_grad(0);
    if (!ga) return;
    for (std::int64_t h = 0; h < heads; ++h)
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < dh; ++j)
          ga[(h * n + i) * dh + j] += ctx.out_grad[i * dim + h * dh + j];
  });
}

// ---------------------------------------------------------------------------
// Normalizations and activations over lanes
// ---------------------------------------------------------------------------

namespace {

struct AxisView {
  std::int64_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Shape& s, int axis, const char* op) {
  const int rank = static_cast<int>(s.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) fail(std::string(op) + ": axis out of range for " + shape_str(s));
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= s[static_cast<std::size_t>(i)];
  v.len = s[static_cast<std::size_t>(axis)];
  for (int i = axis + 1; i < rank; ++i) v.inner *= s[static_cast<std::size_t>(i)];
  return v;
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
  const AxisView v = axis_view(a.shape(), axis, "softmax");
  const auto da = a.data();
  std::vector<float> out(da.size());
  for (std::int64_t o = 0; o < v.outer; ++o) {
    for (std::int64_t in = 0; in < v.inner; ++in) {
      const std::int64_t base = o * v.len * v.inner + in;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::int64_t i = 0; i < v.len; ++i) mx = std::max(mx, da[base + i * v.inner]);
      double denom = 0.0;
      for (std::int64_t i = 0; i < v.len; ++i) {
        const double e = std::exp(double(da[base + i * v.inner]) - double(mx));
        out[static_cast<std::size_t>(base + i * v.inner)] = static_cast<float>(e);
        denom += e;
      }
      for (std::int64_t i = 0; i < v.len; ++i) {
        auto& x = out[static_cast<std::size_t>(base + i * v.inner)];
        x = static_cast<float>(double(x) / denom);
      }
    }
  }
  return make_op_result(a.shape(), std::move(out), {a},
                        [v](const detail::BackwardCtx& ctx) {
    float* ga = ctx.parent_grad(0);
    if (!ga) return;
    const auto& y = ctx.node->data;
    const float* g = ctx.out_grad;
    for (std::int64_t o = 0; o < v.outer; ++o) {
      for (std::int64_t in = 0; in < v.inner; ++in) {
        const std::int64_t base = o * v.len * v.inner + in;
        double dot = 0.0;
        for (std::int64_t i = 0; i < v.len; ++i) {
          const std::int64_t p = base + i * v.inner;
          dot += double(g[p]) * double(y[static_cast<std::size_t>(p)]);
        }
        for (std::int64_t i = 0; i < v.len; ++i) {
          const std::int64_t p = base + i * v.inner;
          ga[p] += y[static_cast<std::size_t>(p)] * (g[p] - static_cast<float>(dot));
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, float eps) {
  if (a.rank() < 1) fail("layer_norm: input must have rank >= 1");
  const std::int64_t dim = a.shape().back();
  if (gain.shape() != Shape{dim} || bias.shape() != Shape{dim}) {
    fail("layer_norm: gain/bias must have shape [" + std::to_string(dim) + "], got " +
         shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  }
  const std::int64_t rows = dim == 0 ? 0 : a.numel() / dim;
  const auto dx = a.data();
  const auto dg = gain.data();
  const auto db = bias.data();
  std::vector<float> out(dx.size());
  auto stats = std::make_shared<std::vector<float>>(static_cast<std::size_t>(rows) * 2);
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* x = dx.data() + r * dim;
    double m = 0.0;
    for (std::int64_t i = 0; i < dim; ++i) m += x[i];
    m /= double(dim);
    double var = 0.0;
    for (std::int64_t i = 0; i < dim; ++i) {
      const double d = double(x[i]) - m;
      var += d * d;
    }
    var /= double(dim);
    const float inv_std = static_cast<float>(1.0 / std::sqrt(var + double(eps)));
    (*stats)[static_cast<std::size_t>(r) * 2] = static_cast<float>(m);
    (*stats)[static_cast<std::size_t>(r) * 2 + 1] = inv_std;
    for (std::int64_t i = 0; i < dim; ++i) {
      const float xhat = (x[i] - static_cast<float>(m)) * inv_std;
      out[static_cast<std::size_t>(r * dim + i)] = dg[i] * xhat + db[i];
    }
  }
  Tensor ta = a;
  return make_op_result(a.shape(), std::move(out), {a, gain, bias},
                        [ta, stats, rows, dim](const detail::BackwardCtx& ctx) {
    float* gx = ctx.parent_grad(0);
    float* gg = ctx.parent_grad(1);
    float* gb = ctx.parent_grad(2);
    const auto dx = ta.data();
    const float* gain_ptr = ctx.node->parents[1]->data.data();
    const float* g = ctx.out_grad;
    for (std::int64_t r = 0; r < rows; ++r) {
      const float m = (*stats)[static_cast<std::size_t>(r) * 2];
      const float inv_std = (*stats)[static_cast<std::size_t>(r) * 2 + 1];
      const float* x = dx.data() + r * dim;
      const float* gr = g + r * dim;
      double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
      for (std::int64_t i = 0; i < dim; ++i) {
        const float xhat = (x[i] - m) * inv_std;
        const float dxhat = gr[i] * gain_ptr[i];
        mean_dxhat += dxhat;
        mean_dxhat_xhat += double(dxhat) * double(xhat);
        if (gg) gg[i] += gr[i] * xhat;
        if (gb) gb[i] += gr[i];
      }
      if (gx) {
        mean_dxhat /= double(dim);
        mean_dxhat_xhat /= double(dim);
        for (std::int64_t i = 0; i < dim; ++i) {
          const float xhat = (x[i] - m) * inv_std;
          const float dxhat = gr[i] * gain_ptr[i];
          gx[r * dim + i] += inv_std * (dxhat - static_cast<float>(mean_dxhat) -
                                        xhat * static_cast<float>(mean_dxhat_xhat));
        }
      }
    }
  });
}

Tensor embedding(const Tensor& weight, std::span<const std::int32_t> ids) {
  if (weight.rank() != 2) fail("embedding: weight must be [vocab, dim]");
  const std::int64_t vocab = weight.shape()[0], dim = weight.shape()[1];
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " out of range [0, " +
                              std::to_string(vocab) + ") at position " + std::to_string(i));
    }
  }
  const auto dw = weight.data();
  const std::int64_t n = static_cast<std::int64_t>(ids.size());
  std::vector<float> out(static_cast<std::size_t>(n * dim));
  for (std::int64_t i = 0; i < n; ++i) {
    std::memcpy(out.data() + i * dim, dw.data() + std::int64_t(ids[i]) * dim,
                static_cast<std::size_t>(dim) * sizeof(float));
  }
  std::vector<std::int32_t> ids_copy(ids.begin(), ids.end());
  return make_op_result({n, dim}, std::move(out), {weight},
                        [ids_copy, dim](const detail::BackwardCtx& ctx) {
    float* gw = ctx.parent_grad(0);
    if (!gw) return;
    for (std::size_t i = 0; i < ids_copy.size(); ++i) {
      const float* g = ctx.out_grad + static_cast<std::int64_t>(i) * dim;
      float* dst = gw + std::int64_t(ids_copy[i]) * dim;
      for (std::int64_t j = 0; j < dim; ++j) dst[j] += g[j];
    }
  });
}

Tensor rope(const Tensor& a, std::span<const std::int32_t> positions, double base) {
  const int rank = a.rank();
  if (rank != 2 && rank != 3) fail("rope: expected [rows, dh] or [heads, rows, dh]");
  const std::int64_t heads = rank == 3 ? a.shape()[0] : 1;
  const std::int64_t n = a.shape()[rank - 2];
  const std::int64_t dh = a.shape()[rank - 1];
  if (dh % 2 != 0) {
    fail("rope: head dimension must be even for pairwise rotation, got " + std::to_string(dh));
  }
  if (static_cast<std::int64_t>(positions.size()) != n) {
    fail("rope: positions size " + std::to_string(positions.size()) + " != rows " +
         std::to_string(n));
  }
  // cos/sin table per (row, pair)
  const std::int64_t pairs = dh / 2;
  auto table = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n * pairs) * 2);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < pairs; ++j) {
      const double freq = std::pow(base, -2.0 * double(j) / double(dh));
      const double angle = double(positions[i]) * freq;
      (*table)[static_cast<std::size_t>((i * pairs + j) * 2)] = static_cast<float>(std::cos(angle));
      (*table)[static_cast<std::size_t>((i * pairs + j) * 2 + 1)] = static_cast<float>(std::sin(angle));
    }
  }
  const auto da = a.data();
  std::vector<float> out(da.size());
  for (std::int64_t h = 0; h < heads; ++h) {
    for (std::int64_t i = 0; i < n; ++i) {
      const float* src = da.data() + (h * n + i) * dh;
      float* dst = out.data() + (h * n + i) * dh;
      for (std::int64_t j = 0; j < pairs; ++j) {
        const float c = (*table)[static_cast<std::size_t>((i * pairs + j) * 2)];
        const float s = (*table)[static_cast<std::size_t>((i * pairs + j) * 2 + 1)];
        const float x0 = src[2 * j], x1 = src[2 * j + 1];
        dst[2 * j] = x0 * c - x1 * s;
        dst[2 * j + 1] = x0 * s + x1 * c;
      }
    }
  }
  return make_op_result(a.shape(), std::move(out), {a},
                        [table, heads, n, pairs](const detail::BackwardCtx& ctx) {
    float* ga = ctx.parent_grad(0);
    if (!ga) return;
    const std::int64_t dh = pairs * 2;
    for (std::int64_t h = 0; h < heads; ++h) {
      for (std::int64_t i = 0; i < n; ++i) {
        const float* g = ctx.out_grad + (h * n + i) * dh;
        float* dst = ga + (h * n + i) * dh;
        for (std::int64_t j = 0; j < pairs; ++j) {
          const float c = (*table)[static_cast<std::size_t>((i * pairs + j) * 2)];
          const float s = (*table)[static_cast<std::size_t>((i * pairs + j) * 2 + 1)];
          // inverse rotation
          dst[2 * j] += g[2 * j] * c + g[2 * j + 1] * s;
          dst[2 * j + 1] += -g[2 * j] * s + g[2 * j + 1] * c;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  return make_op_result({}, {static_cast<float>(acc)}, {a},
                        [](const detail::BackwardCtx& ctx) {
    float* ga = ctx.parent_grad(0);
    if (!ga) return;
    const std::size_t n = ctx.node->parents[0]->data.size();
    for (std::size_t i = 0; i < n; ++i) ga[i] += ctx.out_grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const std::int64_t n = a.numel();
  if (n == 0) fail("mean: empty tensor");
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  const float inv = 1.0f / static_cast<float>(n);
  return make_op_result({}, {static_cast<float>(acc / double(n))}, {a},
                        [inv](const detail::BackwardCtx& ctx) {
    float* ga = ctx.parent_grad(0);
    if (!ga) return;
    const std::size_t count = ctx.node->parents[0]->data.size();
    for (std::size_t i = 0; i < count; ++i) ga[i] += ctx.out_grad[0] * inv;
  });
}

Tensor sum_last(const Tensor& a) {
  if (a.rank() < 1) fail("sum_last: input must have rank >= 1");
  const std::int64_t dim = a.shape().back();
  const std::int64_t rows = dim == 0 ? 0 : a.numel() / dim;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  const auto da = a.data();
  std::vector<float> out(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < dim; ++i) acc += da[r * dim + i];
    out[static_cast<std::size_t>(r)] = static_cast<float>(acc);
  }
  return make_op_result(std::move(out_shape), std::move(out), {a},
                        [rows, dim](const detail::BackwardCtx& ctx) {
    float* ga = ctx.parent_grad(0);
    if (!ga) return;
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t i = 0; i < dim; ++i) ga[r * dim + i] += ctx.out_grad[r];
  });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Tensor cross_entropy_from_logits(const Tensor& logits, std::span<const std::int32_t> targets,
                                 std::span<const std::uint8_t> mask) {
  if (logits.rank() != 2) fail("cross_entropy: logits must be [positions, vocab]");
  const std::int64_t n = logits.shape()[0], vocab = logits.shape()[1];
  if (static_cast<std::int64_t>(targets.size()) != n) {
    fail("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
         std::to_string(n) + " positions");
  }
  if (!mask.empty() && static_cast<std::int64_t>(mask.size()) != n) {
    fail("cross_entropy: mask size mismatch");
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || targets[i] >= vocab) {
      throw std::out_of_range("cross_entropy: target id " + std::to_string(targets[i]) +
                              " out of range [0, " + std::to_string(vocab) + ") at position " +
                              std::to_string(i));
    }
  }
  const auto dl = logits.data();
  auto lse = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t r = 0; r < n; ++r) {
    const float* row = dl.data() + r * vocab;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::int64_t i = 0; i < vocab; ++i) mx = std::max(mx, row[i]);
    double denom = 0.0;
    for (std::int64_t i = 0; i < vocab; ++i) denom += std::exp(double(row[i]) - double(mx));
    (*lse)[static_cast<std::size_t>(r)] = double(mx) + std::log(denom);
    if (mask.empty() || mask[static_cast<std::size_t>(r)]) {
      total += (*lse)[static_cast<std::size_t>(r)] - double(row[targets[r]]);
      ++count;
    }
  }
  const float loss = count == 0 ? 0.0f : static_cast<float>(total / double(count));
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  Tensor tl = logits;
  return make_op_result({}, {loss}, {logits},
                        [tl, lse, tgt, msk, n, vocab, count](const detail::BackwardCtx& ctx) {
    float* gl = ctx.parent_grad(0);
    if (!gl || count == 0) return;
    const auto dl = tl.data();
    const float g = ctx.out_grad[0] / static_cast<float>(count);
    for (std::int64_t r = 0; r < n; ++r) {
      if (!msk.empty() && !msk[static_cast<std::size_t>(r)]) continue;
      const float* row = dl.data() + r * vocab;
      float* grow = gl + r * vocab;
      const double l = (*lse)[static_cast<std::size_t>(r)];
      for (std::int64_t i = 0; i < vocab; ++i) {
        const float p = static_cast<float>(std::exp(double(row[i]) - l));
        grow[i] += g * (p - (i == tgt[static_cast<std::size_t>(r)] ? 1.0f : 0.0f));
      }
    }
  });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail("cosine_similarity: shapes disagree: " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
  }
  if (a.rank() < 1) fail("cosine_similarity: input must have rank >= 1");
  constexpr double kNormFloor = 1e-12;
  const std::int64_t dim = a.shape().back();
  const std::int64_t rows = dim == 0 ? 0 : a.numel() / dim;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  const auto da = a.data();
  const auto db = b.data();
  std::vector<float> out(static_cast<std::size_t>(rows));
  auto saved = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows) * 3);
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* x = da.data() + r * dim;
    const float* y = db.data() + r * dim;
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::int64_t i = 0; i < dim; ++i) {
      dot += double(x[i]) * double(y[i]);
      nx += double(x[i]) * double(x[i]);
      ny += double(y[i]) * double(y[i]);
    }
    nx = std::sqrt(nx);
    ny = std::sqrt(ny);
    (*saved)[static_cast<std::size_t>(r) * 3] = dot;
    (*saved)[static_cast<std::size_t>(r) * 3 + 1] = nx;
    (*saved)[static_cast<std::size_t>(r) * 3 + 2] = ny;
    out[static_cast<std::size_t>(r)] =
        (nx < kNormFloor || ny < kNormFloor) ? 0.0f : static_cast<float>(dot / (nx * ny));
  }
  Tensor ta = a, tb = b;
  return make_op_result(std::move(out_shape), std::move(out), {a, b},
                        [ta, tb, saved, rows, dim](const detail::BackwardCtx& ctx) {
    float* ga = ctx.parent_grad(0);
    float* gb = ctx.parent_grad(1);
    const auto da = ta.data();
    const auto db = tb.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double dot = (*saved)[static_cast<std::size_t>(r) * 3];
      const double nx = (*saved)[static_cast<std::size_t>(r) * 3 + 1];
      const double ny = (*saved)[static_cast<std::size_t>(r) * 3 + 2];
      if (nx < kNormFloor || ny < kNormFloor) continue;  // defined as 0 with zero gradient
      const double c = dot / (nx * ny);
      const double g = ctx.out_grad[r];
      const float* x = da.data() + r * dim;
      const float* y = db.data() + r * dim;
      for (std::int64_t i = 0; i < dim; ++i) {
        if (ga) ga[r * dim + i] += static_cast<float>(g * (double(y[i]) / (nx * ny) - c * double(x[i]) / (nx * nx)));
        if (gb) gb[r * dim + i] += static_cast<float>(g * (double(x[i]) / (nx * ny) - c * double(y[i]) / (ny * ny)));
      }
    }
  });
}

}  // namespace tldm
