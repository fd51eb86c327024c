#include "bifusion/ops.hpp"

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

extern "C" void openblas_set_num_threads(int);

namespace bifusion {

namespace {

// Single BLAS thread: reductions keep one fixed sequential order, so results
// are bit-identical regardless of how many worker threads the caller runs.
// Training reallocates multi-megabyte activation buffers every iteration;
// keeping them on the heap free list instead of returning pages to the kernel
// roughly halves the forward cost.
void blas_init() {
  static const bool once = [] {
    openblas_set_num_threads(1);
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    return true;
  }();
  (void)once;
}

void dgemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
           double alpha, const double* a, std::int64_t lda, const double* b, std::int64_t ldb,
           double beta, double* c, std::int64_t ldc) {
  blas_init();
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
              beta, c, static_cast<int>(ldc));
}

bool tracked(Tape* tape, const TensorPtr& a) { return tape && a->requires_grad; }
bool tracked(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  return tape && (a->requires_grad || b->requires_grad);
}

void mark_output(const TensorPtr& out) {
  out->requires_grad = true;
  out->ensure_grad();
}

}  // namespace

TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  if (!same_shape(*a, *b))
    throw DimensionError("add: shapes " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  auto out = make_tensor(a->shape);
  for (std::int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] + b->data[i];
  if (tracked(tape, a, b)) {
    mark_output(out);
    tape->record([a, b, out] {
      if (a->requires_grad)
        for (std::int64_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i];
      if (b->requires_grad)
        for (std::int64_t i = 0; i < out->numel(); ++i) b->grad[i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr sub(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  if (!same_shape(*a, *b))
    throw DimensionError("sub: shapes " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  auto out = make_tensor(a->shape);
  for (std::int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] - b->data[i];
  if (tracked(tape, a, b)) {
    mark_output(out);
    tape->record([a, b, out] {
      if (a->requires_grad)
        for (std::int64_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i];
      if (b->requires_grad)
        for (std::int64_t i = 0; i < out->numel(); ++i) b->grad[i] -= out->grad[i];
    });
  }
  return out;
}

TensorPtr mul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  if (!same_shape(*a, *b))
    throw DimensionError("mul: shapes " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  auto out = make_tensor(a->shape);
  for (std::int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] * b->data[i];
  if (tracked(tape, a, b)) {
    mark_output(out);
    tape->record([a, b, out] {
      if (a->requires_grad)
        for (std::int64_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i] * b->data[i];
      if (b->requires_grad)
        for (std::int64_t i = 0; i < out->numel(); ++i) b->grad[i] += out->grad[i] * a->data[i];
    });
  }
  return out;
}

TensorPtr add_scalar(Tape* tape, const TensorPtr& a, double c) {
  auto out = make_tensor(a->shape);
  for (std::int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] + c;
  if (tracked(tape, a)) {
    mark_output(out);
    tape->record([a, out] {
      for (std::int64_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr mul_scalar(Tape* tape, const TensorPtr& a, double c) {
  auto out = make_tensor(a->shape);
  for (std::int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] * c;
  if (tracked(tape, a)) {
    mark_output(out);
    tape->record([a, out, c] {
      for (std::int64_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i] * c;
    });
  }
  return out;
}

TensorPtr pow_scalar(Tape* tape, const TensorPtr& a, double p) {
  auto out = make_tensor(a->shape);
  for (std::int64_t i = 0; i < a->numel(); ++i) out->data[i] = std::pow(a->data[i], p);
  if (tracked(tape, a)) {
    mark_output(out);
    tape->record([a, out, p] {
      for (std::int64_t i = 0; i < out->numel(); ++i)
        a->grad[i] += out->grad[i] * p * std::pow(a->data[i], p - 1.0);
    });
  }
  return out;
}

TensorPtr relu(Tape* tape, const TensorPtr& a) {
  auto out = make_tensor(a->shape);
  for (std::int64_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] > 0.0 ? a->data[i] : 0.0;
  if (tracked(tape, a)) {
    mark_output(out);
    tape->record([a, out] {
      for (std::int64_t i = 0; i < out->numel(); ++i)
        if (a->data[i] > 0.0) a->grad[i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr reshape(Tape* tape, const TensorPtr& a, Shape shape) {
  if (numel_of(shape) != a->numel())
    throw DimensionError("reshape: " + shape_str(a->shape) + " to " + shape_str(shape));
  auto out = make_tensor(std::move(shape));
  out->data = a->data;
  if (tracked(tape, a)) {
    mark_output(out);
    tape->record([a, out] {
      for (std::int64_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr concat(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != b->rank() || a->rank() == 0)
    throw DimensionError("concat: ranks " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  for (std::int64_t d = 0; d + 1 < a->rank(); ++d)
    if (a->shape[d] != b->shape[d])
      throw DimensionError("concat: leading extents differ, " + shape_str(a->shape) + " vs " +
                           shape_str(b->shape));
  const std::int64_t da = a->shape.back();
  const std::int64_t db = b->shape.back();
  Shape out_shape = a->shape;
  out_shape.back() = da + db;
  auto out = make_tensor(out_shape);
  const std::int64_t rows = (da + db) == 0 ? 0 : out->numel() / (da + db);
  for (std::int64_t r = 0; r < rows; ++r) {
    std::memcpy(out->data.data() + r * (da + db), a->data.data() + r * da,
                static_cast<std::size_t>(da) * sizeof(double));
    std::memcpy(out->data.data() + r * (da + db) + da, b->data.data() + r * db,
                static_cast<std::size_t>(db) * sizeof(double));
  }
  if (tracked(tape, a, b)) {
    mark_output(out);
    tape->record([a, b, out, rows, da, db] {
      for (std::int64_t r = 0; r < rows; ++r) {
        if (a->requires_grad)
          for (std::int64_t i = 0; i < da; ++i) a->grad[r * da + i] += out->grad[r * (da + db) + i];
        if (b->requires_grad)
          for (std::int64_t i = 0; i < db; ++i)
            b->grad[r * db + i] += out->grad[r * (da + db) + da + i];
      }
    });
  }
  return out;
}

namespace {

struct AxisSplit {
  std::int64_t outer, len, inner;
};

AxisSplit split_axis(const TensorPtr& a, std::int64_t axis) {
  if (axis < 0 || axis >= a->rank())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(a->shape));
  AxisSplit s{1, a->shape[static_cast<std::size_t>(axis)], 1};
  for (std::int64_t d = 0; d < axis; ++d) s.outer *= a->shape[static_cast<std::size_t>(d)];
  for (std::int64_t d = axis + 1; d < a->rank(); ++d) s.inner *= a->shape[static_cast<std::size_t>(d)];
  if (s.len == 0) throw DimensionError("cannot reduce an empty axis of " + shape_str(a->shape));
  return s;
}

Shape drop_axis(const Shape& shape, std::int64_t axis) {
  Shape out;
  for (std::int64_t d = 0; d < static_cast<std::int64_t>(shape.size()); ++d)
    if (d != axis) out.push_back(shape[static_cast<std::size_t>(d)]);
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace

TensorPtr pool(Tape* tape, const TensorPtr& a, std::int64_t axis, PoolKind kind) {
  const AxisSplit s = split_axis(a, axis);
  auto out = make_tensor(drop_axis(a->shape, axis));
  const double* av = a->data.data();
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t i = 0; i < s.inner; ++i) {
      const std::int64_t base = o * s.len * s.inner + i;
      if (kind == PoolKind::max) {
        double best = av[base];
        for (std::int64_t j = 1; j < s.len; ++j) {
          double v = av[base + j * s.inner];
          if (v > best) best = v;  // ties keep the lowest index
        }
        out->data[o * s.inner + i] = best;
      } else {
        double acc = 0.0;
        for (std::int64_t j = 0; j < s.len; ++j) acc += av[base + j * s.inner];
        out->data[o * s.inner + i] = acc / static_cast<double>(s.len);
      }
    }
  if (tracked(tape, a)) {
    mark_output(out);
    tape->record([a, out, s, kind] {
      const double* av = a->data.data();
      for (std::int64_t o = 0; o < s.outer; ++o)
        for (std::int64_t i = 0; i < s.inner; ++i) {
          const std::int64_t base = o * s.len * s.inner + i;
          const double g = out->grad[o * s.inner + i];
          if (kind == PoolKind::max) {
            std::int64_t arg = 0;
            double best = av[base];
            for (std::int64_t j = 1; j < s.len; ++j) {
              double v = av[base + j * s.inner];
              if (v > best) {
                best = v;
                arg = j;
              }
            }
            a->grad[base + arg * s.inner] += g;
          } else {
            const double share = g / static_cast<double>(s.len);
            for (std::int64_t j = 0; j < s.len; ++j) a->grad[base + j * s.inner] += share;
          }
        }
    });
  }
  return out;
}

TensorPtr sum_axis(Tape* tape, const TensorPtr& a, std::int64_t axis) {
  const AxisSplit s = split_axis(a, axis);
  auto out = make_tensor(drop_axis(a->shape, axis));
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t i = 0; i < s.inner; ++i) {
      double acc = 0.0;
      for (std::int64_t j = 0; j < s.len; ++j) acc += a->data[o * s.len * s.inner + j * s.inner + i];
      out->data[o * s.inner + i] = acc;
    }
  if (tracked(tape, a)) {
    mark_output(out);
    tape->record([a, out, s] {
      for (std::int64_t o = 0; o < s.outer; ++o)
        for (std::int64_t i = 0; i < s.inner; ++i) {
          const double g = out->grad[o * s.inner + i];
          for (std::int64_t j = 0; j < s.len; ++j)
            a->grad[o * s.len * s.inner + j * s.inner + i] += g;
        }
    });
  }
  return out;
}

TensorPtr sum_all(Tape* tape, const TensorPtr& a) {
  auto out = make_scalar(0.0);
  double acc = 0.0;
  for (std::int64_t i = 0; i < a->numel(); ++i) acc += a->data[i];
  out->data[0] = acc;
  if (tracked(tape, a)) {
    mark_output(out);
    tape->record([a, out] {
      const double g = out->grad[0];
      for (std::int64_t i = 0; i < a->numel(); ++i) a->grad[i] += g;
    });
  }
  return out;
}

TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != 2 || b->rank() != 2)
    throw DimensionError("matmul: ranks " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  const std::int64_t m = a->shape[0], k = a->shape[1], k2 = b->shape[0], n = b->shape[1];
  if (k != k2)
    throw DimensionError("matmul: inner extents " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
  auto out = make_tensor({m, n});
  dgemm(false, false, m, n, k, 1.0, a->data.data(), k, b->data.data(), n, 0.0, out->data.data(), n);
  if (tracked(tape, a, b)) {
    mark_output(out);
    tape->record([a, b, out, m, n, k] {
      if (a->requires_grad)
        dgemm(false, true, m, k, n, 1.0, out->grad.data(), n, b->data.data(), n, 1.0,
              a->grad.data(), k);
      if (b->requires_grad)
        dgemm(true, false, k, n, m, 1.0, a->data.data(), k, out->grad.data(), n, 1.0,
              b->grad.data(), n);
    });
  }
  return out;
}

TensorPtr add_row_bias(Tape* tape, const TensorPtr& x, const TensorPtr& bias) {
  if (x->rank() != 2 || bias->rank() != 1 || x->shape[1] != bias->shape[0])
    throw DimensionError("add_row_bias: " + shape_str(x->shape) + " + " + shape_str(bias->shape));
  const std::int64_t m = x->shape[0], d = x->shape[1];
  auto out = make_tensor(x->shape);
  for (std::int64_t r = 0; r < m; ++r)
    for (std::int64_t c = 0; c < d; ++c) out->data[r * d + c] = x->data[r * d + c] + bias->data[c];
  if (tracked(tape, x, bias)) {
    mark_output(out);
    tape->record([x, bias, out, m, d] {
      if (x->requires_grad)
        for (std::int64_t i = 0; i < out->numel(); ++i) x->grad[i] += out->grad[i];
      if (bias->requires_grad)
        for (std::int64_t r = 0; r < m; ++r)
          for (std::int64_t c = 0; c < d; ++c) bias->grad[c] += out->grad[r * d + c];
    });
  }
  return out;
}

namespace {

struct Conv2dDims {
  std::int64_t batch, cin, h, w, cout, kh, kw, oh, ow;
  bool rank3;
};

Conv2dDims conv2d_dims(const TensorPtr& x, const TensorPtr& kernels, std::int64_t stride,
                       std::int64_t pad) {
  Conv2dDims d{};
  if (x->rank() == 3) {
    d.rank3 = true;
    d.batch = 1;
    d.cin = x->shape[0];
    d.h = x->shape[1];
    d.w = x->shape[2];
  } else if (x->rank() == 4) {
    d.rank3 = false;
    d.batch = x->shape[0];
    d.cin = x->shape[1];
    d.h = x->shape[2];
    d.w = x->shape[3];
  } else {
    throw DimensionError("conv2d: input must be [C,H,W] or [M,C,H,W], got " + shape_str(x->shape));
  }
  if (kernels->rank() != 4 || kernels->shape[1] != d.cin)
    throw DimensionError("conv2d: kernels " + shape_str(kernels->shape) + " vs input channels " +
                         std::to_string(d.cin));
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (pad < 0) throw ConfigError("conv2d: pad must be >= 0");
  d.cout = kernels->shape[0];
  d.kh = kernels->shape[2];
  d.kw = kernels->shape[3];
  if (d.kh > d.h + 2 * pad || d.kw > d.w + 2 * pad)
    throw DimensionError("conv2d: kernel exceeds padded input extents");
  if ((d.h + 2 * pad - d.kh) % stride != 0 || (d.w + 2 * pad - d.kw) % stride != 0)
    throw DimensionError("conv2d: output extent is not integral");
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  return d;
}

// col layout: [cin*kh*kw, oh*ow]
void im2col(const double* img, const Conv2dDims& d, std::int64_t stride, std::int64_t pad,
            double* col) {
  const std::int64_t ohw = d.oh * d.ow;
  for (std::int64_t c = 0; c < d.cin; ++c)
    for (std::int64_t r = 0; r < d.kh; ++r)
      for (std::int64_t s = 0; s < d.kw; ++s) {
        double* row = col + ((c * d.kh + r) * d.kw + s) * ohw;
        for (std::int64_t oh = 0; oh < d.oh; ++oh) {
          const std::int64_t ih = oh * stride + r - pad;
          for (std::int64_t ow = 0; ow < d.ow; ++ow) {
            const std::int64_t iw = ow * stride + s - pad;
            row[oh * d.ow + ow] = (ih >= 0 && ih < d.h && iw >= 0 && iw < d.w)
                                      ? img[(c * d.h + ih) * d.w + iw]
                                      : 0.0;
          }
        }
      }
}

void col2im_add(const double* col, const Conv2dDims& d, std::int64_t stride, std::int64_t pad,
                double* img_grad) {
  const std::int64_t ohw = d.oh * d.ow;
  for (std::int64_t c = 0; c < d.cin; ++c)
    for (std::int64_t r = 0; r < d.kh; ++r)
      for (std::int64_t s = 0; s < d.kw; ++s) {
        const double* row = col + ((c * d.kh + r) * d.kw + s) * ohw;
        for (std::int64_t oh = 0; oh < d.oh; ++oh) {
          const std::int64_t ih = oh * stride + r - pad;
          if (ih < 0 || ih >= d.h) continue;
          for (std::int64_t ow = 0; ow < d.ow; ++ow) {
            const std::int64_t iw = ow * stride + s - pad;
            if (iw < 0 || iw >= d.w) continue;
            img_grad[(c * d.h + ih) * d.w + iw] += row[oh * d.ow + ow];
          }
        }
      }
}

}  // namespace

TensorPtr conv2d(Tape* tape, const TensorPtr& x, const TensorPtr& kernels, std::int64_t stride,
                 std::int64_t pad) {
  const Conv2dDims d = conv2d_dims(x, kernels, stride, pad);
  const std::int64_t ck = d.cin * d.kh * d.kw;
  const std::int64_t ohw = d.oh * d.ow;
  Shape out_shape = d.rank3 ? Shape{d.cout, d.oh, d.ow} : Shape{d.batch, d.cout, d.oh, d.ow};
  auto out = make_tensor(out_shape);
  std::vector<double> col(static_cast<std::size_t>(ck * ohw));
  for (std::int64_t m = 0; m < d.batch; ++m) {
    im2col(x->data.data() + m * d.cin * d.h * d.w, d, stride, pad, col.data());
    dgemm(false, false, d.cout, ohw, ck, 1.0, kernels->data.data(), ck, col.data(), ohw, 0.0,
          out->data.data() + m * d.cout * ohw, ohw);
  }
  if (tracked(tape, x, kernels)) {
    mark_output(out);
    tape->record([x, kernels, out, d, stride, pad, ck, ohw] {
      std::vector<double> col(static_cast<std::size_t>(ck * ohw));
      std::vector<double> dcol;
      if (x->requires_grad) dcol.assign(static_cast<std::size_t>(ck * ohw), 0.0);
      for (std::int64_t m = 0; m < d.batch; ++m) {
        const double* dy = out->grad.data() + m * d.cout * ohw;
        if (kernels->requires_grad) {
          im2col(x->data.data() + m * d.cin * d.h * d.w, d, stride, pad, col.data());
          dgemm(false, true, d.cout, ck, ohw, 1.0, dy, ohw, col.data(), ohw, 1.0,
                kernels->grad.data(), ck);
        }
        if (x->requires_grad) {
          dgemm(true, false, ck, ohw, d.cout, 1.0, kernels->data.data(), ck, dy, ohw, 0.0,
                dcol.data(), ohw);
          col2im_add(dcol.data(), d, stride, pad, x->grad.data() + m * d.cin * d.h * d.w);
        }
      }
    });
  }
  return out;
}

TensorPtr add_channel_bias(Tape* tape, const TensorPtr& x, const TensorPtr& bias) {
  std::int64_t batch, c, hw;
  if (x->rank() == 4) {
    batch = x->shape[0];
    c = x->shape[1];
    hw = x->shape[2] * x->shape[3];
  } else if (x->rank() == 3) {
    batch = 1;
    c = x->shape[0];
    hw = x->shape[1] * x->shape[2];
  } else {
    throw DimensionError("add_channel_bias: input " + shape_str(x->shape));
  }
  if (bias->rank() != 1 || bias->shape[0] != c)
    throw DimensionError("add_channel_bias: bias " + shape_str(bias->shape));
  auto out = make_tensor(x->shape);
  for (std::int64_t m = 0; m < batch; ++m)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double b = bias->data[ch];
      const std::int64_t base = (m * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) out->data[base + i] = x->data[base + i] + b;
    }
  if (tracked(tape, x, bias)) {
    mark_output(out);
    tape->record([x, bias, out, batch, c, hw] {
      if (x->requires_grad)
        for (std::int64_t i = 0; i < out->numel(); ++i) x->grad[i] += out->grad[i];
      if (bias->requires_grad)
        for (std::int64_t m = 0; m < batch; ++m)
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const std::int64_t base = (m * c + ch) * hw;
            double acc = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) acc += out->grad[base + i];
            bias->grad[ch] += acc;
          }
    });
  }
  return out;
}

TensorPtr maxpool2x2(Tape* tape, const TensorPtr& x) {
  if (x->rank() != 4) throw DimensionError("maxpool2x2: input " + shape_str(x->shape));
  const std::int64_t m = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
  if (h % 2 != 0 || w % 2 != 0)
    throw DimensionError("maxpool2x2: extents must be even, got " + shape_str(x->shape));
  const std::int64_t oh = h / 2, ow = w / 2;
  auto out = make_tensor({m, c, oh, ow});
  auto winners = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(out->numel()));
  const double* xv = x->data.data();
  for (std::int64_t mc = 0; mc < m * c; ++mc) {
    const double* plane = xv + mc * h * w;
    for (std::int64_t r = 0; r < oh; ++r)
      for (std::int64_t s = 0; s < ow; ++s) {
        const std::int64_t corners[4] = {(2 * r) * w + 2 * s, (2 * r) * w + 2 * s + 1,
                                         (2 * r + 1) * w + 2 * s, (2 * r + 1) * w + 2 * s + 1};
        std::int64_t arg = corners[0];
        double best = plane[corners[0]];
        for (int k = 1; k < 4; ++k)
          if (plane[corners[k]] > best) {
            best = plane[corners[k]];
            arg = corners[k];
          }
        out->data[mc * oh * ow + r * ow + s] = best;
        (*winners)[static_cast<std::size_t>(mc * oh * ow + r * ow + s)] = mc * h * w + arg;
      }
  }
  if (tracked(tape, x)) {
    mark_output(out);
    tape->record([x, out, winners] {
      for (std::int64_t i = 0; i < out->numel(); ++i)
        x->grad[(*winners)[static_cast<std::size_t>(i)]] += out->grad[i];
    });
  }
  return out;
}

TensorPtr conv1d_time(Tape* tape, const TensorPtr& x, const TensorPtr& w) {
  if (w->rank() != 2) throw DimensionError("conv1d_time: weights " + shape_str(w->shape));
  return conv1d_time(tape, x, w, w->shape[0] / 2);
}

TensorPtr conv1d_time(Tape* tape, const TensorPtr& x, const TensorPtr& w, std::int64_t pad) {
  if (x->rank() != 2 || w->rank() != 2)
    throw DimensionError("conv1d_time: input " + shape_str(x->shape) + ", weights " +
                         shape_str(w->shape));
  const std::int64_t t = x->shape[0], d = x->shape[1];
  const std::int64_t g = w->shape[0], wc = w->shape[1];
  if (g % 2 == 0) throw ConfigError("conv1d_time: window must be odd, got " + std::to_string(g));
  if (wc != d && wc != 1)
    throw DimensionError("conv1d_time: weights " + shape_str(w->shape) + " vs channels " +
                         std::to_string(d));
  const std::int64_t ot = t + 2 * pad - g + 1;
  if (ot < 1) throw DimensionError("conv1d_time: window exceeds padded length");
  auto out = make_tensor({ot, d});
  for (std::int64_t to = 0; to < ot; ++to)
    for (std::int64_t ch = 0; ch < d; ++ch) {
      double acc = 0.0;
      for (std::int64_t k = 0; k < g; ++k) {
        const std::int64_t ti = to + k - pad;
        if (ti < 0 || ti >= t) continue;
        acc += x->data[ti * d + ch] * w->data[k * wc + (wc == 1 ? 0 : ch)];
      }
      out->data[to * d + ch] = acc;
    }
  if (tracked(tape, x, w)) {
    mark_output(out);
    tape->record([x, w, out, t, d, g, wc, pad] {
      const std::int64_t ot = out->shape[0];
      for (std::int64_t to = 0; to < ot; ++to)
        for (std::int64_t ch = 0; ch < d; ++ch) {
          const double gy = out->grad[to * d + ch];
          if (gy == 0.0) continue;
          for (std::int64_t k = 0; k < g; ++k) {
            const std::int64_t ti = to + k - pad;
            if (ti < 0 || ti >= t) continue;
            if (x->requires_grad) x->grad[ti * d + ch] += gy * w->data[k * wc + (wc == 1 ? 0 : ch)];
            if (w->requires_grad) w->grad[k * wc + (wc == 1 ? 0 : ch)] += gy * x->data[ti * d + ch];
          }
        }
    });
  }
  return out;
}

TensorPtr temporal_conv(Tape* tape, const TensorPtr& x, const TensorPtr& w) {
  if (x->rank() != 4 || w->rank() != 2)
    throw DimensionError("temporal_conv: input " + shape_str(x->shape) + ", weights " +
                         shape_str(w->shape));
  const std::int64_t b = x->shape[0], t = x->shape[1], n = x->shape[2], c = x->shape[3];
  const std::int64_t g = w->shape[0] == n ? w->shape[1] : -1;
  if (g < 0) throw DimensionError("temporal_conv: weights " + shape_str(w->shape) +
                                  " vs nodes " + std::to_string(n));
  if (g % 2 == 0) throw ConfigError("temporal_conv: window must be odd");
  const std::int64_t pad = g / 2;
  auto out = make_tensor(x->shape);
  const double* xv = x->data.data();
  double* ov = out->data.data();
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t ti = 0; ti < t; ++ti)
      for (std::int64_t ni = 0; ni < n; ++ni) {
        double* orow = ov + ((bi * t + ti) * n + ni) * c;
        for (std::int64_t k = 0; k < g; ++k) {
          const std::int64_t ts = ti + k - pad;
          if (ts < 0 || ts >= t) continue;
          const double wk = w->data[ni * g + k];
          const double* xrow = xv + ((bi * t + ts) * n + ni) * c;
          for (std::int64_t ci = 0; ci < c; ++ci) orow[ci] += wk * xrow[ci];
        }
      }
  if (tracked(tape, x, w)) {
    mark_output(out);
    tape->record([x, w, out, b, t, n, c, g, pad] {
      for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t ti = 0; ti < t; ++ti)
          for (std::int64_t ni = 0; ni < n; ++ni) {
            const double* gy = out->grad.data() + ((bi * t + ti) * n + ni) * c;
            for (std::int64_t k = 0; k < g; ++k) {
              const std::int64_t ts = ti + k - pad;
              if (ts < 0 || ts >= t) continue;
              const std::int64_t xbase = ((bi * t + ts) * n + ni) * c;
              if (x->requires_grad) {
                const double wk = w->data[ni * g + k];
                for (std::int64_t ci = 0; ci < c; ++ci) x->grad[xbase + ci] += wk * gy[ci];
              }
              if (w->requires_grad) {
                double acc = 0.0;
                for (std::int64_t ci = 0; ci < c; ++ci) acc += gy[ci] * x->data[xbase + ci];
                w->grad[ni * g + k] += acc;
              }
            }
          }
    });
  }
  return out;
}

TensorPtr node_matmul(Tape* tape, const TensorPtr& s, const TensorPtr& x) {
  if (s->rank() != 2 || x->rank() != 4 || s->shape[1] != x->shape[2])
    throw DimensionError("node_matmul: " + shape_str(s->shape) + " with " + shape_str(x->shape));
  const std::int64_t b = x->shape[0], t = x->shape[1], n_in = x->shape[2], c = x->shape[3];
  const std::int64_t n_out = s->shape[0];
  auto out = make_tensor({b, t, n_out, c});
  const double* sv = s->data.data();
  for (std::int64_t bt = 0; bt < b * t; ++bt) {
    const double* xf = x->data.data() + bt * n_in * c;
    double* of = out->data.data() + bt * n_out * c;
    for (std::int64_t i = 0; i < n_out; ++i)
      for (std::int64_t j = 0; j < n_in; ++j) {
        const double sij = sv[i * n_in + j];
        if (sij == 0.0) continue;
        const double* xr = xf + j * c;
        double* orow = of + i * c;
        for (std::int64_t ci = 0; ci < c; ++ci) orow[ci] += sij * xr[ci];
      }
  }
  if (tracked(tape, s, x)) {
    mark_output(out);
    tape->record([s, x, out, b, t, n_in, n_out, c] {
      for (std::int64_t bt = 0; bt < b * t; ++bt) {
        const double* gf = out->grad.data() + bt * n_out * c;
        const double* xf = x->data.data() + bt * n_in * c;
        for (std::int64_t i = 0; i < n_out; ++i)
          for (std::int64_t j = 0; j < n_in; ++j) {
            const double sij = s->data[i * n_in + j];
            if (s->requires_grad) {
              double acc = 0.0;
              for (std::int64_t ci = 0; ci < c; ++ci) acc += gf[i * c + ci] * xf[j * c + ci];
              s->grad[i * n_in + j] += acc;
            }
            if (x->requires_grad && sij != 0.0)
              for (std::int64_t ci = 0; ci < c; ++ci)
                x->grad[bt * n_in * c + j * c + ci] += sij * gf[i * c + ci];
          }
      }
    });
  }
  return out;
}

TensorPtr add_node_bias(Tape* tape, const TensorPtr& x, const TensorPtr& bias) {
  if (x->rank() != 4 || bias->rank() != 1 || bias->shape[0] != x->shape[2])
    throw DimensionError("add_node_bias: " + shape_str(x->shape) + " + " + shape_str(bias->shape));
  const std::int64_t bt = x->shape[0] * x->shape[1], n = x->shape[2], c = x->shape[3];
  auto out = make_tensor(x->shape);
  for (std::int64_t r = 0; r < bt; ++r)
    for (std::int64_t ni = 0; ni < n; ++ni) {
      const double bv = bias->data[ni];
      const std::int64_t base = (r * n + ni) * c;
      for (std::int64_t ci = 0; ci < c; ++ci) out->data[base + ci] = x->data[base + ci] + bv;
    }
  if (tracked(tape, x, bias)) {
    mark_output(out);
    tape->record([x, bias, out, bt, n, c] {
      if (x->requires_grad)
        for (std::int64_t i = 0; i < out->numel(); ++i) x->grad[i] += out->grad[i];
      if (bias->requires_grad)
        for (std::int64_t r = 0; r < bt; ++r)
          for (std::int64_t ni = 0; ni < n; ++ni) {
            const std::int64_t base = (r * n + ni) * c;
            double acc = 0.0;
            for (std::int64_t ci = 0; ci < c; ++ci) acc += out->grad[base + ci];
            bias->grad[ni] += acc;
          }
    });
  }
  return out;
}

TensorPtr take_node(Tape* tape, const TensorPtr& x, std::int64_t node) {
  if (x->rank() != 3) throw DimensionError("take_node: input " + shape_str(x->shape));
  const std::int64_t b = x->shape[0], n = x->shape[1], c = x->shape[2];
  if (node < 0 || node >= n) throw IndexError("take_node: index " + std::to_string(node));
  auto out = make_tensor({b, c});
  for (std::int64_t r = 0; r < b; ++r)
    std::memcpy(out->data.data() + r * c, x->data.data() + (r * n + node) * c,
                static_cast<std::size_t>(c) * sizeof(double));
  if (tracked(tape, x)) {
    mark_output(out);
    tape->record([x, out, b, n, c, node] {
      for (std::int64_t r = 0; r < b; ++r)
        for (std::int64_t ci = 0; ci < c; ++ci)
          x->grad[(r * n + node) * c + ci] += out->grad[r * c + ci];
    });
  }
  return out;
}

TensorPtr split_pool_parts(Tape* tape, const TensorPtr& x, std::int64_t parts) {
  if (x->rank() != 4) throw DimensionError("split_pool_parts: input " + shape_str(x->shape));
  const std::int64_t m = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
  if (parts < 1 || h % parts != 0)
    throw ConfigError("split_pool_parts: " + std::to_string(h) + " rows not divisible into " +
                      std::to_string(parts) + " parts");
  const std::int64_t rows = h / parts;
  auto out = make_tensor({m, parts, c});
  auto winners =
      std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out->numel()));
  for (std::int64_t mi = 0; mi < m; ++mi)
    for (std::int64_t p = 0; p < parts; ++p)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const std::int64_t plane = (mi * c + ch) * h * w;
        std::int64_t arg = plane + p * rows * w;
        double best = x->data[arg];
        for (std::int64_t r = p * rows; r < (p + 1) * rows; ++r)
          for (std::int64_t s = 0; s < w; ++s) {
            const std::int64_t idx = plane + r * w + s;
            if (x->data[idx] > best) {
              best = x->data[idx];
              arg = idx;
            }
          }
        out->data[(mi * parts + p) * c + ch] = best;
        (*winners)[static_cast<std::size_t>((mi * parts + p) * c + ch)] = arg;
      }
  if (tracked(tape, x)) {
    mark_output(out);
    tape->record([x, out, winners] {
      for (std::int64_t i = 0; i < out->numel(); ++i)
        x->grad[(*winners)[static_cast<std::size_t>(i)]] += out->grad[i];
    });
  }
  return out;
}

TensorPtr batch_norm(Tape* tape, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, BatchNormState& state, Mode mode, double eps,
                     double momentum) {
  if (x->rank() != 2) throw DimensionError("batch_norm: input " + shape_str(x->shape));
  const std::int64_t b = x->shape[0], d = x->shape[1];
  if (gamma->numel() != d || beta->numel() != d)
    throw DimensionError("batch_norm: gamma/beta extent vs channels " + std::to_string(d));
  if (state.running_mean.empty()) {
    state.running_mean.assign(static_cast<std::size_t>(d), 0.0);
    state.running_var.assign(static_cast<std::size_t>(d), 1.0);
  }
  if (static_cast<std::int64_t>(state.running_mean.size()) != d)
    throw DimensionError("batch_norm: running statistics extent mismatch");

  auto out = make_tensor(x->shape);
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b * d));
  auto invstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(d));

  if (mode == Mode::train) {
    if (b < 2) throw BatchSizeError("batch_norm: train mode needs a batch of at least 2");
    for (std::int64_t c = 0; c < d; ++c) {
      double mean = 0.0;
      for (std::int64_t r = 0; r < b; ++r) mean += x->data[r * d + c];
      mean /= static_cast<double>(b);
      double var = 0.0;
      for (std::int64_t r = 0; r < b; ++r) {
        const double dv = x->data[r * d + c] - mean;
        var += dv * dv;
      }
      var /= static_cast<double>(b);  // population variance
      const double is = 1.0 / std::sqrt(var + eps);
      (*invstd)[static_cast<std::size_t>(c)] = is;
      for (std::int64_t r = 0; r < b; ++r) {
        const double xh = (x->data[r * d + c] - mean) * is;
        (*xhat)[static_cast<std::size_t>(r * d + c)] = xh;
        out->data[r * d + c] = gamma->data[c] * xh + beta->data[c];
      }
      state.running_mean[static_cast<std::size_t>(c)] =
          (1.0 - momentum) * state.running_mean[static_cast<std::size_t>(c)] + momentum * mean;
      state.running_var[static_cast<std::size_t>(c)] =
          (1.0 - momentum) * state.running_var[static_cast<std::size_t>(c)] + momentum * var;
    }
  } else {
    for (std::int64_t c = 0; c < d; ++c) {
      const double is = 1.0 / std::sqrt(state.running_var[static_cast<std::size_t>(c)] + eps);
      (*invstd)[static_cast<std::size_t>(c)] = is;
      const double mean = state.running_mean[static_cast<std::size_t>(c)];
      for (std::int64_t r = 0; r < b; ++r) {
        const double xh = (x->data[r * d + c] - mean) * is;
        (*xhat)[static_cast<std::size_t>(r * d + c)] = xh;
        out->data[r * d + c] = gamma->data[c] * xh + beta->data[c];
      }
    }
  }

  if (tape && (x->requires_grad || gamma->requires_grad || beta->requires_grad)) {
    mark_output(out);
    tape->record([x, gamma, beta, out, xhat, invstd, b, d, mode] {
      for (std::int64_t c = 0; c < d; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::int64_t r = 0; r < b; ++r) {
          const double dy = out->grad[r * d + c];
          sum_dy += dy;
          sum_dy_xhat += dy * (*xhat)[static_cast<std::size_t>(r * d + c)];
        }
        if (gamma->requires_grad) gamma->grad[c] += sum_dy_xhat;
        if (beta->requires_grad) beta->grad[c] += sum_dy;
        if (!x->requires_grad) continue;
        const double g = gamma->data[c];
        const double is = (*invstd)[static_cast<std::size_t>(c)];
        if (mode == Mode::train) {
          const double nb = static_cast<double>(b);
          for (std::int64_t r = 0; r < b; ++r) {
            const double dy = out->grad[r * d + c];
            const double xh = (*xhat)[static_cast<std::size_t>(r * d + c)];
            x->grad[r * d + c] += g * is / nb * (nb * dy - sum_dy - xh * sum_dy_xhat);
          }
        } else {
          for (std::int64_t r = 0; r < b; ++r) x->grad[r * d + c] += g * is * out->grad[r * d + c];
        }
      }
    });
  }
  return out;
}

TensorPtr dropout(Tape* tape, const TensorPtr& x, double rate, Mode mode, Rng& rng) {
  if (mode == Mode::eval) return x;
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout: rate must be in [0,1) in train mode, got " + std::to_string(rate));
  auto out = make_tensor(x->shape);
  auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x->numel()));
  const double scale = 1.0 / (1.0 - rate);
  for (std::int64_t i = 0; i < x->numel(); ++i) {
    const double keep = rng.uniform() >= rate ? scale : 0.0;
    (*mask)[static_cast<std::size_t>(i)] = keep;
    out->data[i] = x->data[i] * keep;
  }
  if (tracked(tape, x)) {
    mark_output(out);
    tape->record([x, out, mask] {
      for (std::int64_t i = 0; i < out->numel(); ++i)
        x->grad[i] += out->grad[i] * (*mask)[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

TensorPtr softmax_cross_entropy(Tape* tape, const TensorPtr& logits,
                                const std::vector<std::int64_t>& labels) {
  if (logits->rank() != 2) throw DimensionError("softmax_cross_entropy: logits " +
                                                shape_str(logits->shape));
  const std::int64_t b = logits->shape[0], c = logits->shape[1];
  if (static_cast<std::int64_t>(labels.size()) != b)
    throw DimensionError("softmax_cross_entropy: label count vs batch");
  for (std::int64_t lbl : labels)
    if (lbl < 0 || lbl >= c)
      throw IndexError("softmax_cross_entropy: label " + std::to_string(lbl) + " out of range");
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b * c));
  double loss = 0.0;
  for (std::int64_t r = 0; r < b; ++r) {
    double mx = logits->data[r * c];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, logits->data[r * c + j]);
    double z = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      const double e = std::exp(logits->data[r * c + j] - mx);
      (*probs)[static_cast<std::size_t>(r * c + j)] = e;
      z += e;
    }
    for (std::int64_t j = 0; j < c; ++j) (*probs)[static_cast<std::size_t>(r * c + j)] /= z;
    loss -= std::log((*probs)[static_cast<std::size_t>(r * c + labels[static_cast<std::size_t>(r)])]);
  }
  auto out = make_scalar(loss / static_cast<double>(b));
  if (tracked(tape, logits)) {
    mark_output(out);
    tape->record([logits, out, probs, labels, b, c] {
      const double g = out->grad[0] / static_cast<double>(b);
      for (std::int64_t r = 0; r < b; ++r)
        for (std::int64_t j = 0; j < c; ++j) {
          const double p = (*probs)[static_cast<std::size_t>(r * c + j)];
          const double onehot = (j == labels[static_cast<std::size_t>(r)]) ? 1.0 : 0.0;
          logits->grad[r * c + j] += g * (p - onehot);
        }
    });
  }
  return out;
}

TensorPtr batch_all_triplet(Tape* tape, const TensorPtr& embeddings,
                            const std::vector<std::int64_t>& labels, double margin) {
  if (embeddings->rank() != 2)
    throw DimensionError("batch_all_triplet: embeddings " + shape_str(embeddings->shape));
  const std::int64_t b = embeddings->shape[0], d = embeddings->shape[1];
  if (static_cast<std::int64_t>(labels.size()) != b)
    throw DimensionError("batch_all_triplet: label count vs batch");
  bool has_pos_pair = false;
  {
    std::vector<std::int64_t> distinct;
    for (std::int64_t i = 0; i < b; ++i) {
      if (std::find(distinct.begin(), distinct.end(), labels[static_cast<std::size_t>(i)]) ==
          distinct.end())
        distinct.push_back(labels[static_cast<std::size_t>(i)]);
      for (std::int64_t j = 0; j < i; ++j)
        if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)])
          has_pos_pair = true;
    }
    if (distinct.size() < 2 || !has_pos_pair)
      throw SamplingError("batch_all_triplet: batch needs >= 2 identities with >= 2 samples each");
  }

  // pairwise Euclidean distances
  auto dist = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b * b), 0.0);
  const double* ev = embeddings->data.data();
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t j = i + 1; j < b; ++j) {
      double acc = 0.0;
      for (std::int64_t k = 0; k < d; ++k) {
        const double dv = ev[i * d + k] - ev[j * d + k];
        acc += dv * dv;
      }
      const double dd = std::sqrt(acc);
      (*dist)[static_cast<std::size_t>(i * b + j)] = dd;
      (*dist)[static_cast<std::size_t>(j * b + i)] = dd;
    }

  double total = 0.0;
  std::int64_t active = 0;
  for (std::int64_t a = 0; a < b; ++a)
    for (std::int64_t p = 0; p < b; ++p) {
      if (p == a || labels[static_cast<std::size_t>(p)] != labels[static_cast<std::size_t>(a)])
        continue;
      for (std::int64_t n = 0; n < b; ++n) {
        if (labels[static_cast<std::size_t>(n)] == labels[static_cast<std::size_t>(a)]) continue;
        const double h = (*dist)[static_cast<std::size_t>(a * b + p)] -
                         (*dist)[static_cast<std::size_t>(a * b + n)] + margin;
        if (h > 0.0) {
          total += h;
          ++active;
        }
      }
    }
  auto out = make_scalar(active > 0 ? total / static_cast<double>(active) : 0.0);
  if (tracked(tape, embeddings)) mark_output(out);
  if (tracked(tape, embeddings) && active > 0) {
    auto labels_copy = std::make_shared<std::vector<std::int64_t>>(labels);
    const std::int64_t n_active = active;
    tape->record([embeddings, out, dist, labels_copy, margin, b, d, n_active] {
      const double coeff = out->grad[0] / static_cast<double>(n_active);
      const auto& lab = *labels_copy;
      const double* ev = embeddings->data.data();
      double* eg = embeddings->grad.data();
      auto pull = [&](std::int64_t i, std::int64_t j, double c) {
        // c * d||e_i - e_j|| / d(e_i, e_j)
        const double dij = (*dist)[static_cast<std::size_t>(i * b + j)];
        if (dij < 1e-12) return;
        const double f = c / dij;
        for (std::int64_t k = 0; k < d; ++k) {
          const double dv = ev[i * d + k] - ev[j * d + k];
          eg[i * d + k] += f * dv;
          eg[j * d + k] -= f * dv;
        }
      };
      for (std::int64_t a = 0; a < b; ++a)
        for (std::int64_t p = 0; p < b; ++p) {
          if (p == a || lab[static_cast<std::size_t>(p)] != lab[static_cast<std::size_t>(a)])
            continue;
          for (std::int64_t n = 0; n < b; ++n) {
            if (lab[static_cast<std::size_t>(n)] == lab[static_cast<std::size_t>(a)]) continue;
            const double h = (*dist)[static_cast<std::size_t>(a * b + p)] -
                             (*dist)[static_cast<std::size_t>(a * b + n)] + margin;
            if (h <= 0.0) continue;
            pull(a, p, coeff);
            pull(a, n, -coeff);
          }
        }
    });
  }
  return out;
}

}  // namespace bifusion
