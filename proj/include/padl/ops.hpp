#pragma once

// Differentiable operations over float32 tensors. Forward computes values,
// and each op installs a closure that scatters the output gradient back to
// its inputs. Reductions accumulate in double so finite-difference checks at
// eps=1e-3 stay meaningful in float32.

#include <cmath>
#include <cstring>

#include "padl/tensor.hpp"

namespace padl {

namespace detail {

inline float* grad_dst(const TensorImplPtr& p) {
  if (!(p->requires_grad || p->backward_fn)) return nullptr;
  p->ensure_grad();
  return p->grad.data();
}

// C[m x n] += A[m x k] * B[k x n], row-major. Four-way k unroll keeps the
// C row in cache across k steps; the j loop vectorizes without reassociating
// any single accumulation chain, so results are run-to-run identical.
inline void gemm_acc(const float* __restrict a, const float* __restrict b,
                     float* __restrict c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<std::size_t>(i) * k;
    float* crow = c + static_cast<std::size_t>(i) * n;
    int r = 0;
    for (; r + 4 <= k; r += 4) {
      const float a0 = arow[r], a1 = arow[r + 1], a2 = arow[r + 2], a3 = arow[r + 3];
      const float* b0 = b + static_cast<std::size_t>(r) * n;
      const float* b1 = b0 + n;
      const float* b2 = b1 + n;
      const float* b3 = b2 + n;
      for (int j = 0; j < n; ++j)
        crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
    }
    for (; r < k; ++r) {
      const float av = arow[r];
      const float* brow = b + static_cast<std::size_t>(r) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline void transpose2d(const float* src, float* dst, int rows, int cols) {
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      dst[static_cast<std::size_t>(j) * rows + i] = src[static_cast<std::size_t>(i) * cols + j];
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<float> out(a.numel());
  const float* pa = a.data();
  const float* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    const std::size_t n = self.numel();
    if (float* ga = detail::grad_dst(self.parents[0]))
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i];
    if (float* gb = detail::grad_dst(self.parents[1]))
      for (std::size_t i = 0; i < n; ++i) gb[i] += self.grad[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<float> out(a.numel());
  const float* pa = a.data();
  const float* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] - pb[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    const std::size_t n = self.numel();
    if (float* ga = detail::grad_dst(self.parents[0]))
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i];
    if (float* gb = detail::grad_dst(self.parents[1]))
      for (std::size_t i = 0; i < n; ++i) gb[i] -= self.grad[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<float> out(a.numel());
  const float* pa = a.data();
  const float* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    const std::size_t n = self.numel();
    const float* da = self.parents[0]->data.data();
    const float* db = self.parents[1]->data.data();
    if (float* ga = detail::grad_dst(self.parents[0]))
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i] * db[i];
    if (float* gb = detail::grad_dst(self.parents[1]))
      for (std::size_t i = 0; i < n; ++i) gb[i] += self.grad[i] * da[i];
  });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "div");
  std::vector<float> out(a.numel());
  const float* pa = a.data();
  const float* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] / pb[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    const std::size_t n = self.numel();
    const float* da = self.parents[0]->data.data();
    const float* db = self.parents[1]->data.data();
    if (float* ga = detail::grad_dst(self.parents[0]))
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i] / db[i];
    if (float* gb = detail::grad_dst(self.parents[1]))
      for (std::size_t i = 0; i < n; ++i)
        gb[i] -= self.grad[i] * da[i] / (db[i] * db[i]);
  });
}

inline Tensor add_scalar(const Tensor& a, float s) {
  std::vector<float> out(a.numel());
  const float* pa = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + s;
  return make_op(a.shape(), std::move(out), {a}, [](TensorImpl& self) {
    if (float* ga = detail::grad_dst(self.parents[0]))
      for (std::size_t i = 0; i < self.numel(); ++i) ga[i] += self.grad[i];
  });
}

inline Tensor mul_scalar(const Tensor& a, float s) {
  std::vector<float> out(a.numel());
  const float* pa = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * s;
  return make_op(a.shape(), std::move(out), {a}, [s](TensorImpl& self) {
    if (float* ga = detail::grad_dst(self.parents[0]))
      for (std::size_t i = 0; i < self.numel(); ++i) ga[i] += self.grad[i] * s;
  });
}

// x[..., d] + b[d]
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.ndim() != 1 || x.dim(-1) != bias.dim(0))
    throw std::invalid_argument("add_bias: bias " + shape_str(bias.shape()) +
                                " does not match last axis of " + shape_str(x.shape()));
  const int d = bias.dim(0);
  std::vector<float> out(x.numel());
  const float* px = x.data();
  const float* pb = bias.data();
  const std::size_t rows = x.numel() / static_cast<std::size_t>(d);
  for (std::size_t r = 0; r < rows; ++r)
    for (int j = 0; j < d; ++j) out[r * d + j] = px[r * d + j] + pb[j];
  return make_op(x.shape(), std::move(out), {x, bias}, [d](TensorImpl& self) {
    const std::size_t rows = self.numel() / static_cast<std::size_t>(d);
    if (float* gx = detail::grad_dst(self.parents[0]))
      for (std::size_t i = 0; i < self.numel(); ++i) gx[i] += self.grad[i];
    if (float* gb = detail::grad_dst(self.parents[1]))
      for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < d; ++j) gb[j] += self.grad[r * d + j];
  });
}

// ---------------------------------------------------------------------------
// Activations

inline Tensor tanh_t(const Tensor& x) {
  std::vector<float> out(x.numel());
  const float* px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(px[i]);
  return make_op(x.shape(), std::move(out), {x}, [](TensorImpl& self) {
    if (float* gx = detail::grad_dst(self.parents[0]))
      for (std::size_t i = 0; i < self.numel(); ++i) {
        const float y = self.data[i];
        gx[i] += self.grad[i] * (1.0f - y * y);
      }
  });
}

inline Tensor sigmoid(const Tensor& x) {
  std::vector<float> out(x.numel());
  const float* px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float v = px[i];
    out[i] = v >= 0 ? 1.0f / (1.0f + std::exp(-v))
                    : std::exp(v) / (1.0f + std::exp(v));
  }
  return make_op(x.shape(), std::move(out), {x}, [](TensorImpl& self) {
    if (float* gx = detail::grad_dst(self.parents[0]))
      for (std::size_t i = 0; i < self.numel(); ++i) {
        const float y = self.data[i];
        gx[i] += self.grad[i] * y * (1.0f - y);
      }
  });
}

inline Tensor relu(const Tensor& x) {
  std::vector<float> out(x.numel());
  const float* px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i] > 0 ? px[i] : 0.0f;
  return make_op(x.shape(), std::move(out), {x}, [](TensorImpl& self) {
    const float* px = self.parents[0]->data.data();
    if (float* gx = detail::grad_dst(self.parents[0]))
      for (std::size_t i = 0; i < self.numel(); ++i)
        if (px[i] > 0) gx[i] += self.grad[i];
  });
}

inline Tensor gelu(const Tensor& x) {
  constexpr float kInvSqrt2 = 0.70710678118654752f;
  std::vector<float> out(x.numel());
  const float* px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 0.5f * px[i] * (1.0f + std::erf(px[i] * kInvSqrt2));
  return make_op(x.shape(), std::move(out), {x}, [](TensorImpl& self) {
    constexpr float kInvSqrt2 = 0.70710678118654752f;
    constexpr float kInvSqrt2Pi = 0.39894228040143268f;
    const float* px = self.parents[0]->data.data();
    if (float* gx = detail::grad_dst(self.parents[0]))
      for (std::size_t i = 0; i < self.numel(); ++i) {
        const float v = px[i];
        const float cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2));
        const float pdf = kInvSqrt2Pi * std::exp(-0.5f * v * v);
        gx[i] += self.grad[i] * (cdf + v * pdf);
      }
  });
}

inline Tensor sqrt_t(const Tensor& x) {
  std::vector<float> out(x.numel());
  const float* px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(px[i]);
  return make_op(x.shape(), std::move(out), {x}, [](TensorImpl& self) {
    if (float* gx = detail::grad_dst(self.parents[0]))
      for (std::size_t i = 0; i < self.numel(); ++i)
        gx[i] += self.grad[i] * 0.5f / self.data[i];
  });
}

// ---------------------------------------------------------------------------
// Matrix multiply: a is [..., m, k]; b is [k, n] (shared) or [..., k, n] with
// matching leading dims.

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() < 2)
    throw std::invalid_argument("matmul: need at least 2-D operands, got " +
                                shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int m = a.dim(-2), k = a.dim(-1);
  const int kb = b.dim(-2), n = b.dim(-1);
  const bool shared_b = b.ndim() == 2;
  if (k != kb)
    throw std::invalid_argument("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  if (!shared_b) {
    if (a.ndim() != b.ndim())
      throw std::invalid_argument("matmul: batch rank mismatch, " + shape_str(a.shape()) +
                                  " vs " + shape_str(b.shape()));
    for (int i = 0; i < a.ndim() - 2; ++i)
      if (a.dim(i) != b.dim(i))
        throw std::invalid_argument("matmul: batch dims disagree, " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
  }

  Shape out_shape(a.shape());
  out_shape[out_shape.size() - 1] = n;
  std::size_t batch = 1;
  for (int i = 0; i < a.ndim() - 2; ++i) batch *= static_cast<std::size_t>(a.dim(i));

  std::vector<float> out(batch * static_cast<std::size_t>(m) * n, 0.0f);
  const std::size_t a_step = static_cast<std::size_t>(m) * k;
  const std::size_t b_step = shared_b ? 0 : static_cast<std::size_t>(k) * n;
  const std::size_t c_step = static_cast<std::size_t>(m) * n;
  for (std::size_t s = 0; s < batch; ++s)
    detail::gemm_acc(a.data() + s * a_step, b.data() + s * b_step,
                     out.data() + s * c_step, m, k, n);

  return make_op(out_shape, std::move(out), {a, b},
                 [m, k, n, batch, shared_b](TensorImpl& self) {
    const std::size_t a_step = static_cast<std::size_t>(m) * k;
    const std::size_t b_step = shared_b ? 0 : static_cast<std::size_t>(k) * n;
    const std::size_t c_step = static_cast<std::size_t>(m) * n;
    const float* adata = self.parents[0]->data.data();
    const float* bdata = self.parents[1]->data.data();
    float* ga = detail::grad_dst(self.parents[0]);
    float* gb = detail::grad_dst(self.parents[1]);
    std::vector<float> bt, at;
    if (ga) bt.resize(static_cast<std::size_t>(n) * k);
    if (gb) at.resize(static_cast<std::size_t>(k) * m);
    if (ga && shared_b) detail::transpose2d(bdata, bt.data(), k, n);
    for (std::size_t s = 0; s < batch; ++s) {
      const float* gc = self.grad.data() + s * c_step;
      if (ga) {
        if (!shared_b) detail::transpose2d(bdata + s * b_step, bt.data(), k, n);
        detail::gemm_acc(gc, bt.data(), ga + s * a_step, m, n, k);
      }
      if (gb) {
        detail::transpose2d(adata + s * a_step, at.data(), m, k);
        detail::gemm_acc(at.data(), gc, gb + s * b_step, k, m, n);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax along an axis, stabilized by max subtraction.

inline Tensor softmax(const Tensor& x, int axis) {
  const int nd = x.ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd)
    throw std::invalid_argument("softmax: axis out of range for " + shape_str(x.shape()));
  const int len = x.dim(axis);
  std::size_t inner = 1, outer = 1;
  for (int i = axis + 1; i < nd; ++i) inner *= static_cast<std::size_t>(x.dim(i));
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(x.dim(i));

  std::vector<float> out(x.numel());
  const float* px = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      float mx = px[base];
      for (int j = 1; j < len; ++j) mx = std::max(mx, px[base + j * inner]);
      double denom = 0.0;
      for (int j = 0; j < len; ++j) {
        const float e = std::exp(px[base + j * inner] - mx);
        out[base + j * inner] = e;
        denom += e;
      }
      const float inv = static_cast<float>(1.0 / denom);
      for (int j = 0; j < len; ++j) out[base + j * inner] *= inv;
    }

  return make_op(x.shape(), std::move(out), {x}, [len, inner, outer](TensorImpl& self) {
    float* gx = detail::grad_dst(self.parents[0]);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (int j = 0; j < len; ++j)
          dot += static_cast<double>(self.grad[base + j * inner]) * self.data[base + j * inner];
        for (int j = 0; j < len; ++j) {
          const std::size_t idx = base + j * inner;
          gx[idx] += self.data[idx] * (self.grad[idx] - static_cast<float>(dot));
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Layer normalization over the last axis with learnable gain/bias.

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         float eps = 1e-5f) {
  const int d = x.dim(-1);
  if (gamma.ndim() != 1 || gamma.dim(0) != d || beta.ndim() != 1 || beta.dim(0) != d)
    throw std::invalid_argument("layer_norm: affine params must be [" + std::to_string(d) +
                                "], got " + shape_str(gamma.shape()) + " and " +
                                shape_str(beta.shape()));
  const std::size_t rows = x.numel() / static_cast<std::size_t>(d);
  std::vector<float> out(x.numel());
  auto stats = std::make_shared<std::vector<float>>(rows * 2);  // mean, inv_sigma per row
  const float* px = x.data();
  const float* pg = gamma.data();
  const float* pb = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = px + r * d;
    double sum = 0.0;
    for (int j = 0; j < d; ++j) sum += row[j];
    const float mean = static_cast<float>(sum / d);
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    const float inv_sigma = static_cast<float>(1.0 / std::sqrt(var / d + eps));
    (*stats)[2 * r] = mean;
    (*stats)[2 * r + 1] = inv_sigma;
    float* orow = out.data() + r * d;
    for (int j = 0; j < d; ++j) orow[j] = (row[j] - mean) * inv_sigma * pg[j] + pb[j];
  }

  return make_op(x.shape(), std::move(out), {x, gamma, beta}, [d, rows, stats](TensorImpl& self) {
    const float* px = self.parents[0]->data.data();
    const float* pg = self.parents[1]->data.data();
    float* gx = detail::grad_dst(self.parents[0]);
    float* gg = detail::grad_dst(self.parents[1]);
    float* gb = detail::grad_dst(self.parents[2]);
    for (std::size_t r = 0; r < rows; ++r) {
      const float mean = (*stats)[2 * r];
      const float inv_sigma = (*stats)[2 * r + 1];
      const float* row = px + r * d;
      const float* grow = self.grad.data() + r * d;
      if (gg || gb) {
        for (int j = 0; j < d; ++j) {
          const float xhat = (row[j] - mean) * inv_sigma;
          if (gg) gg[j] += grow[j] * xhat;
          if (gb) gb[j] += grow[j];
        }
      }
      if (gx) {
        double mean_g = 0.0, mean_gx = 0.0;
        for (int j = 0; j < d; ++j) {
          const float g = grow[j] * pg[j];
          const float xhat = (row[j] - mean) * inv_sigma;
          mean_g += g;
          mean_gx += static_cast<double>(g) * xhat;
        }
        mean_g /= d;
        mean_gx /= d;
        for (int j = 0; j < d; ++j) {
          const float g = grow[j] * pg[j];
          const float xhat = (row[j] - mean) * inv_sigma;
          gx[r * d + j] += (g - static_cast<float>(mean_g) -
                            xhat * static_cast<float>(mean_gx)) * inv_sigma;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel())
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                shape_str(shape));
  std::vector<float> out(x.vec());
  return make_op(shape, std::move(out), {x}, [](TensorImpl& self) {
    if (float* gx = detail::grad_dst(self.parents[0]))
      for (std::size_t i = 0; i < self.numel(); ++i) gx[i] += self.grad[i];
  });
}

namespace detail {
inline void permute_copy(const float* src, float* dst, const Shape& in_shape,
                         const std::vector<int>& perm, bool accumulate = false) {
  const int nd = static_cast<int>(in_shape.size());
  std::vector<std::size_t> in_strides(nd, 1), out_strides(nd, 1);
  for (int i = nd - 2; i >= 0; --i)
    in_strides[i] = in_strides[i + 1] * static_cast<std::size_t>(in_shape[i + 1]);
  Shape out_shape(nd);
  for (int i = 0; i < nd; ++i) out_shape[i] = in_shape[perm[i]];
  for (int i = nd - 2; i >= 0; --i)
    out_strides[i] = out_strides[i + 1] * static_cast<std::size_t>(out_shape[i + 1]);
  // out stride indexed by source axis
  std::vector<std::size_t> out_stride_of_src(nd);
  for (int i = 0; i < nd; ++i) out_stride_of_src[perm[i]] = out_strides[i];

  const std::size_t total = shape_numel(in_shape);
  std::vector<int> idx(nd, 0);
  std::size_t out_off = 0;
  for (std::size_t lin = 0; lin < total; ++lin) {
    if (accumulate)
      dst[out_off] += src[lin];
    else
      dst[out_off] = src[lin];
    for (int ax = nd - 1; ax >= 0; --ax) {
      if (++idx[ax] < in_shape[ax]) {
        out_off += out_stride_of_src[ax];
        break;
      }
      idx[ax] = 0;
      out_off -= out_stride_of_src[ax] * static_cast<std::size_t>(in_shape[ax] - 1);
    }
  }
}
}  // namespace detail

inline Tensor transpose(const Tensor& x, const std::vector<int>& perm) {
  const int nd = x.ndim();
  if (static_cast<int>(perm.size()) != nd)
    throw std::invalid_argument("transpose: permutation rank mismatch for " +
                                shape_str(x.shape()));
  Shape out_shape(nd);
  for (int i = 0; i < nd; ++i) out_shape[i] = x.dim(perm[i]);
  std::vector<float> out(x.numel());
  detail::permute_copy(x.data(), out.data(), x.shape(), perm);
  Shape in_shape = x.shape();
  return make_op(out_shape, std::move(out), {x}, [in_shape, perm](TensorImpl& self) {
    float* gx = detail::grad_dst(self.parents[0]);
    if (!gx) return;
    // inverse permutation maps output grads back onto input layout
    const int nd = static_cast<int>(perm.size());
    std::vector<int> inv(nd);
    for (int i = 0; i < nd; ++i) inv[perm[i]] = i;
    Shape grad_shape(nd);
    for (int i = 0; i < nd; ++i) grad_shape[i] = in_shape[perm[i]];
    detail::permute_copy(self.grad.data(), gx, grad_shape, inv, /*accumulate=*/true);
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const int nd = parts[0].ndim();
  if (axis < 0) axis += nd;
  Shape out_shape = parts[0].shape();
  int total_axis = 0;
  for (const Tensor& t : parts) {
    if (t.ndim() != nd)
      throw std::invalid_argument("concat: rank mismatch " + shape_str(t.shape()));
    for (int i = 0; i < nd; ++i)
      if (i != axis && t.dim(i) != out_shape[i])
        throw std::invalid_argument("concat: shape mismatch " + shape_str(t.shape()) + " vs " +
                                    shape_str(parts[0].shape()));
    total_axis += t.dim(axis);
  }
  out_shape[axis] = total_axis;

  std::size_t inner = 1, outer = 1;
  for (int i = axis + 1; i < nd; ++i) inner *= static_cast<std::size_t>(out_shape[i]);
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(out_shape[i]);

  std::vector<float> out(shape_numel(out_shape));
  std::vector<int> lens;
  std::size_t off = 0;
  for (const Tensor& t : parts) {
    const std::size_t blk = static_cast<std::size_t>(t.dim(axis)) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + o * total_axis * inner + off, t.data() + o * blk,
                  blk * sizeof(float));
    off += blk;
    lens.push_back(t.dim(axis));
  }

  return make_op(out_shape, std::move(out), parts,
                 [inner, outer, total_axis, lens](TensorImpl& self) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      const std::size_t blk = static_cast<std::size_t>(lens[p]) * inner;
      if (float* gp = detail::grad_dst(self.parents[p]))
        for (std::size_t o = 0; o < outer; ++o) {
          const float* src = self.grad.data() + o * total_axis * inner + off;
          float* dst = gp + o * blk;
          for (std::size_t i = 0; i < blk; ++i) dst[i] += src[i];
        }
      off += blk;
    }
  });
}

inline Tensor slice(const Tensor& x, int axis, int start, int len) {
  const int nd = x.ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd || start < 0 || len <= 0 || start + len > x.dim(axis))
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") invalid for axis " +
                                std::to_string(axis) + " of " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::size_t inner = 1, outer = 1;
  for (int i = axis + 1; i < nd; ++i) inner *= static_cast<std::size_t>(x.dim(i));
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(x.dim(i));
  const int full = x.dim(axis);

  std::vector<float> out(shape_numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * len * inner,
                x.data() + (o * full + start) * inner, len * inner * sizeof(float));

  return make_op(out_shape, std::move(out), {x}, [inner, outer, full, start, len](TensorImpl& self) {
    if (float* gx = detail::grad_dst(self.parents[0]))
      for (std::size_t o = 0; o < outer; ++o) {
        const float* src = self.grad.data() + o * len * inner;
        float* dst = gx + (o * full + start) * inner;
        for (std::size_t i = 0; i < static_cast<std::size_t>(len) * inner; ++i) dst[i] += src[i];
      }
  });
}

// Repeat x along a new leading batch axis; backward sums the copies.
inline Tensor broadcast0(const Tensor& x, int batch) {
  Shape out_shape;
  out_shape.push_back(batch);
  for (int d : x.shape()) out_shape.push_back(d);
  const std::size_t n = x.numel();
  std::vector<float> out(static_cast<std::size_t>(batch) * n);
  for (int b = 0; b < batch; ++b)
    std::memcpy(out.data() + static_cast<std::size_t>(b) * n, x.data(), n * sizeof(float));
  return make_op(out_shape, std::move(out), {x}, [batch, n](TensorImpl& self) {
    if (float* gx = detail::grad_dst(self.parents[0]))
      for (int b = 0; b < batch; ++b) {
        const float* src = self.grad.data() + static_cast<std::size_t>(b) * n;
        for (std::size_t i = 0; i < n; ++i) gx[i] += src[i];
      }
  });
}

// ---------------------------------------------------------------------------
// Reductions (double accumulation)

inline Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  const float* px = x.data();
  for (std::size_t i = 0; i < x.numel(); ++i) acc += px[i];
  return make_op({1}, {static_cast<float>(acc)}, {x}, [](TensorImpl& self) {
    if (float* gx = detail::grad_dst(self.parents[0])) {
      const float g = self.grad[0];
      for (std::size_t i = 0; i < self.parents[0]->numel(); ++i) gx[i] += g;
    }
  });
}

inline Tensor mean_all(const Tensor& x) {
  double acc = 0.0;
  const float* px = x.data();
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) acc += px[i];
  return make_op({1}, {static_cast<float>(acc / static_cast<double>(n))}, {x},
                 [n](TensorImpl& self) {
    if (float* gx = detail::grad_dst(self.parents[0])) {
      const float g = self.grad[0] / static_cast<float>(n);
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    }
  });
}

// Per-row dot product: a and b are [B, ...]; rows are flattened. Returns [B].
inline Tensor row_dot(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "row_dot");
  const int batch = a.dim(0);
  const std::size_t row = a.numel() / static_cast<std::size_t>(batch);
  std::vector<float> out(batch);
  const float* pa = a.data();
  const float* pb = b.data();
  for (int r = 0; r < batch; ++r) {
    double acc = 0.0;
    const float* ra = pa + r * row;
    const float* rb = pb + r * row;
    for (std::size_t i = 0; i < row; ++i) acc += static_cast<double>(ra[i]) * rb[i];
    out[r] = static_cast<float>(acc);
  }
  return make_op({batch}, std::move(out), {a, b}, [batch, row](TensorImpl& self) {
    const float* pa = self.parents[0]->data.data();
    const float* pb = self.parents[1]->data.data();
    float* ga = detail::grad_dst(self.parents[0]);
    float* gb = detail::grad_dst(self.parents[1]);
    for (int r = 0; r < batch; ++r) {
      const float g = self.grad[r];
      if (ga)
        for (std::size_t i = 0; i < row; ++i) ga[r * row + i] += g * pb[r * row + i];
      if (gb)
        for (std::size_t i = 0; i < row; ++i) gb[r * row + i] += g * pa[r * row + i];
    }
  });
}

// x[B, ...] scaled per row by 1/s[B]
inline Tensor div_rows(const Tensor& x, const Tensor& s) {
  if (s.ndim() != 1 || s.dim(0) != x.dim(0))
    throw std::invalid_argument("div_rows: scale " + shape_str(s.shape()) +
                                " does not match batch of " + shape_str(x.shape()));
  const int batch = x.dim(0);
  const std::size_t row = x.numel() / static_cast<std::size_t>(batch);
  std::vector<float> out(x.numel());
  const float* px = x.data();
  const float* ps = s.data();
  for (int r = 0; r < batch; ++r)
    for (std::size_t i = 0; i < row; ++i) out[r * row + i] = px[r * row + i] / ps[r];
  return make_op(x.shape(), std::move(out), {x, s}, [batch, row](TensorImpl& self) {
    const float* px = self.parents[0]->data.data();
    const float* ps = self.parents[1]->data.data();
    float* gx = detail::grad_dst(self.parents[0]);
    float* gs = detail::grad_dst(self.parents[1]);
    for (int r = 0; r < batch; ++r) {
      const float inv = 1.0f / ps[r];
      if (gx)
        for (std::size_t i = 0; i < row; ++i) gx[r * row + i] += self.grad[r * row + i] * inv;
      if (gs) {
        double acc = 0.0;
        for (std::size_t i = 0; i < row; ++i)
          acc += static_cast<double>(self.grad[r * row + i]) * px[r * row + i];
        gs[r] -= static_cast<float>(acc) * inv * inv;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Patch layout: [B,C,H,W] <-> [B,P,p*p*C] with patches in row-major grid order
// and each patch flattened channel-major (c, then py, then px).

inline Tensor img_to_patches(const Tensor& x, int p) {
  if (x.ndim() != 4)
    throw std::invalid_argument("img_to_patches: expected [B,C,H,W], got " +
                                shape_str(x.shape()));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % p != 0 || W % p != 0)
    throw std::invalid_argument("img_to_patches: " + shape_str(x.shape()) +
                                " not divisible into " + std::to_string(p) + "x" +
                                std::to_string(p) + " patches");
  const int hp = H / p, wp = W / p, P = hp * wp, pd = p * p * C;
  std::vector<float> out(static_cast<std::size_t>(B) * P * pd);
  const float* px = x.data();
  for (int b = 0; b < B; ++b)
    for (int gy = 0; gy < hp; ++gy)
      for (int gx = 0; gx < wp; ++gx) {
        float* patch = out.data() + ((static_cast<std::size_t>(b) * P + gy * wp + gx)) * pd;
        for (int c = 0; c < C; ++c)
          for (int py = 0; py < p; ++py)
            for (int qx = 0; qx < p; ++qx)
              patch[(c * p + py) * p + qx] =
                  px[((static_cast<std::size_t>(b) * C + c) * H + gy * p + py) * W + gx * p + qx];
      }
  return make_op({B, P, pd}, std::move(out), {x}, [B, C, H, W, p, hp, wp, P, pd](TensorImpl& self) {
    float* gx = detail::grad_dst(self.parents[0]);
    if (!gx) return;
    for (int b = 0; b < B; ++b)
      for (int gy = 0; gy < hp; ++gy)
        for (int gq = 0; gq < wp; ++gq) {
          const float* patch = self.grad.data() + ((static_cast<std::size_t>(b) * P + gy * wp + gq)) * pd;
          for (int c = 0; c < C; ++c)
            for (int py = 0; py < p; ++py)
              for (int qx = 0; qx < p; ++qx)
                gx[((static_cast<std::size_t>(b) * C + c) * H + gy * p + py) * W + gq * p + qx] +=
                    patch[(c * p + py) * p + qx];
        }
  });
}

inline Tensor patches_to_img(const Tensor& t, int channels, int H, int W, int p) {
  if (t.ndim() != 3)
    throw std::invalid_argument("patches_to_img: expected [B,P,p*p*C], got " +
                                shape_str(t.shape()));
  const int B = t.dim(0), P = t.dim(1), pd = t.dim(2);
  const int hp = H / p, wp = W / p;
  if (P != hp * wp || pd != p * p * channels || H % p != 0 || W % p != 0)
    throw std::invalid_argument("patches_to_img: " + shape_str(t.shape()) +
                                " does not tile a " + std::to_string(channels) + "x" +
                                std::to_string(H) + "x" + std::to_string(W) + " image");
  std::vector<float> out(static_cast<std::size_t>(B) * channels * H * W);
  const float* pt = t.data();
  for (int b = 0; b < B; ++b)
    for (int gy = 0; gy < hp; ++gy)
      for (int gx = 0; gx < wp; ++gx) {
        const float* patch = pt + ((static_cast<std::size_t>(b) * P + gy * wp + gx)) * pd;
        for (int c = 0; c < channels; ++c)
          for (int py = 0; py < p; ++py)
            for (int qx = 0; qx < p; ++qx)
              out[((static_cast<std::size_t>(b) * channels + c) * H + gy * p + py) * W + gx * p + qx] =
                  patch[(c * p + py) * p + qx];
      }
  return make_op({B, channels, H, W}, std::move(out), {t},
                 [B, channels, H, W, p, hp, wp, P, pd](TensorImpl& self) {
    float* gt = detail::grad_dst(self.parents[0]);
    if (!gt) return;
    for (int b = 0; b < B; ++b)
      for (int gy = 0; gy < hp; ++gy)
        for (int gq = 0; gq < wp; ++gq) {
          float* patch = gt + ((static_cast<std::size_t>(b) * P + gy * wp + gq)) * pd;
          for (int c = 0; c < channels; ++c)
            for (int py = 0; py < p; ++py)
              for (int qx = 0; qx < p; ++qx)
                patch[(c * p + py) * p + qx] +=
                    self.grad[((static_cast<std::size_t>(b) * channels + c) * H + gy * p + py) * W +
                              gq * p + qx];
        }
  });
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation of [B,Cin,H,W] with [F,Cin,kh,kw], optional bias.
// Lowered to im2col + GEMM per image.

namespace detail {
inline void im2col(const float* img, float* col, int C, int H, int W, int kh, int kw,
                   int stride, int pad, int oh, int ow) {
  // col is [C*kh*kw, oh*ow]
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        float* dst = col + static_cast<std::size_t>((c * kh + ky) * kw + kx) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          const int sy = y * stride + ky - pad;
          for (int x = 0; x < ow; ++x) {
            const int sx = x * stride + kx - pad;
            dst[y * ow + x] = (sy >= 0 && sy < H && sx >= 0 && sx < W)
                                  ? img[(c * H + sy) * W + sx]
                                  : 0.0f;
          }
        }
      }
}

inline void col2im_acc(const float* col, float* img, int C, int H, int W, int kh, int kw,
                       int stride, int pad, int oh, int ow) {
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const float* src = col + static_cast<std::size_t>((c * kh + ky) * kw + kx) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          const int sy = y * stride + ky - pad;
          if (sy < 0 || sy >= H) continue;
          for (int x = 0; x < ow; ++x) {
            const int sx = x * stride + kx - pad;
            if (sx >= 0 && sx < W) img[(c * H + sy) * W + sx] += src[y * ow + x];
          }
        }
      }
}
}  // namespace detail

inline Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                     int stride = 1, int pad = 0) {
  if (x.ndim() != 4 || kernel.ndim() != 4)
    throw std::invalid_argument("conv2d: expected [B,C,H,W] and [F,C,kh,kw], got " +
                                shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int F = kernel.dim(0), kc = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (C != kc)
    throw std::invalid_argument("conv2d: channel mismatch, input " + shape_str(x.shape()) +
                                " vs kernel " + shape_str(kernel.shape()));
  if (kh > H + 2 * pad || kw > W + 2 * pad)
    throw std::invalid_argument("conv2d: kernel " + shape_str(kernel.shape()) +
                                " larger than padded input " + shape_str(x.shape()));
  const bool has_bias = bias.numel() > 0;
  if (has_bias && (bias.ndim() != 1 || bias.dim(0) != F))
    throw std::invalid_argument("conv2d: bias " + shape_str(bias.shape()) + " must be [" +
                                std::to_string(F) + "]");
  const int oh = (H + 2 * pad - kh) / stride + 1;
  const int ow = (W + 2 * pad - kw) / stride + 1;
  const int ck = C * kh * kw;

  std::vector<float> out(static_cast<std::size_t>(B) * F * oh * ow, 0.0f);
  std::vector<float> col(static_cast<std::size_t>(ck) * oh * ow);
  for (int b = 0; b < B; ++b) {
    detail::im2col(x.data() + static_cast<std::size_t>(b) * C * H * W, col.data(), C, H, W,
                   kh, kw, stride, pad, oh, ow);
    float* ob = out.data() + static_cast<std::size_t>(b) * F * oh * ow;
    detail::gemm_acc(kernel.data(), col.data(), ob, F, ck, oh * ow);
    if (has_bias) {
      const float* pb = bias.data();
      for (int f = 0; f < F; ++f)
        for (int i = 0; i < oh * ow; ++i) ob[f * oh * ow + i] += pb[f];
    }
  }

  std::vector<Tensor> inputs = {x, kernel};
  if (has_bias) inputs.push_back(bias);
  return make_op({B, F, oh, ow}, std::move(out), std::move(inputs),
                 [B, C, H, W, F, kh, kw, stride, pad, oh, ow, ck, has_bias](TensorImpl& self) {
    float* gx = detail::grad_dst(self.parents[0]);
    float* gk = detail::grad_dst(self.parents[1]);
    float* gb = has_bias ? detail::grad_dst(self.parents[2]) : nullptr;
    const float* xdata = self.parents[0]->data.data();
    const float* kdata = self.parents[1]->data.data();
    const int on = oh * ow;
    std::vector<float> col(static_cast<std::size_t>(ck) * on);
    std::vector<float> colt, kt, dcol;
    if (gk) colt.resize(static_cast<std::size_t>(on) * ck);
    if (gx) {
      kt.resize(static_cast<std::size_t>(ck) * F);
      detail::transpose2d(kdata, kt.data(), F, ck);
      dcol.resize(static_cast<std::size_t>(ck) * on);
    }
    for (int b = 0; b < B; ++b) {
      const float* gout = self.grad.data() + static_cast<std::size_t>(b) * F * on;
      if (gb)
        for (int f = 0; f < F; ++f) {
          double acc = 0.0;
          for (int i = 0; i < on; ++i) acc += gout[f * on + i];
          gb[f] += static_cast<float>(acc);
        }
      if (gk || gx)
        detail::im2col(xdata + static_cast<std::size_t>(b) * C * H * W, col.data(), C, H, W,
                       kh, kw, stride, pad, oh, ow);
      if (gk) {
        detail::transpose2d(col.data(), colt.data(), ck, on);
        detail::gemm_acc(gout, colt.data(), gk, F, on, ck);
      }
      if (gx) {
        std::fill(dcol.begin(), dcol.end(), 0.0f);
        detail::gemm_acc(kt.data(), gout, dcol.data(), ck, F, on);
        detail::col2im_acc(dcol.data(), gx + static_cast<std::size_t>(b) * C * H * W, C, H, W,
                           kh, kw, stride, pad, oh, ow);
      }
    }
  });
}

inline Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride = 1, int pad = 0) {
  return conv2d(x, kernel, Tensor(Shape{0}), stride, pad);
}

// ---------------------------------------------------------------------------
// Stable binary cross-entropy on logits against constant {0,1} labels.

inline Tensor bce_with_logits(const Tensor& logits, const Tensor& labels) {
  detail::check_same_shape(logits, labels, "bce_with_logits");
  const std::size_t n = logits.numel();
  double acc = 0.0;
  const float* pz = logits.data();
  const float* py = labels.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double z = pz[i], y = py[i];
    acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  return make_op({1}, {static_cast<float>(acc / static_cast<double>(n))}, {logits, labels},
                 [n](TensorImpl& self) {
    float* gz = detail::grad_dst(self.parents[0]);
    if (!gz) return;
    const float g = self.grad[0] / static_cast<float>(n);
    const float* pz = self.parents[0]->data.data();
    const float* py = self.parents[1]->data.data();
    for (std::size_t i = 0; i < n; ++i) {
      const float z = pz[i];
      const float s = z >= 0 ? 1.0f / (1.0f + std::exp(-z)) : std::exp(z) / (1.0f + std::exp(z));
      gz[i] += g * (s - py[i]);
    }
  });
}

// ---------------------------------------------------------------------------
// Composites

// Per-row cosine similarity of flattened rows: a,b are [B, ...] -> [B].
inline Tensor cosine_rows(const Tensor& a, const Tensor& b, float eps = 1e-8f) {
  Tensor dot = row_dot(a, b);
  Tensor na = sqrt_t(add_scalar(row_dot(a, a), eps * eps));
  Tensor nb = sqrt_t(add_scalar(row_dot(b, b), eps * eps));
  Tensor denom = add_scalar(mul(na, nb), eps);
  return div(dot, denom);
}

// Cosine similarity of two whole tensors flattened to single vectors.
inline Tensor cosine_flat(const Tensor& a, const Tensor& b, float eps = 1e-8f) {
  Shape flat{1, static_cast<int>(a.numel())};
  return cosine_rows(reshape(a, flat), reshape(b, flat), eps);
}

// Per-row Euclidean norm of flattened rows -> [B].
inline Tensor l2_norm_rows(const Tensor& x) {
  return sqrt_t(add_scalar(row_dot(x, x), 1e-12f));
}

}  // namespace padl
