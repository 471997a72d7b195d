#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clue/autograd.hpp"
#include "clue/rng.hpp"

namespace clue {

enum class Mode { train, eval };

struct Pair {
  std::size_t h = 1;
  std::size_t w = 1;
  friend bool operator==(const Pair&, const Pair&) = default;
};

namespace kernels {

/// C[M,N] += A[M,K] * B[K,N]
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  if (N < 16 && M >= 16) {
    // Narrow outputs (late conv layers): tile the transposed product instead.
    std::vector<T> at(K * M), bt(N * K), ct(N * M, T{0});
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t k = 0; k < K; ++k) at[k * M + i] = A[i * K + k];
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = 0; j < N; ++j) bt[j * K + k] = B[k * N + j];
    gemm_nn(N, M, K, bt.data(), at.data(), ct.data());
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j) C[i * N + j] += ct[j * M + i];
    return;
  }
  // 4-row register tiles of two 256-bit vectors; each C entry still sums
  // over k in ascending order, so results do not depend on the tiling.
  typedef T V __attribute__((vector_size(32)));
  constexpr std::size_t MR = 4, L = 32 / sizeof(T), NR = 2 * L;
  const std::size_t m_main = M - M % MR, n_main = N - N % NR;
  for (std::size_t i = 0; i < m_main; i += MR)
    for (std::size_t j = 0; j < n_main; j += NR) {
      V acc[MR][2] = {};
      for (std::size_t k = 0; k < K; ++k) {
        V b0, b1;
        std::memcpy(&b0, B + k * N + j, sizeof(V));
        std::memcpy(&b1, B + k * N + j + L, sizeof(V));
        for (std::size_t r = 0; r < MR; ++r) {
          const T a = A[(i + r) * K + k];
          acc[r][0] += a * b0;
          acc[r][1] += a * b1;
        }
      }
      for (std::size_t r = 0; r < MR; ++r) {
        T* c = C + (i + r) * N + j;
        for (std::size_t l = 0; l < L; ++l) {
          c[l] += acc[r][0][l];
          c[L + l] += acc[r][1][l];
        }
      }
    }
  if (n_main < N)
    for (std::size_t i = 0; i < m_main; ++i) {
      T* c = C + i * N;
      for (std::size_t k = 0; k < K; ++k) {
        const T a = A[i * K + k];
        const T* b = B + k * N;
        for (std::size_t j = n_main; j < N; ++j) c[j] += a * b[j];
      }
    }
  for (std::size_t i = m_main; i < M; ++i) {
    T* c = C + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T a = A[i * K + k];
      if (a == T{0}) continue;
      const T* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

/// C[M,N] += A[M,K] * B[N,K]^T
template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  // Row-by-row dot products with vector partial sums reduced in a fixed lane
  // order; four rows of A share each load of B.
  typedef T V __attribute__((vector_size(32)));
  constexpr std::size_t L = 32 / sizeof(T);
  const std::size_t k_main = K - K % L;
  auto finish = [&](const V& acc, const T* a, const T* b) {
    T sum{0};
    for (std::size_t l = 0; l < L; ++l) sum += acc[l];
    for (std::size_t k = k_main; k < K; ++k) sum += a[k] * b[k];
    return sum;
  };
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4)
    for (std::size_t j = 0; j < N; ++j) {
      const T* b = B + j * K;
      V acc[4] = {};
      for (std::size_t k = 0; k < k_main; k += L) {
        V bv, av;
        std::memcpy(&bv, b + k, sizeof(V));
        for (std::size_t r = 0; r < 4; ++r) {
          std::memcpy(&av, A + (i + r) * K + k, sizeof(V));
          acc[r] += av * bv;
        }
      }
      for (std::size_t r = 0; r < 4; ++r) C[(i + r) * N + j] += finish(acc[r], A + (i + r) * K, b);
    }
  for (; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      const T* a = A + i * K;
      const T* b = B + j * K;
      V acc = {};
      for (std::size_t k = 0; k < k_main; k += L) {
        V bv, av;
        std::memcpy(&bv, b + k, sizeof(V));
        std::memcpy(&av, a + k, sizeof(V));
        acc += av * bv;
      }
      C[i * N + j] += finish(acc, a, b);
    }
}

/// C[M,N] += A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  if (M >= 4 && N >= 8) {
    std::vector<T> at(M * K);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t i = 0; i < M; ++i) at[i * K + k] = A[k * M + i];
    gemm_nn(M, N, K, at.data(), B, C);
    return;
  }
  for (std::size_t k = 0; k < K; ++k) {
    const T* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const T a = A[k * M + i];
      if (a == T{0}) continue;
      T* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

struct ConvGeometry {
  std::size_t c_in, h, w, c_out, kh, kw, sh, sw, ph, pw, oh, ow;
};

inline ConvGeometry conv_geometry(const Shape& in, const Shape& wshape, Pair stride, Pair pad) {
  if (in.size() != 3) throw DimensionError("conv2d: input must be [C,H,W], got " + shape_str(in));
  if (wshape.size() != 4)
    throw DimensionError("conv2d: weights must be [C_out,C_in,kH,kW], got " + shape_str(wshape));
  if (wshape[1] != in[0])
    throw DimensionError("conv2d: weight channels " + std::to_string(wshape[1]) +
                         " do not match input channels " + std::to_string(in[0]));
  if (stride.h < 1 || stride.w < 1) throw DimensionError("conv2d: strides must be >= 1");
  ConvGeometry g{in[0], in[1], in[2], wshape[0], wshape[2], wshape[3], stride.h, stride.w,
                 pad.h, pad.w, 0, 0};
  if (g.kh > g.h + 2 * g.ph || g.kw > g.w + 2 * g.pw)
    throw DimensionError("conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                         " larger than padded input " + shape_str(in));
  g.oh = (g.h + 2 * g.ph - g.kh) / g.sh + 1;
  g.ow = (g.w + 2 * g.pw - g.kw) / g.sw + 1;
  return g;
}

/// Output columns [lo, hi) whose input column oj*stride + k - pad is inside [0, n).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t n, std::size_t out, std::size_t stride,
                                                       std::size_t k, std::size_t pad) {
  std::size_t lo = 0;
  if (pad > k) lo = (pad - k + stride - 1) / stride;
  if (n + pad < k + 1) return {0, 0};
  const std::size_t hi = std::min(out, (n - 1 + pad - k) / stride + 1);
  return {std::min(lo, hi), hi};
}

template <class T>
std::vector<T> im2col(const T* x, const ConvGeometry& g) {
  const std::size_t rows = g.c_in * g.kh * g.kw, cols = g.oh * g.ow;
  std::vector<T> out(rows * cols, T{0});
  for (std::size_t ki = 0; ki < g.kh; ++ki) {
    const auto [oi_lo, oi_hi] = valid_range(g.h, g.oh, g.sh, ki, g.ph);
    for (std::size_t kj = 0; kj < g.kw; ++kj) {
      const auto [oj_lo, oj_hi] = valid_range(g.w, g.ow, g.sw, kj, g.pw);
      if (oj_lo >= oj_hi) continue;
      for (std::size_t c = 0; c < g.c_in; ++c) {
        T* dst = out.data() + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t oi = oi_lo; oi < oi_hi; ++oi) {
          const T* src = x + (c * g.h + oi * g.sh + ki - g.ph) * g.w + (oj_lo * g.sw + kj - g.pw);
          T* d = dst + oi * g.ow + oj_lo;
          for (std::size_t n = 0; n < oj_hi - oj_lo; ++n) d[n] = src[n * g.sw];
        }
      }
    }
  }
  return out;
}

template <class T>
void col2im_add(const T* cols_data, const ConvGeometry& g, T* dx) {
  const std::size_t cols = g.oh * g.ow;
  for (std::size_t c = 0; c < g.c_in; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      const auto [oi_lo, oi_hi] = valid_range(g.h, g.oh, g.sh, ki, g.ph);
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const auto [oj_lo, oj_hi] = valid_range(g.w, g.ow, g.sw, kj, g.pw);
        if (oj_lo >= oj_hi) continue;
        const T* src = cols_data + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t oi = oi_lo; oi < oi_hi; ++oi) {
          T* d = dx + (c * g.h + oi * g.sh + ki - g.ph) * g.w + (oj_lo * g.sw + kj - g.pw);
          const T* s = src + oi * g.ow + oj_lo;
          for (std::size_t n = 0; n < oj_hi - oj_lo; ++n) d[n * g.sw] += s[n];
        }
      }
    }
}

}  // namespace kernels

/// Cross-correlation (no kernel flip).
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                         Pair stride, Pair pad, std::vector<T>* cols_out = nullptr) {
  const auto g = kernels::conv_geometry(input.shape(), weights.shape(), stride, pad);
  require_shape(bias, Shape{g.c_out}, "conv2d bias");
  require_finite(input, "conv2d input");
  auto cols = kernels::im2col(input.ptr(), g);
  Tensor<T> out(Shape{g.c_out, g.oh, g.ow});
  const std::size_t n = g.oh * g.ow;
  for (std::size_t o = 0; o < g.c_out; ++o) std::fill_n(out.ptr() + o * n, n, bias[o]);
  kernels::gemm_nn(g.c_out, n, g.c_in * g.kh * g.kw, weights.ptr(), cols.data(), out.ptr());
  if (cols_out) *cols_out = std::move(cols);
  return out;
}

template <class T>
struct PoolOutput {
  Tensor<T> values;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

/// Max over each window; ties resolve to the lowest linear input index.
template <class T>
PoolOutput<T> maxpool2d_forward(const Tensor<T>& input, Pair kernel, Pair stride) {
  require_rank(input, 3, "maxpool2d");
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  if (kernel.h > H || kernel.w > W)
    throw DimensionError("maxpool2d: kernel larger than input " + shape_str(input.shape()));
  if (stride.h < 1 || stride.w < 1 || kernel.h < 1 || kernel.w < 1)
    throw DimensionError("maxpool2d: kernel and stride must be >= 1");
  const std::size_t oh = (H - kernel.h) / stride.h + 1, ow = (W - kernel.w) / stride.w + 1;
  PoolOutput<T> r{Tensor<T>(Shape{C, oh, ow}), std::vector<std::size_t>(C * oh * ow)};
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (c * H + i * stride.h) * W + j * stride.w;
        T bv = input[best];
        for (std::size_t ki = 0; ki < kernel.h; ++ki)
          for (std::size_t kj = 0; kj < kernel.w; ++kj) {
            const std::size_t idx = (c * H + i * stride.h + ki) * W + j * stride.w + kj;
            if (input[idx] > bv) {
              bv = input[idx];
              best = idx;
            }
          }
        const std::size_t o = (c * oh + i) * ow + j;
        r.values[o] = bv;
        r.argmax[o] = best;
      }
  return r;
}

// ---------------------------------------------------------------------------
// Differentiable ops

template <class T>
Var<T> constant(Tensor<T> t) { return Var<T>(std::move(t), false); }

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("add: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (auto& p : n.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("mul: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa.value[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= s;
  return make_op<T>(std::move(out), {a}, [s](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
  });
}

/// 1 - a, elementwise.
template <class T>
Var<T> one_minus(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = T{1} - v;
  return make_op<T>(std::move(out), {a}, [](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
  });
}

/// Gradient is 1 where x > 0, else 0 (including x == 0).
template <class T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& p = *n.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p.value[i] > T{0}) g[i] += n.grad[i];
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = T{1} / (T{1} + std::exp(-v));
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = n.value[i];
      g[i] += n.grad[i] * y * (T{1} - y);
    }
  });
}

template <class T>
Var<T> tanh(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = std::tanh(v);
  return make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = n.value[i];
      g[i] += n.grad[i] * (T{1} - y * y);
    }
  });
}

/// Inverted dropout: survivors are scaled by 1/(1-p) in train mode; eval mode
/// and p == 0 are the identity and consume no random numbers.
template <class T>
Var<T> dropout(const Var<T>& x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dropout probability must be in [0,1)");
  if (mode == Mode::eval || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> mask(x.shape());
  for (auto& m : mask.data()) m = rng.bernoulli(p) ? T{0} : keep_scale;
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_op<T>(std::move(out), {x}, [mask = std::move(mask)](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * mask[i];
  });
}

template <class T>
Var<T> dropout(const Var<T>& x, double p, Mode mode, std::uint64_t seed) {
  Rng rng(seed, "dropout");
  return dropout(x, p, mode, rng);
}

/// out = W x + b
template <class T>
Var<T> dense(const Var<T>& x, const Var<T>& W, const Var<T>& b) {
  require_rank(W.value(), 2, "dense weights");
  const std::size_t M = W.shape()[0], N = W.shape()[1];
  if (x.size() != N)
    throw DimensionError("dense: input length " + std::to_string(x.size()) +
                         " does not match weights " + shape_str(W.shape()));
  require_shape(b.value(), Shape{M}, "dense bias");
  Tensor<T> out = b.value();
  kernels::gemm_nt<T>(1, M, N, x.value().ptr(), W.value().ptr(), out.ptr());
  return make_op<T>(std::move(out), {x, W, b}, [M, N](Node<T>& n) {
    auto& px = *n.parents[0];
    auto& pw = *n.parents[1];
    auto& pb = *n.parents[2];
    if (px.requires_grad) {
      auto& g = px.grad_buffer();
      kernels::gemm_nn<T>(1, N, M, n.grad.ptr(), pw.value.ptr(), g.ptr());
    }
    if (pw.requires_grad) {
      auto& g = pw.grad_buffer();
      kernels::gemm_nn<T>(M, N, 1, n.grad.ptr(), px.value.ptr(), g.ptr());
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < M; ++i) g[i] += n.grad[i];
    }
  });
}

/// [m,k] x [k,n]
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_rank(a.value(), 2, "matmul lhs");
  require_rank(b.value(), 2, "matmul rhs");
  const std::size_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
  if (b.shape()[0] != K)
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> out(Shape{M, N});
  kernels::gemm_nn<T>(M, N, K, a.value().ptr(), b.value().ptr(), out.ptr());
  return make_op<T>(std::move(out), {a, b}, [M, N, K](Node<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad)
      kernels::gemm_nt<T>(M, K, N, n.grad.ptr(), pb.value.ptr(), pa.grad_buffer().ptr());
    if (pb.requires_grad)
      kernels::gemm_tn<T>(K, N, M, pa.value.ptr(), n.grad.ptr(), pb.grad_buffer().ptr());
  });
}

/// [m,k] x [n,k]^T
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  require_rank(a.value(), 2, "matmul_nt lhs");
  require_rank(b.value(), 2, "matmul_nt rhs");
  const std::size_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[0];
  if (b.shape()[1] != K)
    throw DimensionError("matmul_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  Tensor<T> out(Shape{M, N});
  kernels::gemm_nt<T>(M, N, K, a.value().ptr(), b.value().ptr(), out.ptr());
  return make_op<T>(std::move(out), {a, b}, [M, N, K](Node<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad)
      kernels::gemm_nn<T>(M, K, N, n.grad.ptr(), pb.value.ptr(), pa.grad_buffer().ptr());
    if (pb.requires_grad)
      kernels::gemm_tn<T>(N, K, M, n.grad.ptr(), pa.value.ptr(), pb.grad_buffer().ptr());
  });
}

/// Adds b[n] to every row of x[m,n].
template <class T>
Var<T> add_row_bias(const Var<T>& x, const Var<T>& b) {
  require_rank(x.value(), 2, "add_row_bias");
  const std::size_t M = x.shape()[0], N = x.shape()[1];
  require_shape(b.value(), Shape{N}, "add_row_bias bias");
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) out[i * N + j] += b.value()[j];
  return make_op<T>(std::move(out), {x, b}, [M, N](Node<T>& n) {
    auto& px = *n.parents[0];
    auto& pb = *n.parents[1];
    if (px.requires_grad) {
      auto& g = px.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) g[j] += n.grad[i * N + j];
    }
  });
}

namespace detail {
template <class T>
void softmax_inplace(T* v, std::size_t n) {
  T mx = v[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, v[i]);
  T s{0};
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = std::exp(v[i] - mx);
    s += v[i];
  }
  for (std::size_t i = 0; i < n; ++i) v[i] /= s;
}

template <class T>
void softmax_backward_row(const T* y, const T* gy, T* gx, std::size_t n) {
  T dot{0};
  for (std::size_t i = 0; i < n; ++i) dot += y[i] * gy[i];
  for (std::size_t i = 0; i < n; ++i) gx[i] += y[i] * (gy[i] - dot);
}
}  // namespace detail

template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.empty()) throw DimensionError("softmax of empty tensor");
  Tensor<T> out = logits;
  detail::softmax_inplace(out.ptr(), out.size());
  return out;
}

template <class T>
Var<T> softmax(const Var<T>& logits) {
  return make_op<T>(softmax(logits.value()), {logits}, [](Node<T>& n) {
    detail::softmax_backward_row(n.value.ptr(), n.grad.ptr(), n.parents[0]->grad_buffer().ptr(),
                                 n.value.size());
  });
}

/// Row-wise softmax of x[m,n].
template <class T>
Var<T> softmax_rows(const Var<T>& x) {
  require_rank(x.value(), 2, "softmax_rows");
  const std::size_t M = x.shape()[0], N = x.shape()[1];
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < M; ++i) detail::softmax_inplace(out.ptr() + i * N, N);
  return make_op<T>(std::move(out), {x}, [M, N](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < M; ++i)
      detail::softmax_backward_row(n.value.ptr() + i * N, n.grad.ptr() + i * N, g.ptr() + i * N, N);
  });
}

/// Concatenates flattened inputs into one vector.
template <class T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat of nothing");
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  Tensor<T> out(Shape{total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.ptr() + off);
    off += p.size();
  }
  return make_op<T>(std::move(out), parts, [](Node<T>& n) {
    std::size_t off = 0;
    for (auto& p : n.parents) {
      const std::size_t len = p->value.size();
      if (p->requires_grad) {
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < len; ++i) g[i] += n.grad[off + i];
      }
      off += len;
    }
  });
}

/// Contiguous sub-vector [offset, offset+len) of a flattened tensor.
template <class T>
Var<T> slice(const Var<T>& x, std::size_t offset, std::size_t len) {
  if (offset + len > x.size() || len == 0)
    throw DimensionError("slice out of range: " + std::to_string(offset) + "+" + std::to_string(len) +
                         " of " + std::to_string(x.size()));
  Tensor<T> out(Shape{len});
  std::copy_n(x.value().ptr() + offset, len, out.ptr());
  return make_op<T>(std::move(out), {x}, [offset, len](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < len; ++i) g[offset + i] += n.grad[i];
  });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  return make_op<T>(x.value().reshaped(std::move(shape)), {x}, [](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

template <class T>
Var<T> flatten(const Var<T>& x) { return reshape(x, Shape{x.size()}); }

/// Stacks T vectors of length n into a [T,n] matrix.
template <class T>
Var<T> stack_rows(const std::vector<Var<T>>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows of nothing");
  const std::size_t n = rows.front().size();
  for (const auto& r : rows)
    if (r.size() != n) throw DimensionError("stack_rows: ragged rows");
  return reshape(concat(rows), Shape{rows.size(), n});
}

/// Mean over rows of x[m,n] -> [n].
template <class T>
Var<T> mean_rows(const Var<T>& x) {
  require_rank(x.value(), 2, "mean_rows");
  const std::size_t M = x.shape()[0], N = x.shape()[1];
  Tensor<T> out(Shape{N});
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) out[j] += x.value()[i * N + j];
  for (auto& v : out.data()) v /= static_cast<T>(M);
  return make_op<T>(std::move(out), {x}, [M, N](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    const T inv = T{1} / static_cast<T>(M);
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j) g[i * N + j] += n.grad[j] * inv;
  });
}

template <class T>
Var<T> sum(const Var<T>& x) {
  return make_op<T>(Tensor<T>::scalar(x.value().sum()), {x}, [](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (auto& v : g.data()) v += n.grad[0];
  });
}

/// Sum of elementwise product with a constant tensor.
template <class T>
Var<T> dot(const Var<T>& x, const Tensor<T>& w) {
  if (x.size() != w.size()) throw DimensionError("dot: length mismatch");
  T acc{0};
  for (std::size_t i = 0; i < w.size(); ++i) acc += x.value()[i] * w[i];
  return make_op<T>(Tensor<T>::scalar(acc), {x}, [w](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0] * w[i];
  });
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& W, const Var<T>& b, Pair stride, Pair pad) {
  const bool keep_cols = grad_enabled() && (W.requires_grad() || x.requires_grad() || b.requires_grad());
  std::vector<T> cols;
  Tensor<T> out = conv2d_forward(x.value(), W.value(), b.value(), stride, pad,
                                 keep_cols ? &cols : nullptr);
  const auto g = kernels::conv_geometry(x.shape(), W.shape(), stride, pad);
  return make_op<T>(std::move(out), {x, W, b}, [g, cols = std::move(cols)](Node<T>& n) {
    auto& px = *n.parents[0];
    auto& pw = *n.parents[1];
    auto& pb = *n.parents[2];
    const std::size_t P = g.oh * g.ow, R = g.c_in * g.kh * g.kw;
    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      for (std::size_t o = 0; o < g.c_out; ++o) {
        T s{0};
        for (std::size_t p = 0; p < P; ++p) s += n.grad[o * P + p];
        gb[o] += s;
      }
    }
    if (pw.requires_grad)
      kernels::gemm_nt<T>(g.c_out, R, P, n.grad.ptr(), cols.data(), pw.grad_buffer().ptr());
    if (px.requires_grad) {
      std::vector<T> dcols(R * P, T{0});
      kernels::gemm_tn<T>(R, P, g.c_out, pw.value.ptr(), n.grad.ptr(), dcols.data());
      kernels::col2im_add(dcols.data(), g, px.grad_buffer().ptr());
    }
  });
}

/// Routes each output gradient to its recorded argmax only.
template <class T>
Var<T> maxpool2d(const Var<T>& x, Pair kernel, Pair stride) {
  auto r = maxpool2d_forward(x.value(), kernel, stride);
  return make_op<T>(std::move(r.values), {x}, [argmax = std::move(r.argmax)](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += n.grad[o];
  });
}

/// Mean over the spatial extent of x[C,H,W] -> [C].
template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  require_rank(x.value(), 3, "global_avg_pool");
  const std::size_t C = x.shape()[0], P = x.shape()[1] * x.shape()[2];
  Tensor<T> out(Shape{C});
  for (std::size_t c = 0; c < C; ++c) {
    T s{0};
    for (std::size_t p = 0; p < P; ++p) s += x.value()[c * P + p];
    out[c] = s / static_cast<T>(P);
  }
  return make_op<T>(std::move(out), {x}, [C, P](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    const T inv = T{1} / static_cast<T>(P);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) g[c * P + p] += n.grad[c] * inv;
  });
}

// ---------------------------------------------------------------------------
// Losses

inline constexpr double kLogEpsilon = 1e-12;

/// -weights[label] * ln(probs[label] + 1e-12)
template <class T>
T weighted_cross_entropy(const Tensor<T>& probs, std::size_t label, std::span<const T> weights) {
  if (label >= probs.size())
    throw IndexError("label " + std::to_string(label) + " out of range for " +
                     std::to_string(probs.size()) + " classes");
  if (weights.size() != probs.size()) throw DimensionError("class weight count mismatch");
  return -weights[label] * std::log(probs[label] + static_cast<T>(kLogEpsilon));
}

/// Softmax followed by weighted cross-entropy, differentiated with respect to
/// the logits: d/dlogits = weights[label] * (probs - onehot(label)).
template <class T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::size_t label, std::span<const T> weights) {
  Tensor<T> probs = softmax(logits.value());
  const T loss = weighted_cross_entropy(probs, label, std::span<const T>(weights));
  if (!std::isfinite(loss)) throw NumericError("non-finite loss");
  const T w = weights[label];
  return make_op<T>(Tensor<T>::scalar(loss), {logits},
                    [probs = std::move(probs), label, w](Node<T>& n) {
                      auto& g = n.parents[0]->grad_buffer();
                      for (std::size_t i = 0; i < g.size(); ++i)
                        g[i] += n.grad[0] * w * (probs[i] - (i == label ? T{1} : T{0}));
                    });
}

}  // namespace clue
