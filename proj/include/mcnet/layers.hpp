#pragma once

// Differentiable layers: kernels as free functions in `mcnet::ops`, wrapped
// by stateful Layer objects that own parameters and the forward cache.
//
// Convolution is cross-correlation (no kernel flip). Max-based layers route
// gradient to the lowest linear index among tied maxima.

#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mcnet/errors.hpp"
#include "mcnet/rng.hpp"
#include "mcnet/tensor.hpp"

namespace mcnet {

enum class Mode { train, eval };

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Non-trainable state (batchnorm running statistics).
template <typename T>
struct BufferRef {
  std::string name;
  Tensor<T>* tensor;
};

/// Static cost of one layer at a given input shape. `macs` covers
/// multiply-accumulates (conv, linear); `elementwise` counts one op per
/// output element for pools, activations, normalizers and skip adds.
struct LayerCost {
  Shape output;
  std::size_t params = 0;
  std::size_t macs = 0;
  std::size_t elementwise = 0;

  LayerCost& operator+=(const LayerCost& o) {
    output = o.output;
    params += o.params;
    macs += o.macs;
    elementwise += o.elementwise;
    return *this;
  }
};

namespace detail {

/// Set while diagnosing a non-finite loss: composites record the first
/// child whose output contains NaN/Inf.
inline thread_local std::string* nonfinite_probe = nullptr;

template <typename T>
void probe_output(std::string_view layer_name, const Tensor<T>& out) {
  if (nonfinite_probe && nonfinite_probe->empty() && !out.all_finite())
    *nonfinite_probe = std::string(layer_name);
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Kernels

namespace ops {

template <typename T>
struct ConvCache {
  Tensor<T> x;
  Tensor<T> weight;
  std::size_t stride = 1;
  std::size_t pad = 0;
  bool has_bias = false;
  std::vector<T> cols;  // [Cin*k*k, B*OH*OW] from the forward pass; rebuilt when empty
};

template <typename T>
struct ConvGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_weight;
  Tensor<T> grad_bias;  // empty when the convolution has no bias
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

/// Output columns [lo, hi) whose input column ow*stride + kw - pad lies in [0, W).
inline std::pair<std::size_t, std::size_t> valid_cols(std::size_t W, std::size_t OW, std::size_t kw,
                                                      std::size_t stride, std::size_t pad) {
  const long s = static_cast<long>(stride), off = static_cast<long>(kw) - static_cast<long>(pad);
  const long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  const long last = static_cast<long>(W) - 1 - off;  // need ow*s <= last
  long hi = last < 0 ? 0 : last / s + 1;
  hi = std::min(hi, static_cast<long>(OW));
  return {static_cast<std::size_t>(std::min(lo, hi)), static_cast<std::size_t>(hi)};
}

/// Column block [Cin*k*k, OH*OW] of one image with row stride `ld`;
/// out-of-bounds taps read 0.
template <typename T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t OH, std::size_t OW, T* col, std::size_t ld) {
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t kh = 0; kh < k; ++kh)
      for (std::size_t kw = 0; kw < k; ++kw) {
        T* dst = col + ((c * k + kh) * k + kw) * ld;
        const auto [lo, hi] = valid_cols(W, OW, kw, stride, pad);
        for (std::size_t oh = 0; oh < OH; ++oh) {
          const long ih = static_cast<long>(oh * stride + kh) - static_cast<long>(pad);
          T* drow = dst + oh * OW;
          if (ih < 0 || ih >= static_cast<long>(H) || lo >= hi) {
            std::fill(drow, drow + OW, T(0));
            continue;
          }
          const T* xr = x + (c * H + static_cast<std::size_t>(ih)) * W;
          const long off = static_cast<long>(kw) - static_cast<long>(pad);
          std::fill(drow, drow + lo, T(0));
          if (stride == 1)
            std::copy(xr + (static_cast<long>(lo) + off), xr + (static_cast<long>(hi) + off), drow + lo);
          else
            for (std::size_t ow = lo; ow < hi; ++ow) drow[ow] = xr[static_cast<long>(ow * stride) + off];
          std::fill(drow + hi, drow + OW, T(0));
        }
      }
}

/// Scatter-add of a column block (row stride `ld`) back onto an image.
template <typename T>
void col2im_add(const T* col, std::size_t C, std::size_t H, std::size_t W, std::size_t k, std::size_t stride,
                std::size_t pad, std::size_t OH, std::size_t OW, T* x, std::size_t ld) {
  const long s = static_cast<long>(stride), p = static_cast<long>(pad);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t kh = 0; kh < k; ++kh)
      for (std::size_t kw = 0; kw < k; ++kw) {
        const T* src = col + ((c * k + kh) * k + kw) * ld;
        for (std::size_t oh = 0; oh < OH; ++oh) {
          const long ih = static_cast<long>(oh) * s + static_cast<long>(kh) - p;
          if (ih < 0 || ih >= static_cast<long>(H)) continue;
          T* xr = x + (c * H + static_cast<std::size_t>(ih)) * W;
          const T* srow = src + oh * OW;
          const auto [lo, hi] = valid_cols(W, OW, kw, stride, pad);
          const long off = static_cast<long>(kw) - p;
          for (std::size_t ow = lo; ow < hi; ++ow) xr[static_cast<long>(ow) * s + off] += srow[ow];
        }
      }
}

/// C[M,N] += op(A) * B with B [K,N] row-major; op(A) is A [M,K], or A^T for
/// A stored [K,M]. Blocked 8 rows x 32 columns so the block's accumulators
/// stay in registers. Every C entry is summed over k in ascending order, so
/// the result does not depend on the blocking.
template <typename T, bool TransA>
void gemm_add(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  constexpr std::size_t R = 8;
  auto a_at = [&](std::size_t i, std::size_t kk) { return TransA ? A[kk * M + i] : A[i * K + kk]; };
  auto block = [&]<std::size_t J>(std::size_t i, std::size_t j0) {
    T acc[R][J];
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t l = 0; l < J; ++l) acc[r][l] = C[(i + r) * N + j0 + l];
    for (std::size_t kk = 0; kk < K; ++kk) {
      const T* b = B + kk * N + j0;
      for (std::size_t r = 0; r < R; ++r) {
        const T a = a_at(i + r, kk);
        for (std::size_t l = 0; l < J; ++l) acc[r][l] += a * b[l];
      }
    }
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t l = 0; l < J; ++l) C[(i + r) * N + j0 + l] = acc[r][l];
  };
  auto rows = [&](std::size_t i, std::size_t count, std::size_t j0) {
    for (std::size_t r = i; r < i + count; ++r) {
      T* crow = C + r * N;
      for (std::size_t kk = 0; kk < K; ++kk) {
        const T a = a_at(r, kk);
        const T* brow = B + kk * N;
        for (std::size_t j = j0; j < N; ++j) crow[j] += a * brow[j];
      }
    }
  };
  std::size_t i = 0;
  for (; i + R <= M; i += R) {
    std::size_t j = 0;
    for (; j + 32 <= N; j += 32) block.template operator()<32>(i, j);
    for (; j + 16 <= N; j += 16) block.template operator()<16>(i, j);
    if (j < N) rows(i, R, j);
  }
  if (i < M) rows(i, M - i, 0);
}

/// C[M,N] += A[M,K] * B[N,K]^T. Each entry is a dot product accumulated in
/// 16 interleaved lanes, then summed lane by lane in a fixed order.
template <typename T>
void gemm_nt_add(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  constexpr std::size_t L = 16, RA = 4, RB = 2;
  const std::size_t Kv = K - K % L;
  auto finish = [&](const T* lanes, const T* a, const T* b) {
    T s = 0;
    for (std::size_t l = 0; l < L; ++l) s += lanes[l];
    for (std::size_t kk = Kv; kk < K; ++kk) s += a[kk] * b[kk];
    return s;
  };
  std::size_t i = 0;
  for (; i + RA <= M; i += RA) {
    std::size_t j = 0;
    for (; j + RB <= N; j += RB) {
      T acc[RA][RB][L] = {};
      for (std::size_t kk = 0; kk < Kv; kk += L)
        for (std::size_t r = 0; r < RA; ++r)
          for (std::size_t q = 0; q < RB; ++q) {
            const T* a = A + (i + r) * K + kk;
            const T* b = B + (j + q) * K + kk;
            for (std::size_t l = 0; l < L; ++l) acc[r][q][l] += a[l] * b[l];
          }
      for (std::size_t r = 0; r < RA; ++r)
        for (std::size_t q = 0; q < RB; ++q)
          C[(i + r) * N + j + q] += finish(acc[r][q], A + (i + r) * K, B + (j + q) * K);
    }
    for (; j < N; ++j)
      for (std::size_t r = 0; r < RA; ++r) {
        T acc[L] = {};
        const T* a = A + (i + r) * K;
        const T* b = B + j * K;
        for (std::size_t kk = 0; kk < Kv; kk += L)
          for (std::size_t l = 0; l < L; ++l) acc[l] += a[kk + l] * b[kk + l];
        C[(i + r) * N + j] += finish(acc, a, b);
      }
  }
  for (; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      T acc[L] = {};
      const T* a = A + i * K;
      const T* b = B + j * K;
      for (std::size_t kk = 0; kk < Kv; kk += L)
        for (std::size_t l = 0; l < L; ++l) acc[l] += a[kk + l] * b[kk + l];
      C[i * N + j] += finish(acc, a, b);
    }
}

/// Reusable per-thread work buffer; avoids re-faulting large temporaries.
template <typename T, int Slot>
std::vector<T>& scratch(std::size_t n) {
  thread_local std::vector<T> buf;
  buf.resize(n);
  return buf;
}

inline bool is_pointwise(std::size_t k, std::size_t stride, std::size_t pad) {
  return k == 1 && stride == 1 && pad == 0;
}

}  // namespace detail

/// x: [B,Cin,H,W], weight: [Cout,Cin,k,k], bias: [Cout] or null.
/// The batch is lowered to columns [Cin*k*k, B*OH*OW] and multiplied once by
/// weight [Cout, Cin*k*k]. When `cols_out` is given the columns are kept there.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                         std::size_t stride, std::size_t pad, std::vector<T>* cols_out = nullptr) {
  mcnet::detail::require(x.rank() == 4 && weight.rank() == 4,
                         "conv expects x [B,C,H,W] and weight [Cout,Cin,k,k]");
  const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = weight.dim(0), k = weight.dim(2);
  mcnet::detail::require(weight.dim(1) == Ci,
                         "conv channel mismatch: input has " + std::to_string(Ci) +
                             " channels, weight expects " + std::to_string(weight.dim(1)));
  mcnet::detail::require(weight.dim(3) == k, "conv kernel must be square");
  if (stride == 0) throw ShapeError("conv stride must be positive");
  mcnet::detail::require(H + 2 * pad >= k && W + 2 * pad >= k,
                         "conv input " + x.shape().str() + " smaller than kernel");
  const std::size_t OH = conv_out_extent(H, k, stride, pad);
  const std::size_t OW = conv_out_extent(W, k, stride, pad);
  const std::size_t P = OH * OW, K = Ci * k * k, BP = B * P;

  std::vector<T>& cols = cols_out ? *cols_out : detail::scratch<T, 0>(K * BP);
  cols.resize(K * BP);
  for (std::size_t b = 0; b < B; ++b)
    detail::im2col(x.data().data() + b * Ci * H * W, Ci, H, W, k, stride, pad, OH, OW, cols.data() + b * P, BP);
  std::vector<T>& prod = detail::scratch<T, 1>(Co * BP);
  std::fill(prod.begin(), prod.end(), T(0));
  detail::gemm_add<T, false>(Co, BP, K, weight.data().data(), cols.data(), prod.data());

  Tensor<T> out(Shape{B, Co, OH, OW});
  T* o = out.data().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Co; ++co) {
      const T* src = prod.data() + co * BP + b * P;
      T* dst = o + (b * Co + co) * P;
      const T add = bias ? (*bias)[co] : T(0);
      for (std::size_t i = 0; i < P; ++i) dst[i] = src[i] + add;
    }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const ConvCache<T>* cache) {
  if (!cache || cache->x.empty()) throw ContractError("conv backward called without a forward cache");
  const Tensor<T>& x = cache->x;
  const Tensor<T>& weight = cache->weight;
  const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = weight.dim(0), k = weight.dim(2);
  const std::size_t stride = cache->stride, pad = cache->pad;
  const std::size_t OH = conv_out_extent(H, k, stride, pad);
  const std::size_t OW = conv_out_extent(W, k, stride, pad);
  const std::size_t P = OH * OW, K = Ci * k * k, BP = B * P;
  mcnet::detail::require(grad_out.shape() == Shape({B, Co, OH, OW}),
                         "conv grad_out shape " + grad_out.shape().str() + " does not match forward");

  ConvGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(weight.shape()), {}};
  if (cache->has_bias) g.grad_bias = Tensor<T>(Shape{Co});

  const T* cols = cache->cols.data();
  if (cache->cols.size() != K * BP) {
    std::vector<T>& rebuilt = detail::scratch<T, 0>(K * BP);
    for (std::size_t b = 0; b < B; ++b)
      detail::im2col(x.data().data() + b * Ci * H * W, Ci, H, W, k, stride, pad, OH, OW, rebuilt.data() + b * P,
                     BP);
    cols = rebuilt.data();
  }

  // G [Co, B*P]
  std::vector<T>& G = detail::scratch<T, 1>(Co * BP);
  const T* go = grad_out.data().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Co; ++co)
      std::copy(go + (b * Co + co) * P, go + (b * Co + co + 1) * P, G.data() + co * BP + b * P);
  if (cache->has_bias)
    for (std::size_t co = 0; co < Co; ++co) {
      T acc = 0;
      for (std::size_t i = 0; i < BP; ++i) acc += G[co * BP + i];
      g.grad_bias[co] = acc;
    }
  // dW [Co,K] = G * cols^T
  detail::gemm_nt_add(Co, K, BP, G.data(), cols, g.grad_weight.data().data());
  // dcols [K, B*P] = W^T * G, scattered back per image
  std::vector<T>& gcol = detail::scratch<T, 2>(K * BP);
  std::fill(gcol.begin(), gcol.end(), T(0));
  detail::gemm_add<T, true>(K, BP, Co, weight.data().data(), G.data(), gcol.data());
  for (std::size_t b = 0; b < B; ++b)
    detail::col2im_add(gcol.data() + b * P, Ci, H, W, k, stride, pad, OH, OW,
                       g.grad_x.data().data() + b * Ci * H * W, BP);
  return g;
}

template <typename T>
struct PoolResult {
  Tensor<T> out;
  std::vector<std::size_t> argmax;  // linear input index per output element
};

/// Window 2, stride 2, floor on odd extents.
template <typename T>
PoolResult<T> maxpool2x2_forward(const Tensor<T>& x) {
  mcnet::detail::require(x.rank() == 4, "maxpool expects [B,C,H,W]");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  mcnet::detail::require(H >= 2 && W >= 2, "maxpool2x2 input " + x.shape().str() + " smaller than window");
  const std::size_t OH = H / 2, OW = W / 2;
  PoolResult<T> r{Tensor<T>(Shape{B, C, OH, OW}), std::vector<std::size_t>(B * C * OH * OW)};
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const std::size_t base = bc * H * W;
    for (std::size_t oh = 0; oh < OH; ++oh) {
      for (std::size_t ow = 0; ow < OW; ++ow, ++o) {
        std::size_t best = base + (2 * oh) * W + 2 * ow;
        for (std::size_t dh = 0; dh < 2; ++dh)
          for (std::size_t dw = 0; dw < 2; ++dw) {
            const std::size_t idx = base + (2 * oh + dh) * W + 2 * ow + dw;
            if (x[idx] > x[best] || (std::isnan(x[idx]) && !std::isnan(x[best]))) best = idx;
          }
        r.out[o] = x[best];
        r.argmax[o] = best;
      }
    }
  }
  return r;
}

/// Adaptive max pooling with PyTorch's window rule:
/// rows [floor(i*H/OH), ceil((i+1)*H/OH)).
template <typename T>
PoolResult<T> adaptive_maxpool_forward(const Tensor<T>& x, std::size_t OH, std::size_t OW) {
  mcnet::detail::require(x.rank() == 4, "adaptive maxpool expects [B,C,H,W]");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (OH == 0 || OW == 0) throw ShapeError("adaptive maxpool output size must be positive");
  PoolResult<T> r{Tensor<T>(Shape{B, C, OH, OW}), std::vector<std::size_t>(B * C * OH * OW)};
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const std::size_t base = bc * H * W;
    for (std::size_t i = 0; i < OH; ++i) {
      const std::size_t h0 = i * H / OH, h1 = ((i + 1) * H + OH - 1) / OH;
      for (std::size_t j = 0; j < OW; ++j, ++o) {
        const std::size_t w0 = j * W / OW, w1 = ((j + 1) * W + OW - 1) / OW;
        std::size_t best = base + h0 * W + w0;
        for (std::size_t h = h0; h < h1; ++h)
          for (std::size_t w = w0; w < w1; ++w) {
            const std::size_t idx = base + h * W + w;
            if (x[idx] > x[best] || (std::isnan(x[idx]) && !std::isnan(x[best]))) best = idx;
          }
        r.out[o] = x[best];
        r.argmax[o] = best;
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& grad_out, const std::vector<std::size_t>& argmax,
                           const Shape& input_shape) {
  if (argmax.empty()) throw ContractError("pool backward called without a forward cache");
  mcnet::detail::require(grad_out.numel() == argmax.size(), "pool grad_out size mismatch");
  Tensor<T> gx(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += grad_out[o];
  return gx;
}

template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
  Mode mode = Mode::train;
};

/// Per-channel statistics over (B,H,W). Accepts [B,C,H,W] or [B,C].
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                            Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                            T momentum, T eps, BatchNormCache<T>* cache) {
  mcnet::detail::require(x.rank() == 4 || x.rank() == 2, "batchnorm expects [B,C,H,W] or [B,C]");
  const std::size_t B = x.dim(0), C = x.dim(1);
  const std::size_t HW = x.numel() / (B * C);
  mcnet::detail::require(gamma.numel() == C && beta.numel() == C,
                         "batchnorm parameters have " + std::to_string(gamma.numel()) +
                             " channels, input has " + std::to_string(C));
  const std::size_t n = B * HW;
  Tensor<T> y(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> inv_std(C);

  for (std::size_t c = 0; c < C; ++c) {
    T mean, var;
    if (mode == Mode::train) {
      T s = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) s += x[(b * C + c) * HW + i];
      mean = s / static_cast<T>(n);
      T ss = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) {
          const T d = x[(b * C + c) * HW + i] - mean;
          ss += d * d;
        }
      var = ss / static_cast<T>(n);
      const T unbiased = n > 1 ? ss / static_cast<T>(n - 1) : var;
      running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mean;
      running_var[c] = (T(1) - momentum) * running_var[c] + momentum * unbiased;
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[c] = is;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t idx = (b * C + c) * HW + i;
        const T xh = (x[idx] - mean) * is;
        xhat[idx] = xh;
        y[idx] = gamma[c] * xh + beta[c];
      }
  }
  if (cache) *cache = BatchNormCache<T>{std::move(xhat), std::move(inv_std), mode};
  return y;
}

template <typename T>
struct BatchNormGrads {
  Tensor<T> grad_x, grad_gamma, grad_beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const Tensor<T>& gamma,
                                     const BatchNormCache<T>* cache) {
  if (!cache || cache->xhat.empty()) throw ContractError("batchnorm backward called without a forward cache");
  const Tensor<T>& xhat = cache->xhat;
  mcnet::detail::require(grad_out.shape() == xhat.shape(), "batchnorm grad_out shape mismatch");
  const std::size_t B = xhat.dim(0), C = xhat.dim(1);
  const std::size_t HW = xhat.numel() / (B * C);
  const T n = static_cast<T>(B * HW);
  BatchNormGrads<T> g{Tensor<T>(xhat.shape()), Tensor<T>(Shape{C}), Tensor<T>(Shape{C})};
  for (std::size_t c = 0; c < C; ++c) {
    T sg = 0, sgx = 0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t idx = (b * C + c) * HW + i;
        sg += grad_out[idx];
        sgx += grad_out[idx] * xhat[idx];
      }
    g.grad_beta[c] = sg;
    g.grad_gamma[c] = sgx;
    const T scale = gamma[c] * cache->inv_std[c];
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t idx = (b * C + c) * HW + i;
        if (cache->mode == Mode::train)
          g.grad_x[idx] = scale / n * (n * grad_out[idx] - sg - xhat[idx] * sgx);
        else
          g.grad_x[idx] = scale * grad_out[idx];
      }
  }
  return g;
}

/// x: [B,F] (or any rank, flattened after the batch axis), weight: [F,N], bias: [N].
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias) {
  const std::size_t B = x.dim(0);
  const std::size_t F = x.numel() / B;
  mcnet::detail::require(weight.rank() == 2 && weight.dim(0) == F,
                         "linear expects " + std::to_string(weight.rank() == 2 ? weight.dim(0) : 0) +
                             " input features, got " + std::to_string(F));
  const std::size_t N = weight.dim(1);
  Tensor<T> y(Shape{B, N});
  for (std::size_t b = 0; b < B; ++b) {
    T* yr = y.data().data() + b * N;
    if (bias)
      for (std::size_t n = 0; n < N; ++n) yr[n] = (*bias)[n];
    for (std::size_t f = 0; f < F; ++f) {
      const T xv = x[b * F + f];
      const T* wr = weight.data().data() + f * N;
      for (std::size_t n = 0; n < N; ++n) yr[n] += xv * wr[n];
    }
  }
  return y;
}

template <typename T>
struct LinearGrads {
  Tensor<T> grad_x, grad_weight, grad_bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& weight,
                               bool has_bias) {
  if (x.empty()) throw ContractError("linear backward called without a forward cache");
  const std::size_t B = x.dim(0), F = x.numel() / B, N = weight.dim(1);
  mcnet::detail::require(grad_out.shape() == Shape({B, N}), "linear grad_out shape mismatch");
  LinearGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(weight.shape()), {}};
  if (has_bias) g.grad_bias = Tensor<T>(Shape{N});
  for (std::size_t b = 0; b < B; ++b) {
    const T* gr = grad_out.data().data() + b * N;
    if (has_bias)
      for (std::size_t n = 0; n < N; ++n) g.grad_bias[n] += gr[n];
    for (std::size_t f = 0; f < F; ++f) {
      const T xv = x[b * F + f];
      const T* wr = weight.data().data() + f * N;
      T* gwr = g.grad_weight.data().data() + f * N;
      T acc = 0;
      for (std::size_t n = 0; n < N; ++n) {
        gwr[n] += xv * gr[n];
        acc += gr[n] * wr[n];
      }
      g.grad_x[b * F + f] = acc;
    }
  }
  return g;
}

/// ln(1 + e^x) without overflow: x + ln(1 + e^-x) for positive x.
template <typename T>
T softplus(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// d/dx softplus = logistic(x).
template <typename T>
T logistic(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> add_skip(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape()))
    throw ShapeError("skip connection shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
  return add(a, b);
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Layer objects

template <typename T>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  [[nodiscard]] const std::string& name() const { return name_; }
  [[nodiscard]] virtual std::string_view kind() const = 0;

  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;

  /// Output shape and cost at input shape `in`; throws ShapeError when the
  /// layer cannot accept `in`.
  [[nodiscard]] virtual LayerCost cost(const Shape& in) const = 0;

  virtual void collect_parameters(std::vector<Parameter<T>*>& /*out*/) {}
  virtual void collect_buffers(std::vector<BufferRef<T>>& /*out*/) {}

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    collect_parameters(out);
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->grad.fill(T(0));
  }

 private:
  std::string name_;
};

template <typename T>
using LayerPtr = std::unique_ptr<Layer<T>>;

namespace detail {

template <typename T>
Parameter<T> make_param(const std::string& owner, const char* suffix, Tensor<T> value) {
  Tensor<T> grad(value.shape());
  return Parameter<T>{owner + "." + suffix, std::move(value), std::move(grad)};
}

/// He-style fan-in uniform bound sqrt(6 / fan_in).
template <typename T>
Tensor<T> he_uniform(Shape shape, std::size_t fan_in, SeededRng& rng) {
  const T bound = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in)));
  return Tensor<T>::uniform(shape, -bound, bound, rng);
}

}  // namespace detail

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t stride, std::size_t pad, bool bias, SeededRng& rng)
      : Layer<T>(std::move(name)), stride_(stride), pad_(pad) {
    if (kernel == 0 || in_channels == 0 || out_channels == 0 || stride == 0)
      throw ShapeError("conv extents must be positive");
    const std::size_t fan_in = in_channels * kernel * kernel;
    weight_ = detail::make_param(this->name(), "weight",
                                 detail::he_uniform<T>(Shape{out_channels, in_channels, kernel, kernel},
                                                       fan_in, rng));
    if (bias) {
      const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
      bias_ = detail::make_param(this->name(), "bias",
                                 Tensor<T>::uniform(Shape{out_channels}, -bound, bound, rng));
    }
  }

  [[nodiscard]] std::string_view kind() const override {
    return kernel() == 1 ? "conv1x1" : "conv3x3";
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    cache_ = ops::ConvCache<T>{x, weight_.value, stride_, pad_, bias_.has_value(), {}};
    return ops::conv2d_forward(x, weight_.value, bias_ ? &bias_->value : nullptr, stride_, pad_, &cache_->cols);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    auto g = ops::conv2d_backward(grad_out, cache_ ? &*cache_ : nullptr);
    add_inplace(weight_.grad, g.grad_weight);
    if (bias_) add_inplace(bias_->grad, g.grad_bias);
    return std::move(g.grad_x);
  }

  [[nodiscard]] LayerCost cost(const Shape& in) const override {
    const std::size_t k = kernel();
    detail::require(in.rank() == 4 && in[1] == in_channels(),
                    this->name() + ": expected " + std::to_string(in_channels()) +
                        " input channels, got shape " + in.str());
    detail::require(in[2] + 2 * pad_ >= k && in[3] + 2 * pad_ >= k,
                    this->name() + ": input " + in.str() + " smaller than kernel");
    const std::size_t OH = ops::conv_out_extent(in[2], k, stride_, pad_);
    const std::size_t OW = ops::conv_out_extent(in[3], k, stride_, pad_);
    LayerCost c;
    c.output = Shape{in[0], out_channels(), OH, OW};
    c.params = weight_.value.numel() + (bias_ ? bias_->value.numel() : 0);
    c.macs = in[0] * out_channels() * OH * OW * in_channels() * k * k;
    return c;
  }

  void collect_parameters(std::vector<Parameter<T>*>& out) override {
    out.push_back(&weight_);
    if (bias_) out.push_back(&*bias_);
  }

  [[nodiscard]] std::size_t kernel() const { return weight_.value.dim(2); }
  [[nodiscard]] std::size_t in_channels() const { return weight_.value.dim(1); }
  [[nodiscard]] std::size_t out_channels() const { return weight_.value.dim(0); }
  [[nodiscard]] std::size_t stride() const { return stride_; }
  [[nodiscard]] bool has_bias() const { return bias_.has_value(); }
  Parameter<T>& weight() { return weight_; }

 private:
  std::size_t stride_, pad_;
  Parameter<T> weight_;
  std::optional<Parameter<T>> bias_;
  std::optional<ops::ConvCache<T>> cache_;
};

template <typename T>
class MaxPool2x2 final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  [[nodiscard]] std::string_view kind() const override { return "maxpool2x2"; }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    auto r = ops::maxpool2x2_forward(x);
    in_shape_ = x.shape();
    argmax_ = std::move(r.argmax);
    return std::move(r.out);
  }
  Tensor<T> backward(const Tensor<T>& g) override { return ops::maxpool_backward(g, argmax_, in_shape_); }

  [[nodiscard]] LayerCost cost(const Shape& in) const override {
    detail::require(in.rank() == 4 && in[2] >= 2 && in[3] >= 2,
                    this->name() + ": input " + in.str() + " too small for 2x2 pooling");
    LayerCost c;
    c.output = Shape{in[0], in[1], in[2] / 2, in[3] / 2};
    c.elementwise = c.output.numel();
    return c;
  }

 private:
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

template <typename T>
class AdaptiveMaxPool final : public Layer<T> {
 public:
  AdaptiveMaxPool(std::string name, std::size_t out_h = 1, std::size_t out_w = 1)
      : Layer<T>(std::move(name)), out_h_(out_h), out_w_(out_w) {}
  [[nodiscard]] std::string_view kind() const override { return "adaptive_maxpool"; }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    auto r = ops::adaptive_maxpool_forward(x, out_h_, out_w_);
    in_shape_ = x.shape();
    argmax_ = std::move(r.argmax);
    return std::move(r.out);
  }
  Tensor<T> backward(const Tensor<T>& g) override { return ops::maxpool_backward(g, argmax_, in_shape_); }

  [[nodiscard]] LayerCost cost(const Shape& in) const override {
    detail::require(in.rank() == 4, this->name() + ": expected [B,C,H,W]");
    LayerCost c;
    c.output = Shape{in[0], in[1], out_h_, out_w_};
    c.elementwise = c.output.numel();
    return c;
  }

 private:
  std::size_t out_h_, out_w_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

template <typename T>
class BatchNorm2d final : public Layer<T> {
 public:
  BatchNorm2d(std::string name, std::size_t channels, T momentum = T(0.1), T eps = T(1e-5))
      : Layer<T>(std::move(name)),
        momentum_(momentum),
        eps_(eps),
        gamma_(detail::make_param(this->name(), "gamma", Tensor<T>(Shape{channels}, T(1)))),
        beta_(detail::make_param(this->name(), "beta", Tensor<T>(Shape{channels}, T(0)))),
        running_mean_(Shape{channels}, T(0)),
        running_var_(Shape{channels}, T(1)) {}

  [[nodiscard]] std::string_view kind() const override { return "batchnorm2d"; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    return ops::batchnorm_forward(x, gamma_.value, beta_.value, running_mean_, running_var_, mode,
                                  momentum_, eps_, &cache_);
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    auto gr = ops::batchnorm_backward(g, gamma_.value, &cache_);
    add_inplace(gamma_.grad, gr.grad_gamma);
    add_inplace(beta_.grad, gr.grad_beta);
    return std::move(gr.grad_x);
  }

  [[nodiscard]] LayerCost cost(const Shape& in) const override {
    detail::require((in.rank() == 4 || in.rank() == 2) && in[1] == channels(),
                    this->name() + ": expected " + std::to_string(channels()) + " channels, got " + in.str());
    LayerCost c;
    c.output = in;
    c.params = 2 * channels();
    c.elementwise = in.numel();
    return c;
  }

  void collect_parameters(std::vector<Parameter<T>*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }
  void collect_buffers(std::vector<BufferRef<T>>& out) override {
    out.push_back({this->name() + ".running_mean", &running_mean_});
    out.push_back({this->name() + ".running_var", &running_var_});
  }

  [[nodiscard]] std::size_t channels() const { return gamma_.value.numel(); }
  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }
  const Tensor<T>& running_mean() const { return running_mean_; }
  const Tensor<T>& running_var() const { return running_var_; }

 private:
  T momentum_, eps_;
  Parameter<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
  ops::BatchNormCache<T> cache_;
};

template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(std::string name, std::size_t in_features, std::size_t out_features, bool bias, SeededRng& rng)
      : Layer<T>(std::move(name)) {
    weight_ = detail::make_param(this->name(), "weight",
                                 detail::he_uniform<T>(Shape{in_features, out_features}, in_features, rng));
    if (bias) {
      const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in_features)));
      bias_ = detail::make_param(this->name(), "bias",
                                 Tensor<T>::uniform(Shape{out_features}, -bound, bound, rng));
    }
  }

  [[nodiscard]] std::string_view kind() const override { return "linear"; }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    x_ = x;
    return ops::linear_forward(x, weight_.value, bias_ ? &bias_->value : nullptr);
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    auto gr = ops::linear_backward(g, x_, weight_.value, bias_.has_value());
    add_inplace(weight_.grad, gr.grad_weight);
    if (bias_) add_inplace(bias_->grad, gr.grad_bias);
    return std::move(gr.grad_x);
  }

  [[nodiscard]] LayerCost cost(const Shape& in) const override {
    const std::size_t F = in.numel() / in[0];
    detail::require(F == in_features(), this->name() + ": expected " + std::to_string(in_features()) +
                                            " features, got shape " + in.str());
    LayerCost c;
    c.output = Shape{in[0], out_features()};
    c.params = weight_.value.numel() + (bias_ ? bias_->value.numel() : 0);
    c.macs = in[0] * in_features() * out_features();
    return c;
  }

  void collect_parameters(std::vector<Parameter<T>*>& out) override {
    out.push_back(&weight_);
    if (bias_) out.push_back(&*bias_);
  }

  [[nodiscard]] std::size_t in_features() const { return weight_.value.dim(0); }
  [[nodiscard]] std::size_t out_features() const { return weight_.value.dim(1); }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>* bias() { return bias_ ? &*bias_ : nullptr; }

 private:
  Parameter<T> weight_;
  std::optional<Parameter<T>> bias_;
  Tensor<T> x_;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  [[nodiscard]] std::string_view kind() const override { return "relu"; }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    x_ = x;
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] <= T(0) ? T(0) : x[i];  // NaN passes through
    return y;
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    if (x_.empty()) throw ContractError(this->name() + ": backward before forward");
    Tensor<T> gx(x_.shape());
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] = x_[i] > T(0) ? g[i] : T(0);
    return gx;
  }
  [[nodiscard]] LayerCost cost(const Shape& in) const override {
    return LayerCost{in, 0, 0, in.numel()};
  }

 private:
  Tensor<T> x_;
};

template <typename T>
class Softplus final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  [[nodiscard]] std::string_view kind() const override { return "softplus"; }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    x_ = x;
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = ops::softplus(x[i]);
    return y;
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    if (x_.empty()) throw ContractError(this->name() + ": backward before forward");
    Tensor<T> gx(x_.shape());
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] = g[i] * ops::logistic(x_[i]);
    return gx;
  }
  [[nodiscard]] LayerCost cost(const Shape& in) const override {
    return LayerCost{in, 0, 0, in.numel()};
  }

 private:
  Tensor<T> x_;
};

/// Ordered record of the layers a Sequential executed. Backward replays the
/// record in exact reverse order and then clears it.
template <typename T>
class GradTape {
 public:
  void clear() { nodes_.clear(); }
  void record(Layer<T>* node) { nodes_.push_back(node); }
  [[nodiscard]] bool empty() const { return nodes_.empty(); }
  [[nodiscard]] const std::vector<Layer<T>*>& nodes() const { return nodes_; }

  Tensor<T> backward(Tensor<T> grad) {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) grad = (*it)->backward(grad);
    nodes_.clear();
    return grad;
  }

 private:
  std::vector<Layer<T>*> nodes_;
};

template <typename T>
class Sequential : public Layer<T> {
 public:
  using Layer<T>::Layer;
  [[nodiscard]] std::string_view kind() const override { return "sequential"; }

  Layer<T>& add(LayerPtr<T> layer) {
    children_.push_back(std::move(layer));
    return *children_.back();
  }

  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto p = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *p;
    children_.push_back(std::move(p));
    return ref;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    tape_.clear();
    Tensor<T> h = x;
    for (auto& child : children_) {
      h = child->forward(h, mode);
      detail::probe_output(child->name(), h);
      tape_.record(child.get());
    }
    return h;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    if (tape_.empty() && !children_.empty())
      throw ContractError(this->name() + ": backward called without a forward pass");
    return tape_.backward(g);
  }

  [[nodiscard]] LayerCost cost(const Shape& in) const override {
    LayerCost total{in, 0, 0, 0};
    for (const auto& child : children_) total += child->cost(total.output);
    return total;
  }

  void collect_parameters(std::vector<Parameter<T>*>& out) override {
    for (auto& c : children_) c->collect_parameters(out);
  }
  void collect_buffers(std::vector<BufferRef<T>>& out) override {
    for (auto& c : children_) c->collect_buffers(out);
  }

  [[nodiscard]] std::size_t size() const { return children_.size(); }
  Layer<T>& child(std::size_t i) { return *children_[i]; }
  [[nodiscard]] const Layer<T>& child(std::size_t i) const { return *children_[i]; }
  [[nodiscard]] const GradTape<T>& tape() const { return tape_; }

 private:
  std::vector<LayerPtr<T>> children_;
  GradTape<T> tape_;
};

/// y = relu(main(x) + shortcut(x)), shortcut = identity or a projection.
template <typename T>
class ResidualBlock final : public Layer<T> {
 public:
  ResidualBlock(std::string name, std::unique_ptr<Sequential<T>> main,
                std::unique_ptr<Sequential<T>> shortcut)
      : Layer<T>(std::move(name)), main_(std::move(main)), shortcut_(std::move(shortcut)) {}

  [[nodiscard]] std::string_view kind() const override { return "residual_basic"; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> a = main_->forward(x, mode);
    Tensor<T> b = shortcut_ ? shortcut_->forward(x, mode) : x;
    Tensor<T> s = ops::add_skip(a, b);
    sum_ = s;
    for (auto& v : s.data()) v = v <= T(0) ? T(0) : v;
    detail::probe_output(this->name(), s);
    return s;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    if (sum_.empty()) throw ContractError(this->name() + ": backward before forward");
    Tensor<T> gs(g.shape());
    for (std::size_t i = 0; i < gs.numel(); ++i) gs[i] = sum_[i] > T(0) ? g[i] : T(0);
    Tensor<T> gx = main_->backward(gs);
    if (shortcut_) add_inplace(gx, shortcut_->backward(gs));
    else add_inplace(gx, gs);
    return gx;
  }

  [[nodiscard]] LayerCost cost(const Shape& in) const override {
    LayerCost total = main_->cost(in);
    const Shape skip = shortcut_ ? shortcut_->cost(in).output : in;
    detail::require(skip == total.output, this->name() + ": skip shape " + skip.str() +
                                              " does not match main path " + total.output.str());
    if (shortcut_) {
      const LayerCost sc = shortcut_->cost(in);
      total.params += sc.params;
      total.macs += sc.macs;
      total.elementwise += sc.elementwise;
    }
    total.elementwise += 2 * total.output.numel();  // add + relu
    return total;
  }

  void collect_parameters(std::vector<Parameter<T>*>& out) override {
    main_->collect_parameters(out);
    if (shortcut_) shortcut_->collect_parameters(out);
  }
  void collect_buffers(std::vector<BufferRef<T>>& out) override {
    main_->collect_buffers(out);
    if (shortcut_) shortcut_->collect_buffers(out);
  }

  [[nodiscard]] bool has_projection() const { return shortcut_ != nullptr; }

 private:
  std::unique_ptr<Sequential<T>> main_;
  std::unique_ptr<Sequential<T>> shortcut_;
  Tensor<T> sum_;
};

/// y = concat_channels(x, inner(x)); the dense-block merge.
template <typename T>
class ConcatBlock final : public Layer<T> {
 public:
  ConcatBlock(std::string name, std::unique_ptr<Sequential<T>> inner)
      : Layer<T>(std::move(name)), inner_(std::move(inner)) {}

  [[nodiscard]] std::string_view kind() const override { return "concat_merge"; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    detail::require(x.rank() == 4, this->name() + ": expected [B,C,H,W]");
    Tensor<T> y = inner_->forward(x, mode);
    detail::require(y.dim(0) == x.dim(0) && y.dim(2) == x.dim(2) && y.dim(3) == x.dim(3),
                    this->name() + ": inner path changed spatial extents");
    in_channels_ = x.dim(1);
    const std::size_t B = x.dim(0), Cx = x.dim(1), Cy = y.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor<T> out(Shape{B, Cx + Cy, x.dim(2), x.dim(3)});
    for (std::size_t b = 0; b < B; ++b) {
      std::copy_n(x.data().data() + b * Cx * HW, Cx * HW, out.data().data() + b * (Cx + Cy) * HW);
      std::copy_n(y.data().data() + b * Cy * HW, Cy * HW,
                  out.data().data() + b * (Cx + Cy) * HW + Cx * HW);
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    if (in_channels_ == 0) throw ContractError(this->name() + ": backward before forward");
    const std::size_t B = g.dim(0), Ct = g.dim(1), Cx = in_channels_, Cy = Ct - Cx;
    const std::size_t HW = g.dim(2) * g.dim(3);
    Tensor<T> gx(Shape{B, Cx, g.dim(2), g.dim(3)});
    Tensor<T> gy(Shape{B, Cy, g.dim(2), g.dim(3)});
    for (std::size_t b = 0; b < B; ++b) {
      std::copy_n(g.data().data() + b * Ct * HW, Cx * HW, gx.data().data() + b * Cx * HW);
      std::copy_n(g.data().data() + b * Ct * HW + Cx * HW, Cy * HW, gy.data().data() + b * Cy * HW);
    }
    add_inplace(gx, inner_->backward(gy));
    return gx;
  }

  [[nodiscard]] LayerCost cost(const Shape& in) const override {
    LayerCost c = inner_->cost(in);
    c.output = Shape{in[0], in[1] + c.output[1], in[2], in[3]};
    return c;
  }

  void collect_parameters(std::vector<Parameter<T>*>& out) override { inner_->collect_parameters(out); }
  void collect_buffers(std::vector<BufferRef<T>>& out) override { inner_->collect_buffers(out); }

 private:
  std::unique_ptr<Sequential<T>> inner_;
  std::size_t in_channels_ = 0;
};

}  // namespace mcnet
