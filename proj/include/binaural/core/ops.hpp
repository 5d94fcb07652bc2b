#pragma once

// Differentiable tensor operations recorded on a Tape. Matrices are row-major
// [rows x cols]; feature maps are [channels x height x width].

#include <Eigen/Core>
#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "binaural/core/tape.hpp"

namespace binaural::ad {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

inline void require_rank(const Shape& s, std::size_t r, const char* op) {
  require(s.size() == r, std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                             shape_str(s));
}

template <typename T>
CMatMap<T> as_mat(const Tensor<T>& t, std::int64_t rows, std::int64_t cols) {
  return CMatMap<T>(t.data(), rows, cols);
}

template <typename T>
MatMap<T> as_mat(Tensor<T>& t, std::int64_t rows, std::int64_t cols) {
  return MatMap<T>(t.data(), rows, cols);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise / structural

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  a.value().require_same_shape(b.value(), "add");
  Tensor<T> out = a.value();
  out += b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    if (auto* ga = tp.grad_if(a)) *ga += g;
    if (auto* gb = tp.grad_if(b)) *gb += g;
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  a.value().require_same_shape(b.value(), "sub");
  Tensor<T> out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    if (auto* ga = tp.grad_if(a)) *ga += g;
    if (auto* gb = tp.grad_if(b))
      for (std::int64_t i = 0; i < g.numel(); ++i) (*gb)[i] -= g[i];
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v *= s;
  return a.tape->record(std::move(out), {a}, [a, s](Tape<T>& tp, const Tensor<T>& g) {
    if (auto* ga = tp.grad_if(a))
      for (std::int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += s * g[i];
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return a.tape->record(std::move(out), {a}, [a](Tape<T>& tp, const Tensor<T>& g) {
    if (auto* ga = tp.grad_if(a))
      for (std::int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
  });
}

/// Adds a per-column bias to a matrix [M x N] (bias has N entries).
template <typename T>
Var<T> add_row_bias(Var<T> x, Var<T> bias) {
  const auto& xv = x.value();
  detail::require_rank(xv.shape(), 2, "add_row_bias");
  const std::int64_t m = xv.dim(0), n = xv.dim(1);
  detail::require(bias.value().numel() == n, "add_row_bias: bias size mismatch");
  Tensor<T> out = xv;
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[i * n + j] += bias.value()[j];
  return x.tape->record(std::move(out), {x, bias}, [x, bias, m, n](Tape<T>& tp, const Tensor<T>& g) {
    if (auto* gx = tp.grad_if(x)) *gx += g;
    if (auto* gb = tp.grad_if(bias))
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) (*gb)[j] += g[i * n + j];
  });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_rank(av.shape(), 2, "matmul");
  detail::require_rank(bv.shape(), 2, "matmul");
  const std::int64_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  detail::require(bv.dim(0) == k, "matmul: inner dimension mismatch " + shape_str(av.shape()) +
                                      " x " + shape_str(bv.shape()));
  Tensor<T> out({m, n});
  detail::as_mat(out, m, n).noalias() = detail::as_mat(av, m, k) * detail::as_mat(bv, k, n);
  return a.tape->record(std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& tp, const Tensor<T>& g) {
    auto gm = detail::as_mat(g, m, n);
    if (auto* ga = tp.grad_if(a))
      detail::as_mat(*ga, m, k).noalias() += gm * detail::as_mat(b.value(), k, n).transpose();
    if (auto* gb = tp.grad_if(b))
      detail::as_mat(*gb, k, n).noalias() += detail::as_mat(a.value(), m, k).transpose() * gm;
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  const auto& av = a.value();
  detail::require_rank(av.shape(), 2, "transpose");
  const std::int64_t m = av.dim(0), n = av.dim(1);
  Tensor<T> out({n, m});
  detail::as_mat(out, n, m) = detail::as_mat(av, m, n).transpose();
  return a.tape->record(std::move(out), {a}, [a, m, n](Tape<T>& tp, const Tensor<T>& g) {
    if (auto* ga = tp.grad_if(a)) detail::as_mat(*ga, m, n) += detail::as_mat(g, n, m).transpose();
  });
}

/// Columns [start, start+len) of a matrix.
template <typename T>
Var<T> slice_cols(Var<T> a, std::int64_t start, std::int64_t len) {
  const auto& av = a.value();
  detail::require_rank(av.shape(), 2, "slice_cols");
  const std::int64_t m = av.dim(0), n = av.dim(1);
  detail::require(start >= 0 && len >= 0 && start + len <= n, "slice_cols: range out of bounds");
  Tensor<T> out({m, len});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < len; ++j) out[i * len + j] = av[i * n + start + j];
  return a.tape->record(std::move(out), {a}, [a, m, n, start, len](Tape<T>& tp, const Tensor<T>& g) {
    if (auto* ga = tp.grad_if(a))
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < len; ++j) (*ga)[i * n + start + j] += g[i * len + j];
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  const std::int64_t m = parts[0].dim(0);
  std::int64_t n = 0;
  for (const auto& p : parts) {
    detail::require_rank(p.shape(), 2, "concat_cols");
    detail::require(p.dim(0) == m, "concat_cols: row count mismatch");
    n += p.dim(1);
  }
  Tensor<T> out({m, n});
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const auto& pv = p.value();
    const std::int64_t w = pv.dim(1);
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < w; ++j) out[i * n + off + j] = pv[i * w + j];
    off += w;
  }
  return parts[0].tape->record(std::move(out), std::span<const Var<T>>(parts),
                               [parts, m, n](Tape<T>& tp, const Tensor<T>& g) {
                                 std::int64_t off = 0;
                                 for (const auto& p : parts) {
                                   const std::int64_t w = p.dim(1);
                                   if (auto* gp = tp.grad_if(p))
                                     for (std::int64_t i = 0; i < m; ++i)
                                       for (std::int64_t j = 0; j < w; ++j)
                                         (*gp)[i * w + j] += g[i * n + off + j];
                                   off += w;
                                 }
                               });
}

/// Concatenation along axis 0; trailing dimensions must agree. For
/// [C x H x W] feature maps this is channel concatenation.
template <typename T>
Var<T> concat0(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat0: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::int64_t lead = 0;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    detail::require(t == tail, "concat0: trailing shape mismatch " + shape_str(parts[0].shape()) +
                                   " vs " + shape_str(p.shape()));
    lead += p.dim(0);
  }
  Shape shape{lead};
  shape.insert(shape.end(), tail.begin(), tail.end());
  Tensor<T> out(shape);
  std::int64_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().numel(), out.data() + off);
    off += p.value().numel();
  }
  return parts[0].tape->record(std::move(out), std::span<const Var<T>>(parts),
                               [parts](Tape<T>& tp, const Tensor<T>& g) {
                                 std::int64_t off = 0;
                                 for (const auto& p : parts) {
                                   const std::int64_t sz = p.value().numel();
                                   if (auto* gp = tp.grad_if(p))
                                     for (std::int64_t i = 0; i < sz; ++i) (*gp)[i] += g[off + i];
                                   off += sz;
                                 }
                               });
}

/// Keeps the first `len` entries along the last axis of a rank-3 tensor.
template <typename T>
Var<T> crop_last(Var<T> a, std::int64_t len) {
  const auto& av = a.value();
  detail::require_rank(av.shape(), 3, "crop_last");
  const std::int64_t c = av.dim(0), h = av.dim(1), w = av.dim(2);
  detail::require(len >= 0 && len <= w, "crop_last: length exceeds axis");
  Tensor<T> out({c, h, len});
  for (std::int64_t r = 0; r < c * h; ++r)
    for (std::int64_t j = 0; j < len; ++j) out[r * len + j] = av[r * w + j];
  return a.tape->record(std::move(out), {a}, [a, c, h, w, len](Tape<T>& tp, const Tensor<T>& g) {
    if (auto* ga = tp.grad_if(a))
      for (std::int64_t r = 0; r < c * h; ++r)
        for (std::int64_t j = 0; j < len; ++j) (*ga)[r * w + j] += g[r * len + j];
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities

template <typename T>
Var<T> leaky_relu(Var<T> a, T slope) {
  const auto& av = a.value();
  if (a.tape->track_kinks()) a.tape->mix_kink_bits(av.span());
  Tensor<T> out = av;
  for (auto& v : out.vec())
    if (v < T{0}) v *= slope;
  return a.tape->record(std::move(out), {a}, [a, slope](Tape<T>& tp, const Tensor<T>& g) {
    if (auto* ga = tp.grad_if(a)) {
      const auto& av = a.value();
      for (std::int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += av[i] < T{0} ? slope * g[i] : g[i];
    }
  });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v = std::tanh(v);
  auto y = std::make_shared<Tensor<T>>(out);
  return a.tape->record(std::move(out), {a}, [a, y](Tape<T>& tp, const Tensor<T>& g) {
    if (auto* ga = tp.grad_if(a))
      for (std::int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * (T{1} - (*y)[i] * (*y)[i]);
  });
}

/// Exact (erf-based) GELU.
template <typename T>
Var<T> gelu(Var<T> a) {
  const T inv_sqrt2 = T{1} / std::numbers::sqrt2_v<T>;
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v = T{0.5} * v * (T{1} + std::erf(v * inv_sqrt2));
  return a.tape->record(std::move(out), {a}, [a, inv_sqrt2](Tape<T>& tp, const Tensor<T>& g) {
    if (auto* ga = tp.grad_if(a)) {
      const T inv_sqrt2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<T>;
      const auto& av = a.value();
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        const T x = av[i];
        const T d = T{0.5} * (T{1} + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-T{0.5} * x * x);
        (*ga)[i] += g[i] * d;
      }
    }
  });
}

template <typename T>
T gelu_scalar(T x) {
  return T{0.5} * x * (T{1} + std::erf(x / std::numbers::sqrt2_v<T>));
}

/// Row-wise softmax of a matrix.
template <typename T>
Var<T> softmax_rows(Var<T> a) {
  const auto& av = a.value();
  detail::require_rank(av.shape(), 2, "softmax_rows");
  const std::int64_t m = av.dim(0), n = av.dim(1);
  Tensor<T> out({m, n});
  for (std::int64_t i = 0; i < m; ++i) {
    T mx = av[i * n];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, av[i * n + j]);
    T sum{};
    for (std::int64_t j = 0; j < n; ++j) sum += (out[i * n + j] = std::exp(av[i * n + j] - mx));
    for (std::int64_t j = 0; j < n; ++j) out[i * n + j] /= sum;
  }
  auto y = std::make_shared<Tensor<T>>(out);
  return a.tape->record(std::move(out), {a}, [a, y, m, n](Tape<T>& tp, const Tensor<T>& g) {
    if (auto* ga = tp.grad_if(a))
      for (std::int64_t i = 0; i < m; ++i) {
        T dot{};
        for (std::int64_t j = 0; j < n; ++j) dot += g[i * n + j] * (*y)[i * n + j];
        for (std::int64_t j = 0; j < n; ++j) (*ga)[i * n + j] += (*y)[i * n + j] * (g[i * n + j] - dot);
      }
  });
}

/// Row-wise layer normalization of [M x N] with affine gamma/beta (N each).
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T{1e-5}) {
  const auto& xv = x.value();
  detail::require_rank(xv.shape(), 2, "layer_norm");
  const std::int64_t m = xv.dim(0), n = xv.dim(1);
  detail::require(gamma.value().numel() == n && beta.value().numel() == n,
                  "layer_norm: affine parameter size mismatch");
  auto xhat = std::make_shared<Tensor<T>>(Shape{m, n});
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(m));
  Tensor<T> out({m, n});
  for (std::int64_t i = 0; i < m; ++i) {
    T mean{};
    for (std::int64_t j = 0; j < n; ++j) mean += xv[i * n + j];
    mean /= static_cast<T>(n);
    T var{};
    for (std::int64_t j = 0; j < n; ++j) var += (xv[i * n + j] - mean) * (xv[i * n + j] - mean);
    var /= static_cast<T>(n);
    const T r = T{1} / std::sqrt(var + eps);
    (*rstd)[static_cast<std::size_t>(i)] = r;
    for (std::int64_t j = 0; j < n; ++j) {
      const T h = (xv[i * n + j] - mean) * r;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = h * gamma.value()[j] + beta.value()[j];
    }
  }
  return x.tape->record(
      std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, rstd, m, n](Tape<T>& tp, const Tensor<T>& g) {
        if (auto* gg = tp.grad_if(gamma))
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) (*gg)[j] += g[i * n + j] * (*xhat)[i * n + j];
        if (auto* gb = tp.grad_if(beta))
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) (*gb)[j] += g[i * n + j];
        if (auto* gx = tp.grad_if(x)) {
          const auto& gv = gamma.value();
          for (std::int64_t i = 0; i < m; ++i) {
            T mean_d{}, mean_dh{};
            for (std::int64_t j = 0; j < n; ++j) {
              const T d = g[i * n + j] * gv[j];
              mean_d += d;
              mean_dh += d * (*xhat)[i * n + j];
            }
            mean_d /= static_cast<T>(n);
            mean_dh /= static_cast<T>(n);
            const T r = (*rstd)[static_cast<std::size_t>(i)];
            for (std::int64_t j = 0; j < n; ++j) {
              const T d = g[i * n + j] * gv[j];
              (*gx)[i * n + j] += r * (d - mean_d - (*xhat)[i * n + j] * mean_dh);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Convolutions

/// Geometry of a 2-D convolution from an input grid (h, w) to an output grid
/// (out_h, out_w) with a square kernel.
struct ConvGeom {
  std::int64_t channels, h, w, kernel, stride, pad, out_h, out_w;
};

inline std::int64_t conv_out_dim(std::int64_t n, std::int64_t k, std::int64_t s, std::int64_t p) {
  return (n + 2 * p - k) / s + 1;
}

inline std::int64_t conv_transpose_out_dim(std::int64_t n, std::int64_t k, std::int64_t s, std::int64_t p,
                                           std::int64_t out_pad) {
  return (n - 1) * s - 2 * p + k + out_pad;
}

namespace detail {

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::int64_t ncol = g.out_h * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c)
    for (std::int64_t ki = 0; ki < g.kernel; ++ki)
      for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
        T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * ncol;
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + ki;
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= g.h) {
            std::fill(dst, dst + g.out_w, T{});
            continue;
          }
          const T* src = x + (c * g.h + ih) * g.w;
          for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
            const std::int64_t iw = ow * g.stride - g.pad + kj;
            dst[ow] = (iw >= 0 && iw < g.w) ? src[iw] : T{};
          }
        }
      }
}

/// Adjoint of im2col: scatters-and-adds columns back onto the input grid.
template <typename T>
void col2im(const T* cols, const ConvGeom& g, T* x) {
  const std::int64_t ncol = g.out_h * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c)
    for (std::int64_t ki = 0; ki < g.kernel; ++ki)
      for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
        const T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * ncol;
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.h) continue;
          const T* src = row + oh * g.out_w;
          T* dst = x + (c * g.h + ih) * g.w;
          for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
            const std::int64_t iw = ow * g.stride - g.pad + kj;
            if (iw >= 0 && iw < g.w) dst[iw] += src[ow];
          }
        }
      }
}

}  // namespace detail

/// Strided 2-D convolution. x: [C x H x W], weight: [O x C x k x k], bias: [O].
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, std::int64_t stride, std::int64_t pad) {
  const auto& xv = x.value();
  const auto& wv = weight.value();
  detail::require_rank(xv.shape(), 3, "conv2d");
  detail::require_rank(wv.shape(), 4, "conv2d weight");
  const std::int64_t c = xv.dim(0), o = wv.dim(0), k = wv.dim(2);
  detail::require(wv.dim(1) == c && wv.dim(3) == k,
                  "conv2d: weight " + shape_str(wv.shape()) + " incompatible with input " +
                      shape_str(xv.shape()));
  detail::require(bias.value().numel() == o, "conv2d: bias size mismatch");
  const ConvGeom geom{c, xv.dim(1), xv.dim(2), k, stride, pad, conv_out_dim(xv.dim(1), k, stride, pad),
                      conv_out_dim(xv.dim(2), k, stride, pad)};
  detail::require(geom.out_h > 0 && geom.out_w > 0, "conv2d: input too small");
  const std::int64_t ck = c * k * k, ncol = geom.out_h * geom.out_w;
  auto cols = std::make_shared<Tensor<T>>(Shape{ck, ncol});
  detail::im2col(xv.data(), geom, cols->data());
  Tensor<T> out({o, geom.out_h, geom.out_w});
  auto om = detail::as_mat(out, o, ncol);
  om.noalias() = detail::as_mat(wv, o, ck) * detail::as_mat(*cols, ck, ncol);
  for (std::int64_t i = 0; i < o; ++i) om.row(i).array() += bias.value()[i];
  return x.tape->record(std::move(out), {x, weight, bias},
                        [x, weight, bias, cols, geom, o, ck, ncol](Tape<T>& tp, const Tensor<T>& g) {
                          auto gm = detail::as_mat(g, o, ncol);
                          if (auto* gw = tp.grad_if(weight))
                            detail::as_mat(*gw, o, ck).noalias() +=
                                gm * detail::as_mat(*cols, ck, ncol).transpose();
                          if (auto* gb = tp.grad_if(bias))
                            for (std::int64_t i = 0; i < o; ++i) (*gb)[i] += gm.row(i).sum();
                          if (auto* gx = tp.grad_if(x)) {
                            Tensor<T> dcols({ck, ncol});
                            detail::as_mat(dcols, ck, ncol).noalias() =
                                detail::as_mat(weight.value(), o, ck).transpose() * gm;
                            detail::col2im(dcols.data(), geom, gx->data());
                          }
                        });
}

/// Fractionally-strided (transposed) convolution.
/// x: [C x H x W], weight: [C x O x k x k], bias: [O]. `out_pad_h/w` add rows
/// or columns at the far edge so odd target sizes are reachable.
template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> weight, Var<T> bias, std::int64_t stride, std::int64_t pad,
                        std::int64_t out_pad_h = 0, std::int64_t out_pad_w = 0) {
  const auto& xv = x.value();
  const auto& wv = weight.value();
  detail::require_rank(xv.shape(), 3, "conv_transpose2d");
  detail::require_rank(wv.shape(), 4, "conv_transpose2d weight");
  const std::int64_t c = xv.dim(0), o = wv.dim(1), k = wv.dim(2);
  detail::require(wv.dim(0) == c && wv.dim(3) == k,
                  "conv_transpose2d: weight " + shape_str(wv.shape()) + " incompatible with input " +
                      shape_str(xv.shape()));
  detail::require(bias.value().numel() == o, "conv_transpose2d: bias size mismatch");
  detail::require(out_pad_h >= 0 && out_pad_h < stride && out_pad_w >= 0 && out_pad_w < stride,
                  "conv_transpose2d: output padding must be in [0, stride)");
  const std::int64_t h = xv.dim(1), w = xv.dim(2);
  const std::int64_t oh = conv_transpose_out_dim(h, k, stride, pad, out_pad_h);
  const std::int64_t ow = conv_transpose_out_dim(w, k, stride, pad, out_pad_w);
  // Geometry of the forward convolution that this op is the adjoint of.
  const ConvGeom geom{o, oh, ow, k, stride, pad, h, w};
  const std::int64_t ok = o * k * k, hw = h * w;
  Tensor<T> cols({ok, hw});
  detail::as_mat(cols, ok, hw).noalias() = detail::as_mat(wv, c, ok).transpose() * detail::as_mat(xv, c, hw);
  Tensor<T> out({o, oh, ow});
  detail::col2im(cols.data(), geom, out.data());
  for (std::int64_t i = 0; i < o; ++i)
    for (std::int64_t j = 0; j < oh * ow; ++j) out[i * oh * ow + j] += bias.value()[i];
  return x.tape->record(std::move(out), {x, weight, bias},
                        [x, weight, bias, geom, c, o, ok, hw](Tape<T>& tp, const Tensor<T>& g) {
                          const std::int64_t plane = geom.h * geom.w;
                          if (auto* gb = tp.grad_if(bias))
                            for (std::int64_t i = 0; i < o; ++i) {
                              T s{};
                              for (std::int64_t j = 0; j < plane; ++j) s += g[i * plane + j];
                              (*gb)[i] += s;
                            }
                          const bool need_w = tp.needs_grad(weight), need_x = tp.needs_grad(x);
                          if (!need_w && !need_x) return;
                          Tensor<T> dcols({ok, hw});
                          detail::im2col(g.data(), geom, dcols.data());
                          auto dm = detail::as_mat(dcols, ok, hw);
                          if (auto* gw = tp.grad_if(weight))
                            detail::as_mat(*gw, c, ok).noalias() +=
                                detail::as_mat(x.value(), c, hw) * dm.transpose();
                          if (auto* gx = tp.grad_if(x))
                            detail::as_mat(*gx, c, hw).noalias() +=
                                detail::as_mat(weight.value(), c, ok) * dm;
                        });
}

// ---------------------------------------------------------------------------
// Cross-modal cosine similarity

/// Cosine similarity between every row of `fv` [P x d] and every column of
/// `fa` [d x Q]: out[p, q] = <fv_p, fa_q> / (|fv_p| |fa_q| + eps).
template <typename T>
Var<T> cosine_attention(Var<T> fv, Var<T> fa, T eps = T{1e-8}) {
  const auto& vv = fv.value();
  const auto& av = fa.value();
  detail::require_rank(vv.shape(), 2, "cosine_attention");
  detail::require_rank(av.shape(), 2, "cosine_attention");
  const std::int64_t p = vv.dim(0), d = vv.dim(1), q = av.dim(1);
  detail::require(av.dim(0) == d, "cosine_attention: channel mismatch (" + std::to_string(d) + " vs " +
                                      std::to_string(av.dim(0)) + ")");
  auto nv = std::make_shared<std::vector<T>>(static_cast<std::size_t>(p));
  auto na = std::make_shared<std::vector<T>>(static_cast<std::size_t>(q), T{});
  for (std::int64_t i = 0; i < p; ++i) {
    T s{};
    for (std::int64_t c = 0; c < d; ++c) s += vv[i * d + c] * vv[i * d + c];
    (*nv)[static_cast<std::size_t>(i)] = std::sqrt(s);
  }
  for (std::int64_t c = 0; c < d; ++c)
    for (std::int64_t j = 0; j < q; ++j) (*na)[static_cast<std::size_t>(j)] += av[c * q + j] * av[c * q + j];
  for (auto& v : *na) v = std::sqrt(v);
  Tensor<T> out({p, q});
  auto om = detail::as_mat(out, p, q);
  om.noalias() = detail::as_mat(vv, p, d) * detail::as_mat(av, d, q);
  for (std::int64_t i = 0; i < p; ++i)
    for (std::int64_t j = 0; j < q; ++j)
      out[i * q + j] /= (*nv)[static_cast<std::size_t>(i)] * (*na)[static_cast<std::size_t>(j)] + eps;
  auto att = std::make_shared<Tensor<T>>(out);
  return fv.tape->record(
      std::move(out), {fv, fa}, [fv, fa, nv, na, att, eps, p, d, q](Tape<T>& tp, const Tensor<T>& g) {
        // h = g / denom; d att / d fv_p = h_pq fa_q - h_pq att_pq |fa_q| fv_p / |fv_p|
        Tensor<T> h({p, q});
        for (std::int64_t i = 0; i < p; ++i)
          for (std::int64_t j = 0; j < q; ++j)
            h[i * q + j] = g[i * q + j] /
                           ((*nv)[static_cast<std::size_t>(i)] * (*na)[static_cast<std::size_t>(j)] + eps);
        auto hm = detail::as_mat(h, p, q);
        if (auto* gv = tp.grad_if(fv)) {
          const auto& vv = fv.value();
          detail::as_mat(*gv, p, d).noalias() += hm * detail::as_mat(fa.value(), d, q).transpose();
          for (std::int64_t i = 0; i < p; ++i) {
            const T n = (*nv)[static_cast<std::size_t>(i)];
            if (n == T{0}) continue;
            T k{};
            for (std::int64_t j = 0; j < q; ++j)
              k += h[i * q + j] * (*att)[i * q + j] * (*na)[static_cast<std::size_t>(j)];
            for (std::int64_t c = 0; c < d; ++c) (*gv)[i * d + c] -= k / n * vv[i * d + c];
          }
        }
        if (auto* ga = tp.grad_if(fa)) {
          const auto& av = fa.value();
          detail::as_mat(*ga, d, q).noalias() += detail::as_mat(fv.value(), p, d).transpose() * hm;
          std::vector<T> k(static_cast<std::size_t>(q), T{});
          for (std::int64_t i = 0; i < p; ++i)
            for (std::int64_t j = 0; j < q; ++j)
              k[static_cast<std::size_t>(j)] +=
                  h[i * q + j] * (*att)[i * q + j] * (*nv)[static_cast<std::size_t>(i)];
          for (std::int64_t c = 0; c < d; ++c)
            for (std::int64_t j = 0; j < q; ++j) {
              const T n = (*na)[static_cast<std::size_t>(j)];
              if (n != T{0}) (*ga)[c * q + j] -= k[static_cast<std::size_t>(j)] / n * av[c * q + j];
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Spectrogram algebra and reductions

/// Per-bin complex product of two [2 x F x T] planes (plane 0 real, 1 imag).
template <typename T>
Var<T> complex_mul(Var<T> m, Var<T> a) {
  const auto& mv = m.value();
  const auto& av = a.value();
  mv.require_same_shape(av, "complex_mul");
  detail::require(mv.rank() >= 1 && mv.dim(0) == 2, "complex_mul: expected 2 planes");
  const std::int64_t n = mv.numel() / 2;
  Tensor<T> out(mv.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    out[i] = mv[i] * av[i] - mv[n + i] * av[n + i];
    out[n + i] = mv[i] * av[n + i] + mv[n + i] * av[i];
  }
  return m.tape->record(std::move(out), {m, a}, [m, a, n](Tape<T>& tp, const Tensor<T>& g) {
    const auto& mv = m.value();
    const auto& av = a.value();
    if (auto* gm = tp.grad_if(m))
      for (std::int64_t i = 0; i < n; ++i) {
        (*gm)[i] += g[i] * av[i] + g[n + i] * av[n + i];
        (*gm)[n + i] += -g[i] * av[n + i] + g[n + i] * av[i];
      }
    if (auto* ga = tp.grad_if(a))
      for (std::int64_t i = 0; i < n; ++i) {
        (*ga)[i] += g[i] * mv[i] + g[n + i] * mv[n + i];
        (*ga)[n + i] += -g[i] * mv[n + i] + g[n + i] * mv[i];
      }
  });
}

template <typename T>
Var<T> sum_squares(Var<T> a) {
  const auto& av = a.value();
  T s{};
  for (T v : av.vec()) s += v * v;
  return a.tape->record(Tensor<T>({1}, std::vector<T>{s}), {a}, [a](Tape<T>& tp, const Tensor<T>& g) {
    if (auto* ga = tp.grad_if(a)) {
      const auto& av = a.value();
      for (std::int64_t i = 0; i < av.numel(); ++i) (*ga)[i] += T{2} * g[0] * av[i];
    }
  });
}

/// Scalar <a, w> against a fixed weight tensor; used as a gradient-check probe.
template <typename T>
Var<T> weighted_sum(Var<T> a, const Tensor<T>& w) {
  a.value().require_same_shape(w, "weighted_sum");
  T s{};
  for (std::int64_t i = 0; i < w.numel(); ++i) s += a.value()[i] * w[i];
  return a.tape->record(Tensor<T>({1}, std::vector<T>{s}), {a}, [a, w](Tape<T>& tp, const Tensor<T>& g) {
    if (auto* ga = tp.grad_if(a))
      for (std::int64_t i = 0; i < w.numel(); ++i) (*ga)[i] += g[0] * w[i];
  });
}

}  // namespace binaural::ad
