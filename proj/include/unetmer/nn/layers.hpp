#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "unetmer/common.hpp"
#include "unetmer/nn/gemm.hpp"
#include "unetmer/rng.hpp"
#include "unetmer/tensor.hpp"

// Layers follow one protocol: forward(x, train) caches whatever backward
// needs, backward(dy) returns dx and accumulates into parameter .grad.
// Every layer is invoked at most once per optimization step (patches travel
// through the net as one batch), so a single cache slot per layer suffices.

namespace unetmer::nn {

template <class T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;

  void resize(std::vector<std::size_t> shape) {
    value = Tensor<T>(shape);
    grad = Tensor<T>(std::move(shape));
  }
  std::size_t numel() const { return value.numel(); }
};

template <class T>
using ParamList = std::vector<std::pair<std::string, Parameter<T>*>>;

template <class T>
using BufferList = std::vector<std::pair<std::string, Tensor<T>*>>;

template <class T>
std::size_t total_params(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& [name, p] : params) n += p->numel();
  return n;
}

template <class T>
void zero_grads(const ParamList<T>& params) {
  for (const auto& [name, p] : params) p->grad.fill(T(0));
}

// --- im2col / col2im --------------------------------------------------------

// x [N, C, H, W] -> col [C*k*k, N*Ho*Wo], stride 1.
template <class T>
void im2col(const Tensor<T>& x, std::size_t k, std::size_t pad, Tensor<T>& col) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = H + 2 * pad - k + 1, Wo = W + 2 * pad - k + 1;
  const std::size_t cols = N * Ho * Wo;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ki = 0; ki < k; ++ki)
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* row = col.data() + ((c * k + ki) * k + kj) * cols;
        // Valid output column range for this kernel offset.
        const std::size_t ow_lo = (kj < pad) ? pad - kj : 0;
        const std::size_t ow_hi = std::min(Wo, W + pad - kj);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t oh = 0; oh < Ho; ++oh) {
            T* dst = row + (n * Ho + oh) * Wo;
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + ki) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) {
              std::fill(dst, dst + Wo, T(0));
              continue;
            }
            std::fill(dst, dst + ow_lo, T(0));
            if (ow_hi > ow_lo) {
              const T* src = &x(n, c, static_cast<std::size_t>(ih), ow_lo + kj - pad);
              std::copy(src, src + (ow_hi - ow_lo), dst + ow_lo);
            }
            std::fill(dst + ow_hi, dst + Wo, T(0));
          }
      }
}

// Scatter-add inverse of im2col.
template <class T>
void col2im(const Tensor<T>& col, std::size_t k, std::size_t pad, Tensor<T>& x) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = H + 2 * pad - k + 1, Wo = W + 2 * pad - k + 1;
  const std::size_t cols = N * Ho * Wo;
  x.fill(T(0));
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ki = 0; ki < k; ++ki)
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T* row = col.data() + ((c * k + ki) * k + kj) * cols;
        const std::size_t ow_lo = (kj < pad) ? pad - kj : 0;
        const std::size_t ow_hi = std::min(Wo, W + pad - kj);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t oh = 0; oh < Ho; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + ki) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
            const T* src = row + (n * Ho + oh) * Wo;
            T* dst = &x(n, c, static_cast<std::size_t>(ih), ow_lo + kj - pad);
            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) dst[ow - ow_lo] += src[ow];
          }
      }
}

// --- Conv2d -----------------------------------------------------------------

template <class T>
class Conv2d {
 public:
  Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t ksize, std::size_t pad)
      : in_ch_(in_ch), out_ch_(out_ch), k_(ksize), pad_(pad) {
    weight.resize({out_ch, in_ch * ksize * ksize});
    bias.resize({out_ch});
  }

  void init(Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(in_ch_ * k_ * k_));
    for (std::size_t i = 0; i < weight.value.numel(); ++i)
      weight.value[i] = static_cast<T>(rng.normal(0.0, stddev));
    bias.value.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, bool /*train*/) {
    check(x.ndim() == 4 && x.dim(1) == in_ch_,
          "conv2d: expected [N," + std::to_string(in_ch_) + ",H,W], got " + x.shape_str());
    x_ = x;
    const std::size_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const std::size_t Ho = H + 2 * pad_ - k_ + 1, Wo = W + 2 * pad_ - k_ + 1;
    const std::size_t cols = N * Ho * Wo, kk = in_ch_ * k_ * k_;

    Tensor<T> col({kk, cols});
    im2col(x, k_, pad_, col);
    Tensor<T> prod({out_ch_, cols});
    gemm(false, false, out_ch_, cols, kk, T(1), weight.value.data(), kk, col.data(), cols,
         T(0), prod.data(), cols);

    Tensor<T> y({N, out_ch_, Ho, Wo});
    const std::size_t hw = Ho * Wo;
    for (std::size_t o = 0; o < out_ch_; ++o) {
      const T b = bias.value[o];
      for (std::size_t n = 0; n < N; ++n) {
        const T* src = prod.data() + o * cols + n * hw;
        T* dst = &y(n, o, 0, 0);
        for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] + b;
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const std::size_t N = x_.dim(0), H = x_.dim(2), W = x_.dim(3);
    const std::size_t Ho = dy.dim(2), Wo = dy.dim(3);
    const std::size_t cols = N * Ho * Wo, kk = in_ch_ * k_ * k_, hw = Ho * Wo;

    // Gather dy into [out, N*Ho*Wo] and accumulate the bias gradient.
    Tensor<T> dprod({out_ch_, cols});
    for (std::size_t o = 0; o < out_ch_; ++o) {
      T acc = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* src = &dy(n, o, 0, 0);
        T* dst = dprod.data() + o * cols + n * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          dst[i] = src[i];
          acc += src[i];
        }
      }
      bias.grad[o] += acc;
    }

    Tensor<T> col({kk, cols});
    im2col(x_, k_, pad_, col);
    gemm(false, true, out_ch_, kk, cols, T(1), dprod.data(), cols, col.data(), cols, T(1),
         weight.grad.data(), kk);

    Tensor<T> dcol({kk, cols});
    gemm(true, false, kk, cols, out_ch_, T(1), weight.value.data(), kk, dprod.data(), cols,
         T(0), dcol.data(), cols);
    Tensor<T> dx({N, in_ch_, H, W});
    col2im(dcol, k_, pad_, dx);
    return dx;
  }

  void params(const std::string& prefix, ParamList<T>& out) {
    out.emplace_back(prefix + ".weight", &weight);
    out.emplace_back(prefix + ".bias", &bias);
  }

  std::size_t out_channels() const { return out_ch_; }

  Parameter<T> weight;
  Parameter<T> bias;

 private:
  std::size_t in_ch_, out_ch_, k_, pad_;
  Tensor<T> x_;
};

// --- BatchNorm2d ------------------------------------------------------------

template <class T>
class BatchNorm2d {
 public:
  explicit BatchNorm2d(std::size_t channels, double momentum = 0.1, double eps = 1e-5)
      : C_(channels), momentum_(momentum), eps_(eps) {
    gamma.resize({channels});
    beta.resize({channels});
    gamma.value.fill(T(1));
    beta.value.fill(T(0));
    running_mean = Tensor<T>({channels});
    running_var = Tensor<T>::full({channels}, T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    check(x.ndim() == 4 && x.dim(1) == C_, "batchnorm: channel mismatch");
    const std::size_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const std::size_t m = N * H * W;
    last_train_ = train;
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(C_, T(0));

    Tensor<T> y(x.shape());
    for (std::size_t c = 0; c < C_; ++c) {
      double mean, var;
      if (train) {
        double sum = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const T* p = &x(n, c, 0, 0);
          for (std::size_t i = 0; i < H * W; ++i) sum += p[i];
        }
        mean = sum / m;
        double sq = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const T* p = &x(n, c, 0, 0);
          for (std::size_t i = 0; i < H * W; ++i) {
            const double d = p[i] - mean;
            sq += d * d;
          }
        }
        var = sq / m;
        running_mean[c] = static_cast<T>((1.0 - momentum_) * running_mean[c] + momentum_ * mean);
        running_var[c] = static_cast<T>((1.0 - momentum_) * running_var[c] + momentum_ * var);
      } else {
        mean = running_mean[c];
        var = running_var[c];
      }
      const T istd = static_cast<T>(1.0 / std::sqrt(var + eps_));
      inv_std_[c] = istd;
      const T g = gamma.value[c], b = beta.value[c], mu = static_cast<T>(mean);
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = &x(n, c, 0, 0);
        T* ph = &xhat_(n, c, 0, 0);
        T* py = &y(n, c, 0, 0);
        for (std::size_t i = 0; i < H * W; ++i) {
          ph[i] = (p[i] - mu) * istd;
          py[i] = g * ph[i] + b;
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const std::size_t N = dy.dim(0), H = dy.dim(2), W = dy.dim(3);
    const std::size_t m = N * H * W;
    Tensor<T> dx(dy.shape());
    for (std::size_t c = 0; c < C_; ++c) {
      double sdy = 0, sdyx = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* pdy = &dy(n, c, 0, 0);
        const T* ph = &xhat_(n, c, 0, 0);
        for (std::size_t i = 0; i < H * W; ++i) {
          sdy += pdy[i];
          sdyx += pdy[i] * ph[i];
        }
      }
      gamma.grad[c] += static_cast<T>(sdyx);
      beta.grad[c] += static_cast<T>(sdy);
      const T g_istd = gamma.value[c] * inv_std_[c];
      if (last_train_) {
        const T mean_dy = static_cast<T>(sdy / m);
        const T mean_dyx = static_cast<T>(sdyx / m);
        for (std::size_t n = 0; n < N; ++n) {
          const T* pdy = &dy(n, c, 0, 0);
          const T* ph = &xhat_(n, c, 0, 0);
          T* pdx = &dx(n, c, 0, 0);
          for (std::size_t i = 0; i < H * W; ++i)
            pdx[i] = g_istd * (pdy[i] - mean_dy - ph[i] * mean_dyx);
        }
      } else {
        for (std::size_t n = 0; n < N; ++n) {
          const T* pdy = &dy(n, c, 0, 0);
          T* pdx = &dx(n, c, 0, 0);
          for (std::size_t i = 0; i < H * W; ++i) pdx[i] = g_istd * pdy[i];
        }
      }
    }
    return dx;
  }

  void params(const std::string& prefix, ParamList<T>& out) {
    out.emplace_back(prefix + ".gamma", &gamma);
    out.emplace_back(prefix + ".beta", &beta);
  }

  void buffers(const std::string& prefix, BufferList<T>& out) {
    out.emplace_back(prefix + ".running_mean", &running_mean);
    out.emplace_back(prefix + ".running_var", &running_var);
  }

  Parameter<T> gamma, beta;
  Tensor<T> running_mean, running_var;

 private:
  std::size_t C_;
  double momentum_, eps_;
  bool last_train_ = true;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

// --- activations ------------------------------------------------------------

template <class T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool /*train*/) {
    y_ = Tensor<T>(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y_[i] = x[i] > T(0) ? x[i] : T(0);
    return y_;
  }
  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] = y_[i] > T(0) ? dy[i] : T(0);
    return dx;
  }

 private:
  Tensor<T> y_;
};

template <class T>
class Sigmoid {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool /*train*/) {
    y_ = Tensor<T>(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
      y_[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x[i]))));
    return y_;
  }
  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] = dy[i] * y_[i] * (T(1) - y_[i]);
    return dx;
  }

 private:
  Tensor<T> y_;
};

// Exact (erf-based) GELU; smooth everywhere, which keeps finite-difference
// checks tight.
template <class T>
class Gelu {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool /*train*/) {
    x_ = x;
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double v = x[i];
      y[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)));
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(dy.shape());
    constexpr double inv_sqrt_2pi = 0.3989422804014326779;
    for (std::size_t i = 0; i < dy.numel(); ++i) {
      const double v = x_[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      dx[i] = dy[i] * static_cast<T>(cdf + v * pdf);
    }
    return dx;
  }

 private:
  Tensor<T> x_;
};

// --- pooling / upsampling ---------------------------------------------------

template <class T>
class MaxPool2d {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool /*train*/) {
    check(x.ndim() == 4 && x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0,
          "maxpool2d: spatial dims must be even, got " + x.shape_str());
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    in_shape_ = x.shape();
    Tensor<T> y({N, C, H / 2, W / 2});
    argmax_.assign(y.numel(), 0);
    std::size_t o = 0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H / 2; ++i)
          for (std::size_t j = 0; j < W / 2; ++j, ++o) {
            std::size_t best = ((n * C + c) * H + 2 * i) * W + 2 * j;
            T bv = x[best];
            const std::size_t cand[3] = {best + 1, best + W, best + W + 1};
            for (std::size_t q : cand)
              if (x[q] > bv) {
                bv = x[q];
                best = q;
              }
            y[o] = bv;
            argmax_[o] = best;
          }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(in_shape_);
    dx.fill(T(0));
    for (std::size_t o = 0; o < dy.numel(); ++o) dx[argmax_[o]] += dy[o];
    return dx;
  }

 private:
  std::vector<std::size_t> in_shape_;
  std::vector<std::size_t> argmax_;
};

template <class T>
class Upsample2x {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool /*train*/) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    in_shape_ = x.shape();
    Tensor<T> y({N, C, 2 * H, 2 * W});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t j = 0; j < W; ++j) {
            const T v = x(n, c, i, j);
            y(n, c, 2 * i, 2 * j) = v;
            y(n, c, 2 * i, 2 * j + 1) = v;
            y(n, c, 2 * i + 1, 2 * j) = v;
            y(n, c, 2 * i + 1, 2 * j + 1) = v;
          }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(in_shape_);
    const std::size_t N = dx.dim(0), C = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t j = 0; j < W; ++j)
            dx(n, c, i, j) = dy(n, c, 2 * i, 2 * j) + dy(n, c, 2 * i, 2 * j + 1) +
                             dy(n, c, 2 * i + 1, 2 * j) + dy(n, c, 2 * i + 1, 2 * j + 1);
    return dx;
  }

 private:
  std::vector<std::size_t> in_shape_;
};

// --- Linear / LayerNorm -----------------------------------------------------

// Applies y = x W^T + b over the last dimension; leading dims are batch.
template <class T>
class Linear {
 public:
  Linear(std::size_t in_dim, std::size_t out_dim) : in_(in_dim), out_(out_dim) {
    weight.resize({out_dim, in_dim});
    bias.resize({out_dim});
  }

  void init(Rng& rng, double stddev = 0.02) {
    for (std::size_t i = 0; i < weight.value.numel(); ++i)
      weight.value[i] = static_cast<T>(rng.normal(0.0, stddev));
    bias.value.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, bool /*train*/) {
    check(x.dim(x.ndim() - 1) == in_, "linear: last dim mismatch");
    x_ = x;
    const std::size_t rows = x.numel() / in_;
    auto shape = x.shape();
    shape.back() = out_;
    Tensor<T> y(shape);
    gemm(false, true, rows, out_, in_, T(1), x.data(), in_, weight.value.data(), in_, T(0),
         y.data(), out_);
    for (std::size_t r = 0; r < rows; ++r) {
      T* py = y.data() + r * out_;
      for (std::size_t o = 0; o < out_; ++o) py[o] += bias.value[o];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const std::size_t rows = dy.numel() / out_;
    gemm(true, false, out_, in_, rows, T(1), dy.data(), out_, x_.data(), in_, T(1),
         weight.grad.data(), in_);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* p = dy.data() + r * out_;
      for (std::size_t o = 0; o < out_; ++o) bias.grad[o] += p[o];
    }
    Tensor<T> dx(x_.shape());
    gemm(false, false, rows, in_, out_, T(1), dy.data(), out_, weight.value.data(), in_, T(0),
         dx.data(), in_);
    return dx;
  }

  void params(const std::string& prefix, ParamList<T>& out) {
    out.emplace_back(prefix + ".weight", &weight);
    out.emplace_back(prefix + ".bias", &bias);
  }

  Parameter<T> weight, bias;

 private:
  std::size_t in_, out_;
  Tensor<T> x_;
};

template <class T>
class LayerNorm {
 public:
  explicit LayerNorm(std::size_t dim, double eps = 1e-5) : dim_(dim), eps_(eps) {
    gamma.resize({dim});
    beta.resize({dim});
    gamma.value.fill(T(1));
    beta.value.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, bool /*train*/) {
    check(x.dim(x.ndim() - 1) == dim_, "layernorm: last dim mismatch");
    const std::size_t rows = x.numel() / dim_;
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(rows, T(0));
    Tensor<T> y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const T* p = x.data() + r * dim_;
      double mean = 0;
      for (std::size_t i = 0; i < dim_; ++i) mean += p[i];
      mean /= dim_;
      double var = 0;
      for (std::size_t i = 0; i < dim_; ++i) {
        const double d = p[i] - mean;
        var += d * d;
      }
      var /= dim_;
      const T istd = static_cast<T>(1.0 / std::sqrt(var + eps_));
      inv_std_[r] = istd;
      T* ph = xhat_.data() + r * dim_;
      T* py = y.data() + r * dim_;
      for (std::size_t i = 0; i < dim_; ++i) {
        ph[i] = static_cast<T>((p[i] - mean) * istd);
        py[i] = gamma.value[i] * ph[i] + beta.value[i];
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const std::size_t rows = dy.numel() / dim_;
    Tensor<T> dx(dy.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const T* pdy = dy.data() + r * dim_;
      const T* ph = xhat_.data() + r * dim_;
      double s1 = 0, s2 = 0;
      for (std::size_t i = 0; i < dim_; ++i) {
        const double gdy = static_cast<double>(gamma.value[i]) * pdy[i];
        s1 += gdy;
        s2 += gdy * ph[i];
        gamma.grad[i] += pdy[i] * ph[i];
        beta.grad[i] += pdy[i];
      }
      s1 /= dim_;
      s2 /= dim_;
      T* pdx = dx.data() + r * dim_;
      for (std::size_t i = 0; i < dim_; ++i) {
        const double gdy = static_cast<double>(gamma.value[i]) * pdy[i];
        pdx[i] = static_cast<T>((gdy - s1 - ph[i] * s2) * inv_std_[r]);
      }
    }
    return dx;
  }

  void params(const std::string& prefix, ParamList<T>& out) {
    out.emplace_back(prefix + ".gamma", &gamma);
    out.emplace_back(prefix + ".beta", &beta);
  }

  Parameter<T> gamma, beta;

 private:
  std::size_t dim_;
  double eps_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

// --- channel concat (decoder skip fusion) ------------------------------------

template <class T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
  const std::size_t N = parts[0]->dim(0), H = parts[0]->dim(2), W = parts[0]->dim(3);
  std::size_t C = 0;
  for (const auto* p : parts) {
    check(p->dim(0) == N && p->dim(2) == H && p->dim(3) == W,
          "concat_channels: spatial/batch mismatch");
    C += p->dim(1);
  }
  Tensor<T> out({N, C, H, W});
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t c0 = 0;
    for (const auto* p : parts) {
      const std::size_t pc = p->dim(1);
      std::copy(&(*p)(n, 0, 0, 0), &(*p)(n, 0, 0, 0) + pc * H * W, &out(n, c0, 0, 0));
      c0 += pc;
    }
  }
  return out;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  return concat_channels<T>({&a, &b});
}

// Splits a gradient along channels into the given channel counts.
template <class T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& d, const std::vector<std::size_t>& counts) {
  const std::size_t N = d.dim(0), H = d.dim(2), W = d.dim(3);
  std::vector<Tensor<T>> parts;
  parts.reserve(counts.size());
  std::size_t c0 = 0;
  for (std::size_t pc : counts) {
    Tensor<T> part({N, pc, H, W});
    for (std::size_t n = 0; n < N; ++n)
      std::copy(&d(n, c0, 0, 0), &d(n, c0, 0, 0) + pc * H * W, &part(n, 0, 0, 0));
    parts.push_back(std::move(part));
    c0 += pc;
  }
  check(c0 == d.dim(1), "split_channels: counts do not cover all channels");
  return parts;
}

template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "add_inplace: shape mismatch");
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] += b[i];
}

}  // namespace unetmer::nn
