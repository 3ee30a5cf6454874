#pragma once

#include <cmath>

#include "unetmer/nn/layers.hpp"

namespace unetmer::nn {

// Softmax over the last dimension.
template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  const std::size_t d = x.dim(x.ndim() - 1);
  const std::size_t rows = x.numel() / d;
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = x.data() + r * d;
    T* q = y.data() + r * d;
    T mx = p[0];
    for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, p[i]);
    double sum = 0;
    for (std::size_t i = 0; i < d; ++i) {
      const double e = std::exp(static_cast<double>(p[i] - mx));
      q[i] = static_cast<T>(e);
      sum += e;
    }
    const T inv = static_cast<T>(1.0 / sum);
    for (std::size_t i = 0; i < d; ++i) q[i] *= inv;
  }
  return y;
}

// Given a = softmax(s) and da, returns ds = a .* (da - sum(da .* a)).
template <class T>
Tensor<T> softmax_backward_lastdim(const Tensor<T>& a, const Tensor<T>& da) {
  const std::size_t d = a.dim(a.ndim() - 1);
  const std::size_t rows = a.numel() / d;
  Tensor<T> ds(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* pa = a.data() + r * d;
    const T* pd = da.data() + r * d;
    T* po = ds.data() + r * d;
    double dot = 0;
    for (std::size_t i = 0; i < d; ++i) dot += static_cast<double>(pd[i]) * pa[i];
    for (std::size_t i = 0; i < d; ++i) po[i] = pa[i] * (pd[i] - static_cast<T>(dot));
  }
  return ds;
}

// Multi-head self-attention on token sequences [N, T, D]. Every output token
// attends to every input token, which is what carries context across patches.
template <class T>
class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention(std::size_t embed_dim, std::size_t num_heads)
      : dim_(embed_dim), heads_(num_heads), dh_(embed_dim / num_heads),
        qkv_(embed_dim, 3 * embed_dim), proj_(embed_dim, embed_dim) {
    check(embed_dim % num_heads == 0, "embed_dim must be divisible by num_heads");
  }

  void init(Rng& rng) {
    qkv_.init(rng);
    proj_.init(rng);
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    check(x.ndim() == 3 && x.dim(2) == dim_, "attention: expected [N, T, D]");
    const std::size_t N = x.dim(0), Tk = x.dim(1);
    tokens_ = Tk;
    Tensor<T> qkv_out = qkv_.forward(x, train);  // [N, T, 3D]

    q_ = Tensor<T>({N, heads_, Tk, dh_});
    k_ = Tensor<T>({N, heads_, Tk, dh_});
    v_ = Tensor<T>({N, heads_, Tk, dh_});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 0; t < Tk; ++t) {
        const T* p = &qkv_out(n, t, 0);
        for (std::size_t h = 0; h < heads_; ++h)
          for (std::size_t d = 0; d < dh_; ++d) {
            q_(n, h, t, d) = p[h * dh_ + d];
            k_(n, h, t, d) = p[dim_ + h * dh_ + d];
            v_(n, h, t, d) = p[2 * dim_ + h * dh_ + d];
          }
      }

    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh_)));
    Tensor<T> scores({N, heads_, Tk, Tk});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t h = 0; h < heads_; ++h)
        gemm(false, true, Tk, Tk, dh_, scale, &q_(n, h, 0, 0), dh_, &k_(n, h, 0, 0), dh_, T(0),
             &scores(n, h, 0, 0), Tk);
    attn_ = softmax_lastdim(scores);

    Tensor<T> ctx({N, heads_, Tk, dh_});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t h = 0; h < heads_; ++h)
        gemm(false, false, Tk, dh_, Tk, T(1), &attn_(n, h, 0, 0), Tk, &v_(n, h, 0, 0), dh_,
             T(0), &ctx(n, h, 0, 0), dh_);

    Tensor<T> merged({N, Tk, dim_});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 0; t < Tk; ++t)
        for (std::size_t h = 0; h < heads_; ++h)
          for (std::size_t d = 0; d < dh_; ++d) merged(n, t, h * dh_ + d) = ctx(n, h, t, d);
    return proj_.forward(merged, train);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const std::size_t N = dy.dim(0), Tk = tokens_;
    Tensor<T> dmerged = proj_.backward(dy);

    Tensor<T> dctx({N, heads_, Tk, dh_});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 0; t < Tk; ++t)
        for (std::size_t h = 0; h < heads_; ++h)
          for (std::size_t d = 0; d < dh_; ++d) dctx(n, h, t, d) = dmerged(n, t, h * dh_ + d);

    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh_)));
    Tensor<T> dq({N, heads_, Tk, dh_}), dk({N, heads_, Tk, dh_}), dv({N, heads_, Tk, dh_});
    Tensor<T> dattn({N, heads_, Tk, Tk});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t h = 0; h < heads_; ++h) {
        // dv = attn^T * dctx ; dattn = dctx * v^T
        gemm(true, false, Tk, dh_, Tk, T(1), &attn_(n, h, 0, 0), Tk, &dctx(n, h, 0, 0), dh_,
             T(0), &dv(n, h, 0, 0), dh_);
        gemm(false, true, Tk, Tk, dh_, T(1), &dctx(n, h, 0, 0), dh_, &v_(n, h, 0, 0), dh_,
             T(0), &dattn(n, h, 0, 0), Tk);
      }
    Tensor<T> dscores = softmax_backward_lastdim(attn_, dattn);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t h = 0; h < heads_; ++h) {
        gemm(false, false, Tk, dh_, Tk, scale, &dscores(n, h, 0, 0), Tk, &k_(n, h, 0, 0), dh_,
             T(0), &dq(n, h, 0, 0), dh_);
        gemm(true, false, Tk, dh_, Tk, scale, &dscores(n, h, 0, 0), Tk, &q_(n, h, 0, 0), dh_,
             T(0), &dk(n, h, 0, 0), dh_);
      }

    Tensor<T> dqkv({N, Tk, 3 * dim_});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 0; t < Tk; ++t) {
        T* p = &dqkv(n, t, 0);
        for (std::size_t h = 0; h < heads_; ++h)
          for (std::size_t d = 0; d < dh_; ++d) {
            p[h * dh_ + d] = dq(n, h, t, d);
            p[dim_ + h * dh_ + d] = dk(n, h, t, d);
            p[2 * dim_ + h * dh_ + d] = dv(n, h, t, d);
          }
      }
    return qkv_.backward(dqkv);
  }

  void params(const std::string& prefix, ParamList<T>& out) {
    qkv_.params(prefix + ".qkv", out);
    proj_.params(prefix + ".proj", out);
  }

  // Attention rows of the last forward, [N, heads, T, T]; rows sum to 1.
  const Tensor<T>& last_attention() const { return attn_; }

  Linear<T>& qkv() { return qkv_; }
  Linear<T>& proj() { return proj_; }

 private:
  std::size_t dim_, heads_, dh_;
  Linear<T> qkv_, proj_;
  std::size_t tokens_ = 0;
  Tensor<T> q_, k_, v_, attn_;
};

// Pre-norm block: x + MSA(LN(x)), then x + MLP(LN(x)).
template <class T>
class TransformerBlock {
 public:
  TransformerBlock(std::size_t embed_dim, std::size_t num_heads, double mlp_ratio)
      : ln1_(embed_dim), ln2_(embed_dim), msa_(embed_dim, num_heads),
        fc1_(embed_dim, hidden_dim(embed_dim, mlp_ratio)),
        fc2_(hidden_dim(embed_dim, mlp_ratio), embed_dim) {}

  void init(Rng& rng) {
    msa_.init(rng);
    fc1_.init(rng);
    fc2_.init(rng);
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    Tensor<T> h = msa_.forward(ln1_.forward(x, train), train);
    add_inplace(h, x);
    Tensor<T> m = fc2_.forward(gelu_.forward(fc1_.forward(ln2_.forward(h, train), train), train),
                               train);
    add_inplace(m, h);
    return m;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dh = ln2_.backward(fc1_.backward(gelu_.backward(fc2_.backward(dy))));
    add_inplace(dh, dy);
    Tensor<T> dx = ln1_.backward(msa_.backward(dh));
    add_inplace(dx, dh);
    return dx;
  }

  void params(const std::string& prefix, ParamList<T>& out) {
    ln1_.params(prefix + ".ln1", out);
    msa_.params(prefix + ".msa", out);
    ln2_.params(prefix + ".ln2", out);
    fc1_.params(prefix + ".fc1", out);
    fc2_.params(prefix + ".fc2", out);
  }

  MultiHeadSelfAttention<T>& msa() { return msa_; }
  Linear<T>& fc2() { return fc2_; }

 private:
  static std::size_t hidden_dim(std::size_t d, double ratio) {
    const auto h = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(d)));
    check(h >= 1, "mlp_ratio too small");
    return h;
  }

  LayerNorm<T> ln1_, ln2_;
  MultiHeadSelfAttention<T> msa_;
  Linear<T> fc1_, fc2_;
  Gelu<T> gelu_;
};

}  // namespace unetmer::nn
