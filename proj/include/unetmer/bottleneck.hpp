#pragma once

#include <memory>
#include <vector>

#include "unetmer/nn/attention.hpp"
#include "unetmer/patchify.hpp"

namespace unetmer {

struct TransformerConfig {
  int num_layers = 4;
  int num_heads = 8;
  double mlp_ratio = 4.0;
  int embed_dim = 0;  // 0 = derive from the backbone bottleneck width

  void validate() const {
    check(num_layers >= 1, "transformer num_layers must be >= 1");
    check(num_heads >= 1, "transformer num_heads must be >= 1");
    check(embed_dim >= 1, "transformer embed_dim must be >= 1");
    check(embed_dim % num_heads == 0, "embed_dim must be divisible by num_heads");
    check(mlp_ratio > 0, "mlp_ratio must be positive");
  }
};

// Token count for an input of (H, W) with n pooling stages. Independent of
// the patch scale s: s^2 patches contribute (H/(2^n s)) * (W/(2^n s)) tokens
// each, so the product is H*W / 2^(2n) regardless of s.
inline std::size_t token_count(std::size_t h, std::size_t w, int n_pool) {
  const std::size_t stride = std::size_t{1} << n_pool;
  check(h % stride == 0 && w % stride == 0, "input size not divisible by 2^n_pool");
  return (h / stride) * (w / stride);
}

// One image's bottleneck features flattened to tokens: token order is patch
// row-major, within-patch row-major.
template <class T>
struct TokenSequence {
  Tensor<T> tokens;  // [N_tok, C_b]
  int s = 1;
  std::size_t h_b = 0, w_b = 0;  // per-patch bottleneck spatial dims
};

// Batched reshape [N*s^2, C, h_b, w_b] -> [N, s^2*h_b*w_b, C]. Pure
// reindexing; also serves as the gradient op of detokenize_batch.
template <class T>
Tensor<T> tokenize_batch(const Tensor<T>& bottlenecks, int s, std::size_t n_images) {
  const std::size_t P = static_cast<std::size_t>(s) * static_cast<std::size_t>(s);
  check(bottlenecks.dim(0) == n_images * P, "tokenize: item count != n_images * s^2");
  const std::size_t C = bottlenecks.dim(1), hb = bottlenecks.dim(2), wb = bottlenecks.dim(3);
  Tensor<T> tokens({n_images, P * hb * wb, C});
  for (std::size_t n = 0; n < n_images; ++n)
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t i = 0; i < hb; ++i)
        for (std::size_t j = 0; j < wb; ++j) {
          const std::size_t t = (p * hb + i) * wb + j;
          for (std::size_t c = 0; c < C; ++c)
            tokens(n, t, c) = bottlenecks(n * P + p, c, i, j);
        }
  return tokens;
}

// Inverse reshape [N, s^2*h_b*w_b, C] -> [N*s^2, C, h_b, w_b].
template <class T>
Tensor<T> detokenize_batch(const Tensor<T>& tokens, int s, std::size_t h_b, std::size_t w_b) {
  const std::size_t P = static_cast<std::size_t>(s) * static_cast<std::size_t>(s);
  const std::size_t N = tokens.dim(0), C = tokens.dim(2);
  check(tokens.dim(1) == P * h_b * w_b,
        "detokenize: token count " + std::to_string(tokens.dim(1)) +
            " does not match layout s=" + std::to_string(s) + ", " + std::to_string(h_b) + "x" +
            std::to_string(w_b));
  Tensor<T> out({N * P, C, h_b, w_b});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t i = 0; i < h_b; ++i)
        for (std::size_t j = 0; j < w_b; ++j) {
          const std::size_t t = (p * h_b + i) * w_b + j;
          for (std::size_t c = 0; c < C; ++c)
            out(n * P + p, c, i, j) = tokens(n, t, c);
        }
  return out;
}

// Learned per-token position table, added elementwise. Shared across scales,
// which is valid because the token count does not depend on s.
template <class T>
class PositionEmbedding {
 public:
  PositionEmbedding(std::size_t n_tokens, std::size_t dim) : n_tokens_(n_tokens), dim_(dim) {
    table.resize({n_tokens, dim});
  }

  void init(Rng& rng) {
    for (std::size_t i = 0; i < table.value.numel(); ++i)
      table.value[i] = static_cast<T>(rng.normal(0.0, 0.02));
  }

  Tensor<T> forward(const Tensor<T>& tokens, bool /*train*/) {
    check(tokens.dim(1) == n_tokens_,
          "token count " + std::to_string(tokens.dim(1)) + " != position table size " +
              std::to_string(n_tokens_));
    check(tokens.dim(2) == dim_, "token dim mismatch with position table");
    Tensor<T> y = tokens;
    const std::size_t N = tokens.dim(0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 0; t < n_tokens_; ++t) {
        T* p = &y(n, t, 0);
        const T* e = &table.value(t, 0);
        for (std::size_t c = 0; c < dim_; ++c) p[c] += e[c];
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const std::size_t N = dy.dim(0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 0; t < n_tokens_; ++t) {
        const T* p = &dy(n, t, 0);
        T* g = &table.grad(t, 0);
        for (std::size_t c = 0; c < dim_; ++c) g[c] += p[c];
      }
    return dy;
  }

  void params(const std::string& prefix, nn::ParamList<T>& out) {
    out.emplace_back(prefix + ".table", &table);
  }

  nn::Parameter<T> table;

 private:
  std::size_t n_tokens_, dim_;
};

// Position embedding plus a stack of transformer blocks operating on the
// concatenated per-patch bottleneck tokens.
template <class T>
class TransformerNeck {
 public:
  TransformerNeck(const TransformerConfig& cfg, std::size_t n_tokens)
      : cfg_(cfg), pos_(n_tokens, static_cast<std::size_t>(cfg.embed_dim)) {
    cfg.validate();
    for (int l = 0; l < cfg.num_layers; ++l)
      blocks_.push_back(std::make_unique<nn::TransformerBlock<T>>(
          static_cast<std::size_t>(cfg.embed_dim), static_cast<std::size_t>(cfg.num_heads),
          cfg.mlp_ratio));
  }

  void init(Rng& rng) {
    pos_.init(rng);
    for (auto& b : blocks_) b->init(rng);
  }

  // tokens [N, T, C_b] -> same shape with global context mixed in.
  Tensor<T> forward(const Tensor<T>& tokens, bool train) {
    Tensor<T> h = pos_.forward(tokens, train);
    for (auto& b : blocks_) h = b->forward(h, train);
    return h;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> d = dy;
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d = (*it)->backward(d);
    return pos_.backward(d);
  }

  void params(const std::string& prefix, nn::ParamList<T>& out) {
    pos_.params(prefix + ".pos", out);
    for (std::size_t l = 0; l < blocks_.size(); ++l)
      blocks_[l]->params(prefix + ".block" + std::to_string(l), out);
  }

  PositionEmbedding<T>& pos() { return pos_; }
  nn::TransformerBlock<T>& block(std::size_t l) { return *blocks_[l]; }
  std::size_t num_blocks() const { return blocks_.size(); }

 private:
  TransformerConfig cfg_;
  PositionEmbedding<T> pos_;
  std::vector<std::unique_ptr<nn::TransformerBlock<T>>> blocks_;
};

// --- single-image spec-level ops ---------------------------------------------

// Concatenates the s^2 per-patch bottleneck maps of one image into a token
// sequence and adds the position embedding.
template <class T>
TokenSequence<T> tokenize(const std::vector<Tensor<T>>& bottlenecks,
                          const Tensor<T>& position_table) {
  check(!bottlenecks.empty(), "tokenize: empty patch list");
  const auto& first = bottlenecks.front();
  check(first.ndim() == 3, "tokenize: expected [C, h_b, w_b] patches");
  for (const auto& b : bottlenecks)
    check(b.shape() == first.shape(), "tokenize: bottlenecks do not share one shape");
  const std::size_t P = bottlenecks.size();
  const auto s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(P))));
  check(static_cast<std::size_t>(s) * static_cast<std::size_t>(s) == P && valid_scale(s),
        "tokenize: patch count must be s^2 for s in {1,2,4,8}");
  const std::size_t C = first.dim(0), hb = first.dim(1), wb = first.dim(2);

  TokenSequence<T> seq;
  seq.s = s;
  seq.h_b = hb;
  seq.w_b = wb;
  seq.tokens = Tensor<T>({P * hb * wb, C});
  check(position_table.ndim() == 2 && position_table.dim(0) == P * hb * wb &&
            position_table.dim(1) == C,
        "tokenize: position table shape mismatch");
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t i = 0; i < hb; ++i)
      for (std::size_t j = 0; j < wb; ++j) {
        const std::size_t t = (p * hb + i) * wb + j;
        for (std::size_t c = 0; c < C; ++c)
          seq.tokens(t, c) = bottlenecks[p](c, i, j) + position_table(t, c);
      }
  return seq;
}

// Exact inverse of the tokenize reshape; the position embedding is not
// subtracted.
template <class T>
std::vector<Tensor<T>> detokenize(const TokenSequence<T>& seq) {
  const std::size_t P = static_cast<std::size_t>(seq.s) * static_cast<std::size_t>(seq.s);
  check(seq.tokens.ndim() == 2 && seq.tokens.dim(0) == P * seq.h_b * seq.w_b,
        "detokenize: token count " + std::to_string(seq.tokens.dim(0)) +
            " inconsistent with patch layout");
  const std::size_t C = seq.tokens.dim(1);
  std::vector<Tensor<T>> out(P, Tensor<T>({C, seq.h_b, seq.w_b}));
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t i = 0; i < seq.h_b; ++i)
      for (std::size_t j = 0; j < seq.w_b; ++j) {
        const std::size_t t = (p * seq.h_b + i) * seq.w_b + j;
        for (std::size_t c = 0; c < C; ++c) out[p](c, i, j) = seq.tokens(t, c);
      }
  return out;
}

}  // namespace unetmer
