#include <doctest.h>

#include "testing.hpp"
#include "unetmer/bottleneck.hpp"

using namespace unetmer;
using unetmer::test::check_gradients;
using unetmer::test::randn;

TEST_SUITE("bottleneck") {

TEST_CASE("token count is scale-invariant") {
  // 256x256, n=4: every scale yields 256 tokens.
  CHECK(token_count(256, 256, 4) == 256);
  // 64x64, n=2: likewise 256.
  CHECK(token_count(64, 64, 2) == 256);

  // Walk the actual tensor path for each scale and compare lengths.
  for (auto [h, n] : std::vector<std::pair<std::size_t, int>>{{256, 4}, {64, 2}}) {
    std::vector<std::size_t> lengths;
    for (int s : {1, 2, 4, 8}) {
      const std::size_t P = static_cast<std::size_t>(s) * s;
      const std::size_t hb = h / (s << n);  // per-patch bottleneck side
      Tensor<double> bottlenecks({P, 3, hb, hb});
      auto tokens = tokenize_batch(bottlenecks, s, 1);
      lengths.push_back(tokens.dim(1));
    }
    for (std::size_t l : lengths) CHECK(l == lengths.front());
    CHECK(lengths.front() == token_count(h, h, n));
  }
}

TEST_CASE("s=2 with four 4x4 maps gives 64 tokens") {
  std::vector<Tensor<double>> maps(4, Tensor<double>({5, 4, 4}));
  Tensor<double> pos({64, 5});
  auto seq = tokenize(maps, pos);
  CHECK(seq.tokens.dim(0) == 64);
  CHECK(seq.tokens.dim(1) == 5);
}

TEST_CASE("detokenize inverts tokenize up to the position embedding") {
  Rng rng(3);
  std::vector<Tensor<double>> maps;
  for (int p = 0; p < 4; ++p) maps.push_back(randn(rng, {3, 2, 2}));
  auto pos = randn(rng, {16, 3});
  auto seq = tokenize(maps, pos);
  auto back = detokenize(seq);
  REQUIRE(back.size() == 4);
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
          const std::size_t t = (p * 2 + i) * 2 + j;
          CHECK(back[p](c, i, j) - pos(t, c) == doctest::Approx(maps[p](c, i, j)));
        }
}

TEST_CASE("round trip keeps each patch in its slot") {
  // Tag patch p with the constant p and check it comes back to slot p.
  std::vector<Tensor<double>> maps;
  for (int p = 0; p < 16; ++p) maps.push_back(Tensor<double>::full({2, 2, 2}, double(p)));
  Tensor<double> pos({64, 2});  // zero position embedding
  auto back = detokenize(tokenize(maps, pos));
  for (int p = 0; p < 16; ++p)
    for (std::size_t i = 0; i < back[p].numel(); ++i) CHECK(back[p][i] == double(p));
}

TEST_CASE("layout/count mismatches are rejected") {
  TokenSequence<double> seq;
  seq.s = 2;
  seq.h_b = 4;
  seq.w_b = 4;
  seq.tokens = Tensor<double>({63, 3});  // layout claims 64
  CHECK_THROWS_AS(detokenize(seq), ValidationError);

  std::vector<Tensor<double>> bad = {Tensor<double>({3, 2, 2}), Tensor<double>({3, 2, 3})};
  Tensor<double> pos({8, 3});
  CHECK_THROWS_AS(tokenize(bad, pos), ValidationError);

  // Patch count that is not s^2 for s in {1,2,4,8}.
  std::vector<Tensor<double>> nine(9, Tensor<double>({1, 2, 2}));
  Tensor<double> pos9({36, 1});
  CHECK_THROWS_AS(tokenize(nine, pos9), ValidationError);
}

TEST_CASE("batched tokenize agrees with the single-image form") {
  Rng rng(4);
  const int s = 2;
  auto batch = randn(rng, {4, 3, 2, 2});  // one image, 4 patches
  auto tokens = tokenize_batch(batch, s, 1);

  std::vector<Tensor<double>> maps;
  for (std::size_t p = 0; p < 4; ++p) {
    Tensor<double> m({3, 2, 2});
    std::copy(&batch(p, 0, 0, 0), &batch(p, 0, 0, 0) + m.numel(), m.data());
    maps.push_back(std::move(m));
  }
  Tensor<double> zero_pos({16, 3});
  auto seq = tokenize(maps, zero_pos);
  for (std::size_t t = 0; t < 16; ++t)
    for (std::size_t c = 0; c < 3; ++c) CHECK(tokens(0, t, c) == seq.tokens(t, c));

  auto back = detokenize_batch(tokens, s, 2, 2);
  CHECK(tensors_equal(back, batch));
}

TEST_CASE("identity-initialized attention block passes tokens through") {
  Rng rng(5);
  nn::TransformerBlock<double> block(8, 2, 4.0);
  block.init(rng);
  // Zero the value rows of the qkv projection, the attention output
  // projection, and the second MLP linear: both residual branches vanish.
  auto& qkv = block.msa().qkv();
  for (std::size_t o = 16; o < 24; ++o)
    for (std::size_t i = 0; i < 8; ++i) qkv.weight.value(o, i) = 0.0;
  for (std::size_t o = 16; o < 24; ++o) qkv.bias.value[o] = 0.0;
  block.msa().proj().weight.value.fill(0.0);
  block.msa().proj().bias.value.fill(0.0);
  block.fc2().weight.value.fill(0.0);
  block.fc2().bias.value.fill(0.0);

  auto x = randn(rng, {2, 4, 8});
  auto y = block.forward(x, true);
  CHECK(tensors_equal(y, x));
}

TEST_CASE("self-attention is permutation-equivariant without position embedding") {
  Rng rng(6);
  nn::MultiHeadSelfAttention<double> msa(8, 2);
  msa.init(rng);
  auto x = randn(rng, {1, 6, 8});
  auto y = msa.forward(x, false);

  // Swap tokens 1 and 4.
  Tensor<double> xp = x;
  for (std::size_t c = 0; c < 8; ++c) std::swap(xp(0, 1, c), xp(0, 4, c));
  auto yp = msa.forward(xp, false);
  for (std::size_t c = 0; c < 8; ++c) {
    CHECK(yp(0, 1, c) == doctest::Approx(y(0, 4, c)).epsilon(1e-12));
    CHECK(yp(0, 4, c) == doctest::Approx(y(0, 1, c)).epsilon(1e-12));
    CHECK(yp(0, 0, c) == doctest::Approx(y(0, 0, c)).epsilon(1e-12));
  }
}

TEST_CASE("a single token attends only to itself") {
  Rng rng(7);
  nn::MultiHeadSelfAttention<double> msa(8, 2);
  msa.init(rng);
  auto x = randn(rng, {1, 1, 8});
  auto y = msa.forward(x, false);

  const auto& attn = msa.last_attention();
  REQUIRE(attn.numel() == 2);  // one weight per head
  CHECK(attn[0] == 1.0);
  CHECK(attn[1] == 1.0);

  // Output equals proj(v): softmax over one element is 1.
  auto qkv_out = msa.qkv().forward(x, false);
  Tensor<double> v({1, 1, 8});
  for (std::size_t c = 0; c < 8; ++c) v(0, 0, c) = qkv_out(0, 0, 16 + c);
  auto expected = msa.proj().forward(v, false);
  for (std::size_t c = 0; c < 8; ++c)
    CHECK(y(0, 0, c) == doctest::Approx(expected(0, 0, c)).epsilon(1e-12));
}

TEST_CASE("transformer block gradients match finite differences (embed 8, 4 tokens, 2 heads)") {
  Rng rng(8);
  nn::TransformerBlock<double> block(8, 2, 4.0);
  block.init(rng);
  auto x = randn(rng, {1, 4, 8});
  auto r = randn(rng, {1, 4, 8});
  nn::ParamList<double> params;
  block.params("block", params);
  auto loss = [&]() {
    auto y = block.forward(x, true);
    double total = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) total += r[i] * y[i];
    return total;
  };
  auto grads = [&]() {
    nn::zero_grads(params);
    block.forward(x, true);
    block.backward(r);
  };
  auto res = check_gradients(params, loss, grads);
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("neck validates token counts and embeds position") {
  Rng rng(9);
  TransformerConfig cfg;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.embed_dim = 8;
  TransformerNeck<double> neck(cfg, 16);
  neck.init(rng);

  auto ok = randn(rng, {2, 16, 8});
  CHECK(neck.forward(ok, false).shape() == ok.shape());

  auto wrong_count = randn(rng, {2, 12, 8});
  CHECK_THROWS_AS(neck.forward(wrong_count, false), ValidationError);
  auto wrong_dim = randn(rng, {2, 16, 6});
  CHECK_THROWS_AS(neck.forward(wrong_dim, false), ValidationError);
}

TEST_CASE("transformer config invariants") {
  TransformerConfig cfg;
  cfg.embed_dim = 10;
  cfg.num_heads = 4;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);  // 10 % 4 != 0
  cfg.num_heads = 2;
  CHECK_NOTHROW(cfg.validate());
  cfg.num_layers = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

}  // TEST_SUITE
