#include <doctest.h>

#include "testing.hpp"
#include "unetmer/nn/attention.hpp"
#include "unetmer/nn/layers.hpp"
#include "unetmer/training.hpp"

using namespace unetmer;
using namespace unetmer::nn;
using unetmer::test::check_gradients;
using unetmer::test::randn;

namespace {

// Scalar loss = sum(R .* module_output) for a fixed random R; its gradient
// w.r.t. the output is R itself.
template <class Module>
auto weighted_loss(Module& m, const Tensor<double>& x, const Tensor<double>& r) {
  return [&m, &x, &r]() {
    Tensor<double> y = m.forward(x, true);
    double loss = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) loss += r[i] * y[i];
    return loss;
  };
}

template <class Module>
auto weighted_grads(Module& m, ParamList<double>& params, const Tensor<double>& x,
                    const Tensor<double>& r) {
  return [&m, &params, &x, &r]() {
    zero_grads(params);
    m.forward(x, true);
    m.backward(r);
  };
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("conv2d matches a direct convolution oracle") {
  Rng rng(1);
  Conv2d<double> conv(2, 3, 3, 1);
  conv.init(rng);
  auto x = randn(rng, {2, 2, 5, 6});
  auto y = conv.forward(x, true);
  REQUIRE(y.shape() == std::vector<std::size_t>{2, 3, 5, 6});

  // Naive direct convolution.
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 3; ++o)
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 6; ++j) {
          double acc = conv.bias.value[o];
          for (std::size_t c = 0; c < 2; ++c)
            for (int ki = 0; ki < 3; ++ki)
              for (int kj = 0; kj < 3; ++kj) {
                const int ii = static_cast<int>(i) + ki - 1;
                const int jj = static_cast<int>(j) + kj - 1;
                if (ii < 0 || ii >= 5 || jj < 0 || jj >= 6) continue;
                acc += conv.weight.value(o, (c * 3 + ki) * 3 + kj) *
                       x(n, c, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
              }
          CHECK(y(n, o, i, j) == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(2);
  Conv2d<double> conv(2, 3, 3, 1);
  conv.init(rng);
  auto x = randn(rng, {2, 2, 4, 4});
  auto r = randn(rng, {2, 3, 4, 4});
  ParamList<double> params;
  conv.params("conv", params);
  auto res = check_gradients(params, weighted_loss(conv, x, r), weighted_grads(conv, params, x, r));
  CHECK(res.max_rel < 1e-6);
}

TEST_CASE("1x1 conv gradients match finite differences") {
  Rng rng(3);
  Conv2d<double> conv(4, 2, 1, 0);
  conv.init(rng);
  auto x = randn(rng, {3, 4, 3, 3});
  auto r = randn(rng, {3, 2, 3, 3});
  ParamList<double> params;
  conv.params("conv1x1", params);
  auto res = check_gradients(params, weighted_loss(conv, x, r), weighted_grads(conv, params, x, r));
  CHECK(res.max_rel < 1e-6);
}

TEST_CASE("batchnorm normalizes over the batch and checks gradients") {
  Rng rng(4);
  BatchNorm2d<double> bn(3);
  auto x = randn(rng, {4, 3, 4, 4}, 2.0);
  auto y = bn.forward(x, true);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 16; ++i) mean += y(n, c, i / 4, i % 4);
    mean /= 64;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 16; ++i) {
        const double d = y(n, c, i / 4, i % 4) - mean;
        var += d * d;
      }
    var /= 64;
    CHECK(std::abs(mean) < 1e-10);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }

  auto r = randn(rng, {4, 3, 4, 4});
  ParamList<double> params;
  bn.params("bn", params);
  auto res = check_gradients(params, weighted_loss(bn, x, r), weighted_grads(bn, params, x, r));
  CHECK(res.max_rel < 1e-6);
}

TEST_CASE("batchnorm input gradient includes the batch-statistics terms") {
  // Chain conv -> bn: finite differences on the conv parameters only pass if
  // bn.backward propagates through the batch mean/var.
  Rng rng(5);
  Conv2d<double> conv(1, 2, 3, 1);
  conv.init(rng);
  BatchNorm2d<double> bn(2);
  auto x = randn(rng, {2, 1, 4, 4});
  auto r = randn(rng, {2, 2, 4, 4});

  ParamList<double> params;
  conv.params("conv", params);
  bn.params("bn", params);
  auto loss = [&]() {
    auto y = bn.forward(conv.forward(x, true), true);
    double total = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) total += r[i] * y[i];
    return total;
  };
  auto grads = [&]() {
    zero_grads(params);
    bn.forward(conv.forward(x, true), true);
    conv.backward(bn.backward(r));
  };
  auto res = check_gradients(params, loss, grads);
  CHECK(res.max_rel < 1e-6);
}

TEST_CASE("maxpool and upsample do what they say") {
  Tensor<double> x({1, 1, 2, 4});
  for (std::size_t i = 0; i < 8; ++i) x[i] = static_cast<double>(i);
  MaxPool2d<double> pool;
  auto y = pool.forward(x, true);
  REQUIRE(y.shape() == std::vector<std::size_t>{1, 1, 1, 2});
  CHECK(y[0] == 5.0);
  CHECK(y[1] == 7.0);
  Tensor<double> dy({1, 1, 1, 2});
  dy[0] = 1.0;
  dy[1] = 2.0;
  auto dx = pool.backward(dy);
  CHECK(dx[5] == 1.0);
  CHECK(dx[7] == 2.0);
  CHECK(dx[0] == 0.0);

  Upsample2x<double> up;
  Tensor<double> u({1, 1, 1, 2});
  u[0] = 3.0;
  u[1] = 4.0;
  auto uy = up.forward(u, true);
  REQUIRE(uy.shape() == std::vector<std::size_t>{1, 1, 2, 4});
  CHECK(uy(0, 0, 1, 1) == 3.0);
  CHECK(uy(0, 0, 0, 2) == 4.0);
  auto du = up.backward(uy);
  CHECK(du[0] == 4 * 3.0);
  CHECK(du[1] == 4 * 4.0);
}

TEST_CASE("pool/upsample chain propagates gradients") {
  Rng rng(6);
  Conv2d<double> conv(1, 2, 3, 1);
  conv.init(rng);
  MaxPool2d<double> pool;
  Upsample2x<double> up;
  auto x = randn(rng, {1, 1, 6, 6});
  auto r = randn(rng, {1, 2, 6, 6});
  ParamList<double> params;
  conv.params("conv", params);
  auto loss = [&]() {
    auto y = up.forward(pool.forward(conv.forward(x, true), true), true);
    double total = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) total += r[i] * y[i];
    return total;
  };
  auto grads = [&]() {
    zero_grads(params);
    up.forward(pool.forward(conv.forward(x, true), true), true);
    conv.backward(pool.backward(up.backward(r)));
  };
  auto res = check_gradients(params, loss, grads);
  CHECK(res.max_rel < 1e-6);
}

TEST_CASE("linear applies over the last dim and checks gradients") {
  Rng rng(7);
  Linear<double> lin(5, 3);
  lin.init(rng, 0.5);
  auto x = randn(rng, {2, 4, 5});
  auto y = lin.forward(x, true);
  REQUIRE(y.shape() == std::vector<std::size_t>{2, 4, 3});
  double expect = lin.bias.value[1];
  for (std::size_t k = 0; k < 5; ++k) expect += x(1, 2, k) * lin.weight.value(1, k);
  CHECK(y(1, 2, 1) == doctest::Approx(expect).epsilon(1e-12));

  auto r = randn(rng, {2, 4, 3});
  ParamList<double> params;
  lin.params("linear", params);
  auto res = check_gradients(params, weighted_loss(lin, x, r), weighted_grads(lin, params, x, r));
  CHECK(res.max_rel < 1e-6);
}

TEST_CASE("layernorm gradients match finite differences") {
  Rng rng(8);
  LayerNorm<double> ln(6);
  auto x = randn(rng, {3, 4, 6}, 1.5);
  auto r = randn(rng, {3, 4, 6});
  ParamList<double> params;
  ln.params("ln", params);
  auto res = check_gradients(params, weighted_loss(ln, x, r), weighted_grads(ln, params, x, r));
  CHECK(res.max_rel < 1e-6);

  // Chain through a linear layer so the layernorm input gradient is covered.
  Linear<double> lin(6, 6);
  lin.init(rng, 0.3);
  ParamList<double> chain;
  lin.params("lin", chain);
  auto loss = [&]() {
    auto y = ln.forward(lin.forward(x, true), true);
    double total = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) total += r[i] * y[i];
    return total;
  };
  auto grads = [&]() {
    zero_grads(chain);
    ln.forward(lin.forward(x, true), true);
    lin.backward(ln.backward(r));
  };
  auto res2 = check_gradients(chain, loss, grads);
  CHECK(res2.max_rel < 1e-6);
}

TEST_CASE("gelu and sigmoid derivatives match finite differences") {
  Rng rng(9);
  for (int rep = 0; rep < 50; ++rep) {
    const double v = rng.normal(0.0, 2.0);
    const double h = 1e-6;
    {
      Gelu<double> g;
      Tensor<double> xp({1}), xm({1}), x({1}), dy({1});
      x[0] = v;
      xp[0] = v + h;
      xm[0] = v - h;
      dy[0] = 1.0;
      g.forward(x, true);
      const double analytic = g.backward(dy)[0];
      Gelu<double> g2;
      const double numeric = (g2.forward(xp, true)[0] - g2.forward(xm, true)[0]) / (2 * h);
      CHECK(analytic == doctest::Approx(numeric).epsilon(1e-6));
    }
    {
      Sigmoid<double> s;
      Tensor<double> xp({1}), xm({1}), x({1}), dy({1});
      x[0] = v;
      xp[0] = v + h;
      xm[0] = v - h;
      dy[0] = 1.0;
      s.forward(x, true);
      const double analytic = s.backward(dy)[0];
      Sigmoid<double> s2;
      const double numeric = (s2.forward(xp, true)[0] - s2.forward(xm, true)[0]) / (2 * h);
      CHECK(analytic == doctest::Approx(numeric).epsilon(1e-6));
    }
  }
}

TEST_CASE("multi-head attention gradients match finite differences") {
  Rng rng(10);
  MultiHeadSelfAttention<double> msa(8, 2);
  msa.init(rng);
  auto x = randn(rng, {2, 4, 8});
  auto r = randn(rng, {2, 4, 8});
  ParamList<double> params;
  msa.params("msa", params);
  auto res = check_gradients(params, weighted_loss(msa, x, r), weighted_grads(msa, params, x, r));
  CHECK(res.max_rel < 1e-6);
}

TEST_CASE("attention rows are probability distributions") {
  Rng rng(11);
  MultiHeadSelfAttention<double> msa(16, 4);
  msa.init(rng);
  auto x = randn(rng, {2, 6, 16});
  msa.forward(x, true);
  const auto& attn = msa.last_attention();
  REQUIRE(attn.shape() == std::vector<std::size_t>{2, 4, 6, 6});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t h = 0; h < 4; ++h)
      for (std::size_t t = 0; t < 6; ++t) {
        double sum = 0;
        for (std::size_t u = 0; u < 6; ++u) {
          CHECK(attn(n, h, t, u) >= 0.0);
          sum += attn(n, h, t, u);
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
      }
}

TEST_CASE("adam converges on a quadratic") {
  Parameter<double> theta;
  theta.resize({1});
  theta.value[0] = 0.0;
  ParamList<double> params{{"theta", &theta}};
  Adam<double> adam;
  // Minimize (x - 3)^2 by feeding the analytic gradient.
  for (int step = 0; step < 2000; ++step) {
    theta.grad[0] = 2.0 * (theta.value[0] - 3.0);
    adam.step(params, 0.01);
  }
  CHECK(theta.value[0] == doctest::Approx(3.0).epsilon(1e-3));
}

}  // TEST_SUITE
