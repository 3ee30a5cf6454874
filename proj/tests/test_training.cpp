#include <doctest.h>

#include <cmath>

#include "testing.hpp"
#include "unetmer/training.hpp"

using namespace unetmer;
using unetmer::test::randn;

namespace {

UNetmerConfig smoke_config(std::vector<int> scales = {1, 2}) {
  UNetmerConfig cfg;
  cfg.backbone.base_channels = 4;
  cfg.backbone.n_pool = 2;
  cfg.transformer.num_layers = 1;
  cfg.transformer.num_heads = 2;
  cfg.scales = std::move(scales);
  cfg.input_h = cfg.input_w = 64;
  return cfg;
}

std::vector<Sample> smoke_samples(int n, std::uint64_t seed = 0) {
  return make_synthetic_dataset(seed, n, {64, 64}, {0.4, 0.8}, 0.05);
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("lr schedule halves every period") {
  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.lr0 = 1e-4;
  cfg.lr_halving_period = 20;
  CHECK(lr_at_epoch(cfg, 0) == 1e-4);
  CHECK(lr_at_epoch(cfg, 19) == 1e-4);
  CHECK(lr_at_epoch(cfg, 20) == 5e-5);
  CHECK(lr_at_epoch(cfg, 39) == 5e-5);
  CHECK(lr_at_epoch(cfg, 40) == 2.5e-5);
  CHECK(lr_at_epoch(cfg, 45) == 2.5e-5);
  CHECK(lr_at_epoch(cfg, 99) == 6.25e-6);
  CHECK_THROWS_AS(lr_at_epoch(cfg, 100), ValidationError);
  CHECK_THROWS_AS(lr_at_epoch(cfg, -1), ValidationError);
}

TEST_CASE("round-robin scale sampling") {
  const std::vector<int> two{1, 2};
  CHECK(sample_scale(0, two) == 1);
  CHECK(sample_scale(1, two) == 2);
  CHECK(sample_scale(2, two) == 1);
  CHECK(sample_scale(3, two) == 2);

  const std::vector<int> one{1};
  for (std::size_t step = 0; step < 5; ++step) CHECK(sample_scale(step, one) == 1);

  const std::vector<int> four{1, 2, 4, 8};
  CHECK(sample_scale(6, four) == 4);

  // Coverage: over E steps every scale appears floor(E/|scales|) times.
  std::map<int, int> counts;
  for (std::size_t step = 0; step < 10; ++step) ++counts[sample_scale(step, four)];
  for (int s : four) CHECK(counts[s] >= 10 / 4);
}

TEST_CASE("cross-entropy of uniform logits is ln K") {
  for (int K : {2, 3, 5}) {
    Tensor<double> logits({1, static_cast<std::size_t>(K), 4, 4});
    logits.fill(0.7);  // equal in every class
    Tensor<std::uint8_t> labels({1, 4, 4});
    CHECK(std::abs(cross_entropy(logits, labels) - std::log(double(K))) < 1e-12);
  }
}

TEST_CASE("cross-entropy vanishes as the correct-class margin grows") {
  Tensor<double> logits({1, 2, 2, 2});
  Tensor<std::uint8_t> labels({1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) {
    logits[i] = 50.0;       // class 0 logit
    logits[4 + i] = -50.0;  // class 1 logit
  }
  CHECK(cross_entropy(logits, labels) < 1e-6);
}

TEST_CASE("cross-entropy matches a per-pixel -log softmax oracle") {
  Rng rng(3);
  auto logits = randn(rng, {2, 2, 4, 4}, 2.0);
  auto labels = test::random_labels(rng, {2, 4, 4}, 2);
  double oracle = 0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 16; ++i) {
      const double a = logits[n * 32 + i], b = logits[n * 32 + 16 + i];
      const double z = std::log(std::exp(a) + std::exp(b));
      oracle += z - (labels[n * 16 + i] == 0 ? a : b);
    }
  oracle /= 32.0;
  CHECK(std::abs(cross_entropy(logits, labels) - oracle) < 1e-6);
}

TEST_CASE("cross-entropy gradient matches finite differences") {
  Rng rng(4);
  auto logits = randn(rng, {1, 3, 2, 2});
  auto labels = test::random_labels(rng, {1, 2, 2}, 3);
  Tensor<double> grad;
  cross_entropy(logits, labels, &grad);
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    const double h = 1e-6;
    Tensor<double> lp = logits, lm = logits;
    lp[i] += h;
    lm[i] -= h;
    const double numeric = (cross_entropy(lp, labels) - cross_entropy(lm, labels)) / (2 * h);
    CHECK(grad[i] == doctest::Approx(numeric).epsilon(1e-5));
  }
}

TEST_CASE("labels out of range are rejected") {
  Tensor<double> logits({1, 2, 2, 2});
  Tensor<std::uint8_t> labels({1, 2, 2});
  labels[0] = 2;
  CHECK_THROWS_AS(cross_entropy(logits, labels), ValidationError);
}

TEST_CASE("one epoch of four samples at batch two gives two steps") {
  UNetmer<float> model(smoke_config({1}), 1);
  auto samples = smoke_samples(4);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  cfg.scales = {1};
  auto history = train(model, samples, {}, cfg);
  REQUIRE(history.epochs.size() == 1);
  CHECK(history.steps == 2);
  CHECK(std::isfinite(history.epochs[0].train_loss));
  CHECK(std::isnan(history.epochs[0].val_dice_s1));  // no validation set
}

TEST_CASE("equal seeds give identical loss curves") {
  auto samples = smoke_samples(6);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 3;
  cfg.scales = {1, 2};
  cfg.seed = 77;

  UNetmer<float> m1(smoke_config(), 5), m2(smoke_config(), 5);
  auto h1 = train(m1, samples, {}, cfg);
  auto h2 = train(m2, samples, {}, cfg);
  REQUIRE(h1.epochs.size() == h2.epochs.size());
  for (std::size_t e = 0; e < h1.epochs.size(); ++e)
    CHECK(h1.epochs[e].train_loss == h2.epochs[e].train_loss);
}

TEST_CASE("a few epochs reduce the training loss") {
  UNetmer<float> model(smoke_config(), 2);
  auto samples = smoke_samples(8);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 4;
  cfg.scales = {1, 2};
  cfg.lr0 = 1e-3;
  auto history = train(model, samples, {}, cfg);
  CHECK(history.epochs.back().train_loss < history.epochs.front().train_loss);
}

TEST_CASE("validation dice is tracked and best checkpoint saved") {
  auto dir = std::filesystem::temp_directory_path() / "unetmer_test_train";
  std::filesystem::remove_all(dir);
  UNetmer<float> model(smoke_config({1}), 3);
  auto samples = smoke_samples(6);
  std::vector<Sample> val(samples.begin() + 4, samples.end());
  std::vector<Sample> tr(samples.begin(), samples.begin() + 4);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.scales = {1};
  cfg.out_dir = dir;
  cfg.checkpoint_every = 1;
  auto history = train(model, tr, val, cfg);
  CHECK(history.best_epoch >= 0);
  CHECK(std::filesystem::exists(dir / "checkpoint_best"));
  CHECK(std::filesystem::exists(dir / "checkpoint_final"));
  CHECK(std::filesystem::exists(dir / "checkpoint_epoch_0"));  // cadence checkpoints
  CHECK(std::filesystem::exists(dir / "history.txt"));
  for (const auto& r : history.epochs) CHECK(std::isfinite(r.val_dice_s1));
}

TEST_CASE("every parameter receives gradient on a training batch") {
  // Attention U-Net with transformer: covers gates, position embedding, and
  // every decoder pathway.
  auto cfg = smoke_config({2});
  cfg.backbone.variant = Variant::AttentionUNet;
  UNetmer<float> model(cfg, 8);
  Rng rng(9);
  auto images = test::randnf(rng, {2, 1, 64, 64});
  auto labels = test::random_labels(rng, {2, 64, 64}, 2);
  auto dead = dead_gradients(model, images, labels, 2);
  CHECK(dead.empty());

  auto cfgpp = smoke_config({2});
  cfgpp.backbone.variant = Variant::UNetPP;
  UNetmer<float> pp(cfgpp, 8);
  auto dead_pp = dead_gradients(pp, images, labels, 2);
  CHECK(dead_pp.empty());
}

TEST_CASE("non-finite parameters abort with a diagnostic") {
  UNetmer<float> model(smoke_config({1}), 4);
  auto params = model.parameters();
  params.front().second->value[0] = std::numeric_limits<float>::quiet_NaN();
  auto samples = smoke_samples(2);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  cfg.scales = {1};
  CHECK_THROWS_WITH_AS(train(model, samples, {}, cfg), doctest::Contains("epoch 0"),
                       DivergenceError);
}

TEST_CASE("training scales must be configured on the model") {
  UNetmer<float> model(smoke_config({1}), 4);
  auto samples = smoke_samples(2);
  TrainConfig cfg;
  cfg.scales = {1, 4};
  CHECK_THROWS_AS(train(model, samples, {}, cfg), ValidationError);
}

}  // TEST_SUITE
