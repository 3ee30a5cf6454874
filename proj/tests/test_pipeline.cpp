#include <doctest.h>

#include "testing.hpp"
#include "unetmer/pipeline.hpp"

using namespace unetmer;

namespace {

UNetmer<float> tiny_model(std::vector<int> scales) {
  UNetmerConfig cfg;
  cfg.backbone.base_channels = 2;
  cfg.backbone.n_pool = 2;
  cfg.transformer.num_layers = 1;
  cfg.transformer.num_heads = 2;
  cfg.scales = std::move(scales);
  cfg.input_h = cfg.input_w = 16;
  return UNetmer<float>(cfg, 11);
}

Sample slice_sample(Rng& rng, const std::string& key, int index) {
  Sample s;
  s.image = test::randnf(rng, {1, 16, 16});
  s.mask = test::random_labels(rng, {16, 16}, 2);
  s.id = key.empty() ? "img" + std::to_string(index) : key + "_s" + std::to_string(index);
  s.volume_key = key;
  s.slice_index = key.empty() ? -1 : index;
  return s;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("volume slices stitch into one scored item") {
  auto model = tiny_model({1});
  Rng rng(3);
  std::vector<Sample> samples;
  for (int d = 0; d < 3; ++d) samples.push_back(slice_sample(rng, "volA", d));
  samples.push_back(slice_sample(rng, "", 0));  // standalone 2D image

  auto items = predict_split(model, samples, 1);
  REQUIRE(items.size() == 2);
  CHECK(items[0].id == "img0");
  CHECK(items[0].pred.shape() == std::vector<std::size_t>{16, 16});
  CHECK(items[1].id == "volA");
  CHECK(items[1].pred.shape() == std::vector<std::size_t>{3, 16, 16});
  CHECK(items[1].gt.shape() == std::vector<std::size_t>{3, 16, 16});

  auto report = evaluate_split(model, samples, 1, 2);
  CHECK(report.ids.size() == 2);
  for (const auto& v : report.per_image) {
    CHECK(v.dice >= 0.0);
    CHECK(v.dice <= 1.0);
  }
}

TEST_CASE("confidence_split computes every scale pair and ranks") {
  auto model = tiny_model({1, 2, 4});
  Rng rng(5);
  std::vector<Sample> samples;
  for (int i = 0; i < 4; ++i) samples.push_back(slice_sample(rng, "", i));

  auto report = confidence_split(model, samples, {1, 2}, true, {50, 100});
  REQUIRE(report.entries.size() == 4);
  for (const auto& e : report.entries) {
    CHECK(e.confidence.count({1, 2}));
    CHECK(e.confidence.count({1, 4}));
    CHECK(e.confidence.count({2, 4}));
    CHECK(e.dice_s1.has_value());
  }
  // Ranking is a permutation in ascending confidence order.
  std::set<std::size_t> seen(report.ranking.begin(), report.ranking.end());
  CHECK(seen.size() == 4);
  for (std::size_t r = 1; r < report.ranking.size(); ++r)
    CHECK(report.entries[report.ranking[r - 1]].confidence.at({1, 2}) <=
          report.entries[report.ranking[r]].confidence.at({1, 2}));
  CHECK(report.coverage.size() == 2);

  SUBCASE("single-scale models cannot rank") {
    auto single = tiny_model({1});
    CHECK_THROWS_WITH_AS(confidence_split(single, samples, {1, 2}, true),
                         doctest::Contains(">= 2 scales"), ValidationError);
  }
}

TEST_CASE("protoseg baseline score uses predictions when ground truth is absent") {
  auto model = tiny_model({1, 2});
  Rng rng(7);
  auto sample = slice_sample(rng, "", 0);
  // Either reference choice must yield a score in [0, 1] or be undefined.
  for (bool use_gt : {true, false}) {
    auto sa = protoseg_baseline_score(model, sample, use_gt);
    if (sa) {
      CHECK(*sa >= 0.0);
      CHECK(*sa <= 1.0);
    }
  }
}

}  // TEST_SUITE
