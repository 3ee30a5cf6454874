#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "testing.hpp"
#include "unetmer/dataset.hpp"

using namespace unetmer;

namespace {

double mean_of(const Tensor<float>& t) {
  double s = 0;
  for (std::size_t i = 0; i < t.numel(); ++i) s += t[i];
  return s / t.numel();
}

double std_of(const Tensor<float>& t) {
  const double m = mean_of(t);
  double s = 0;
  for (std::size_t i = 0; i < t.numel(); ++i) s += (t[i] - m) * (t[i] - m);
  return std::sqrt(s / t.numel());
}

Sample make_sample(Tensor<float> image) {
  Sample s;
  s.mask = Tensor<std::uint8_t>({image.dim(1), image.dim(2)});
  s.image = std::move(image);
  s.id = "t";
  return s;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("percentile uses linear interpolation between order statistics") {
  // Values 0..99: index = p/100 * 99, so p=5 lands between 4 and 5 at 0.95.
  std::vector<float> v(100);
  for (int i = 0; i < 100; ++i) v[i] = static_cast<float>(i);
  CHECK(percentile(v, 5.0) == doctest::Approx(4.95).epsilon(1e-12));
  CHECK(percentile(v, 95.0) == doctest::Approx(94.05).epsilon(1e-12));
  CHECK(percentile(v, 0.0) == 0.0);
  CHECK(percentile(v, 100.0) == 99.0);

  // Order statistics bracket the interpolated value.
  Rng rng(3);
  std::vector<float> r(37);
  for (auto& x : r) x = static_cast<float>(rng.normal());
  for (double p : {10.0, 33.3, 50.0, 77.7}) {
    const double q = percentile(r, p);
    std::size_t below = 0;
    for (float x : r) below += x <= q;
    CHECK(below >= static_cast<std::size_t>(std::floor(p / 100.0 * (r.size() - 1))));
  }
}

TEST_CASE("truncation clips to the per-image percentile values") {
  Tensor<float> img({1, 10, 10});
  for (std::size_t i = 0; i < 100; ++i) img[i] = static_cast<float>(i);
  PreprocessSpec spec;
  spec.truncate_percentiles = {5.0, 95.0};
  spec.normalize = false;
  auto out = preprocess(make_sample(img), spec);
  float lo = 1e9f, hi = -1e9f;
  for (std::size_t i = 0; i < out.image.numel(); ++i) {
    lo = std::min(lo, out.image[i]);
    hi = std::max(hi, out.image[i]);
  }
  CHECK(lo == doctest::Approx(4.95));
  CHECK(hi == doctest::Approx(94.05));
}

TEST_CASE("normalization yields zero mean and unit std within 1e-5") {
  Rng rng(5);
  auto img = test::randnf(rng, {1, 16, 16}, 3.0);
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] += 7.0f;
  PreprocessSpec spec;
  auto out = preprocess(make_sample(img), spec);
  CHECK(std::abs(mean_of(out.image)) < 1e-5);
  CHECK(std::abs(std_of(out.image) - 1.0) < 1e-5);
}

TEST_CASE("normalize-only preprocessing is idempotent up to 1e-5") {
  Rng rng(6);
  auto img = test::randnf(rng, {1, 8, 8}, 2.0);
  PreprocessSpec spec;
  auto once = preprocess(make_sample(img), spec);
  auto twice = preprocess(once, spec);
  for (std::size_t i = 0; i < once.image.numel(); ++i)
    CHECK(std::abs(once.image[i] - twice.image[i]) < 1e-5);
}

TEST_CASE("constant image normalizes to all zeros with a warning") {
  auto img = Tensor<float>::full({1, 4, 4}, 3.25f);
  PreprocessSpec spec;
  std::string warning;
  auto out = preprocess(make_sample(img), spec, &warning);
  CHECK(!warning.empty());
  for (std::size_t i = 0; i < out.image.numel(); ++i) CHECK(out.image[i] == 0.0f);
}

TEST_CASE("CT modality gets 5-95 truncation by default, MR does not") {
  auto ct = default_preprocess(Modality::CT);
  REQUIRE(ct.truncate_percentiles.has_value());
  CHECK(ct.truncate_percentiles->first == 5.0);
  CHECK(ct.truncate_percentiles->second == 95.0);
  CHECK(ct.normalize);
  CHECK(!default_preprocess(Modality::MR).truncate_percentiles.has_value());
}

TEST_CASE("invalid percentile ranges are rejected") {
  PreprocessSpec spec;
  spec.truncate_percentiles = {95.0, 5.0};
  Tensor<float> img({1, 4, 4});
  CHECK_THROWS_AS(preprocess(make_sample(img), spec), ValidationError);
}

TEST_CASE("resize: bilinear keeps constants, nearest keeps labels") {
  auto img = Tensor<float>::full({2, 6, 6}, 1.5f);
  auto up = resize_bilinear(img, 12, 12);
  CHECK(up.shape() == std::vector<std::size_t>{2, 12, 12});
  for (std::size_t i = 0; i < up.numel(); ++i) CHECK(up[i] == doctest::Approx(1.5f));

  Tensor<std::uint8_t> mask({4, 4});
  mask(1, 1) = 2;
  auto msk = resize_nearest(mask, 8, 8);
  CHECK(msk(2, 2) == 2);
  CHECK(msk(3, 3) == 2);
  for (std::size_t i = 0; i < msk.numel(); ++i) CHECK((msk[i] == 0 || msk[i] == 2));

  PreprocessSpec spec;
  spec.normalize = false;
  spec.target_size = {8, 8};
  Sample s = make_sample(Tensor<float>::full({1, 4, 4}, 2.0f));
  auto out = preprocess(s, spec);
  CHECK(out.image.shape() == std::vector<std::size_t>{1, 8, 8});
  CHECK(out.mask.shape() == std::vector<std::size_t>{8, 8});

  // With resizing and normalization combined the output moments stay exact.
  Rng rng(31);
  PreprocessSpec both;
  both.target_size = {16, 16};
  auto resized = preprocess(make_sample(test::randnf(rng, {1, 32, 32}, 2.5f)), both);
  CHECK(resized.image.shape() == std::vector<std::size_t>{1, 16, 16});
  CHECK(std::abs(mean_of(resized.image)) < 1e-5);
  CHECK(std::abs(std_of(resized.image) - 1.0) < 1e-5);
}

TEST_CASE("volume_to_slices produces indexed slices sharing the key") {
  Tensor<float> vol({5, 1, 4, 4});
  Tensor<std::uint8_t> masks({5, 4, 4});
  for (std::size_t d = 0; d < 5; ++d) {
    vol(d, 0, 0, 0) = static_cast<float>(d);
    masks(d, 0, 0) = static_cast<std::uint8_t>(d % 2);
  }
  auto slices = volume_to_slices(vol, masks, "vol7");
  REQUIRE(slices.size() == 5);
  for (int d = 0; d < 5; ++d) {
    CHECK(slices[d].slice_index == d);
    CHECK(slices[d].volume_key == "vol7");
    CHECK(slices[d].image(0, 0, 0) == static_cast<float>(d));
  }

  auto single = volume_to_slices(Tensor<float>({1, 1, 4, 4}), Tensor<std::uint8_t>({1, 4, 4}),
                                 "one");
  CHECK(single.size() == 1);

  CHECK_THROWS_AS(volume_to_slices(vol, Tensor<std::uint8_t>({4, 4, 4}), "bad"),
                  ValidationError);
}

TEST_CASE("slices_to_volume round-trips and validates contiguity") {
  Tensor<float> vol({4, 1, 4, 4});
  Tensor<std::uint8_t> masks({4, 4, 4});
  Rng rng(8);
  for (std::size_t i = 0; i < masks.numel(); ++i)
    masks[i] = static_cast<std::uint8_t>(rng.uniform_int(2));
  auto slices = volume_to_slices(vol, masks, "v");

  std::vector<std::pair<int, Tensor<std::uint8_t>>> preds;
  for (const auto& s : slices) preds.emplace_back(s.slice_index, s.mask);
  CHECK(tensors_equal(slices_to_volume(preds, "v"), masks));

  std::vector<std::pair<int, Tensor<std::uint8_t>>> gap = {{0, slices[0].mask},
                                                           {2, slices[2].mask}};
  CHECK_THROWS_WITH_AS(slices_to_volume(gap, "v"), doctest::Contains("missing slice 1"),
                       ValidationError);

  std::vector<std::pair<int, Tensor<std::uint8_t>>> dup = {{0, slices[0].mask},
                                                           {0, slices[0].mask}};
  CHECK_THROWS_AS(slices_to_volume(dup, "v"), ValidationError);

  std::vector<std::pair<int, Tensor<std::uint8_t>>> one = {{0, slices[0].mask}};
  CHECK(slices_to_volume(one, "v").shape() == std::vector<std::size_t>{1, 4, 4});
}

TEST_CASE("synthetic generation is a pure function of its arguments") {
  auto a = make_synthetic_dataset(0, 10, {64, 64}, {0.1, 0.5});
  auto b = make_synthetic_dataset(0, 10, {64, 64}, {0.1, 0.5});
  REQUIRE(a.size() == 10);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(tensors_equal(a[i].image, b[i].image));  // byte-identical
    CHECK(tensors_equal(a[i].mask, b[i].mask));
    std::size_t fg = 0;
    for (std::size_t j = 0; j < a[i].mask.numel(); ++j) fg += a[i].mask[j];
    CHECK(fg > 0);  // every mask nonempty
  }

  auto c = make_synthetic_dataset(1, 10, {64, 64}, {0.1, 0.5});
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size() && !any_diff; ++i)
    any_diff = !tensors_equal(a[i].image, c[i].image);
  CHECK(any_diff);

  CHECK_THROWS_AS(make_synthetic_dataset(0, 0, {64, 64}, {0.1, 0.5}), ValidationError);
  CHECK_THROWS_AS(make_synthetic_dataset(0, 4, {48, 48}, {0.1, 0.5}), ValidationError);
}

TEST_CASE("low contrast samples exist when the range spans below the noise std") {
  auto samples = make_synthetic_dataset(3, 30, {64, 64}, {0.02, 0.5}, 0.1);
  // At least one sample whose strongest ellipse offset sits below the noise
  // floor: detect via foreground/background intensity gap.
  int hard = 0;
  for (const auto& s : samples) {
    double fg = 0, bg = 0;
    std::size_t nfg = 0, nbg = 0;
    for (std::size_t i = 0; i < s.mask.numel(); ++i) {
      if (s.mask[i]) {
        fg += s.image[i];
        ++nfg;
      } else {
        bg += s.image[i];
        ++nbg;
      }
    }
    if (nfg > 0 && nbg > 0 && (fg / nfg - bg / nbg) < 0.1) ++hard;
  }
  CHECK(hard > 0);
}

TEST_CASE("dataset save/load round trip through the manifest") {
  auto dir = std::filesystem::temp_directory_path() / "unetmer_test_dataset";
  std::filesystem::remove_all(dir);
  auto samples = make_synthetic_dataset(0, 6, {64, 64}, {0.2, 0.5});
  save_dataset(samples, dir, Modality::SYNTH, 2, 4);

  auto manifest = load_manifest(dir / "manifest.txt");
  CHECK(manifest.count_split("train") == 4);
  CHECK(manifest.count_split("test") == 2);

  PreprocessSpec raw;
  raw.normalize = false;
  auto train = load_split(manifest, "train", raw);
  REQUIRE(train.size() == 4);
  CHECK(tensors_equal(train[0].image, samples[0].image));
  CHECK(tensors_equal(train[0].mask, samples[0].mask));
}

}  // TEST_SUITE
