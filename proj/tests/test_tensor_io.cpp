#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "testing.hpp"
#include "unetmer/io.hpp"

using namespace unetmer;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto dir = fs::temp_directory_path() / ("unetmer_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("tensor_io") {

TEST_CASE("tensor indexing and reshape") {
  Tensor<double> t({2, 3, 4});
  CHECK(t.numel() == 24);
  t(1, 2, 3) = 5.5;
  CHECK(t[23] == 5.5);
  auto r = t.reshaped({6, 4});
  CHECK(r(5, 3) == 5.5);
  CHECK_THROWS_AS(t.reshaped({5, 5}), ValidationError);
}

TEST_CASE("rng streams are deterministic and seed-sensitive") {
  Rng a(42), b(42), c(43);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const double x = a.normal(), y = b.normal(), z = c.normal();
    all_equal = all_equal && (x == y);
    any_diff = any_diff || (x != z);
  }
  CHECK(all_equal);
  CHECK(any_diff);

  std::vector<int> v1{1, 2, 3, 4, 5, 6, 7, 8}, v2 = v1;
  Rng s1(7), s2(7);
  s1.shuffle(v1);
  s2.shuffle(v2);
  CHECK(v1 == v2);
}

TEST_CASE("array container round-trips across dtypes") {
  Rng rng(1);
  auto t = test::randn(rng, {3, 5, 7});
  std::stringstream ss;
  write_array(ss, t);
  auto back = read_array<double>(ss);
  CHECK(tensors_equal(back, t));

  Tensor<std::uint8_t> m({4, 4});
  for (std::size_t i = 0; i < 16; ++i) m[i] = static_cast<std::uint8_t>(i % 3);
  std::stringstream ss2;
  write_array(ss2, m);
  CHECK(tensors_equal(read_array<std::uint8_t>(ss2), m));
}

TEST_CASE("array container converts f32 payloads when read as f64") {
  Tensor<float> t({2, 2});
  t[0] = 1.5f;
  t[1] = -2.25f;
  t[2] = 0.0f;
  t[3] = 8.0f;
  std::stringstream ss;
  write_array(ss, t);
  auto d = read_array<double>(ss);
  for (std::size_t i = 0; i < 4; ++i) CHECK(d[i] == doctest::Approx(t[i]));
}

TEST_CASE("bad magic is rejected") {
  std::stringstream ss;
  ss << "NOPExxxxxxxxxxxxxxxx";
  CHECK_THROWS_AS(read_array<double>(ss), IoError);
}

TEST_CASE("manifest round trip preserves entries and splits") {
  auto dir = temp_dir("manifest");
  DatasetManifest m;
  m.root = dir;
  m.modality = Modality::CT;
  m.num_classes = 3;
  for (int i = 0; i < 3; ++i) {
    ManifestEntry e;
    e.image = "img" + std::to_string(i) + ".unma";
    e.mask = "msk" + std::to_string(i) + ".unma";
    e.split = i < 2 ? "train" : "test";
    Tensor<float> img({1, 4, 4});
    Tensor<std::uint8_t> msk({4, 4});
    save_array(dir / e.image, img);
    save_array(dir / e.mask, msk);
    m.entries.push_back(e);
  }
  save_manifest(m, dir / "manifest.txt");

  auto loaded = load_manifest(dir / "manifest.txt");
  CHECK(loaded.modality == Modality::CT);
  CHECK(loaded.num_classes == 3);
  REQUIRE(loaded.entries.size() == 3);
  CHECK(loaded.count_split("train") == 2);
  CHECK(loaded.count_split("test") == 1);
  CHECK(loaded.entries[0].image == "img0.unma");  // order preserved
}

TEST_CASE("empty manifest is rejected") {
  auto dir = temp_dir("manifest_empty");
  std::ofstream(dir / "manifest.txt") << "version=1 modality=SYNTH num_classes=2\n";
  CHECK_THROWS_WITH_AS(load_manifest(dir / "manifest.txt"), doctest::Contains("empty manifest"),
                       ValidationError);
}

TEST_CASE("manifest naming a missing mask file is rejected with the file name") {
  auto dir = temp_dir("manifest_missing");
  Tensor<float> img({1, 4, 4});
  save_array(dir / "img0.unma", img);
  std::ofstream(dir / "manifest.txt")
      << "version=1 modality=SYNTH num_classes=2\n"
      << "image=img0.unma mask=absent.unma split=train volume=- slice=-\n";
  CHECK_THROWS_WITH_AS(load_manifest(dir / "manifest.txt"), doctest::Contains("absent.unma"),
                       ValidationError);
}

TEST_CASE("malformed manifest lines name the line number") {
  auto dir = temp_dir("manifest_malformed");
  std::ofstream(dir / "manifest.txt") << "version=1 modality=SYNTH num_classes=2\n"
                                      << "image=a.unma this-is-not-kv\n";
  CHECK_THROWS_WITH_AS(load_manifest(dir / "manifest.txt"), doctest::Contains("line 2"),
                       ValidationError);
}

TEST_CASE("missing manifest file raises an io error") {
  CHECK_THROWS_AS(load_manifest("/nonexistent/manifest.txt"), IoError);
}

}  // TEST_SUITE
