#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "unetmer/io.hpp"
#include "unetmer/tensor.hpp"

namespace unetmer {

// One image/mask pair. volume_key/slice_index group slices that came from a
// 3D volume so evaluation can stitch them back.
struct Sample {
  Tensor<float> image;        // [C, H, W]
  Tensor<std::uint8_t> mask;  // [H, W], labels in {0..num_classes-1}
  std::string id;
  std::string volume_key;  // empty = standalone 2D sample
  int slice_index = -1;
};

struct PreprocessSpec {
  std::optional<std::pair<double, double>> truncate_percentiles;  // (low %, high %)
  bool normalize = true;
  std::optional<std::pair<std::size_t, std::size_t>> target_size;  // (H, W)

  void validate() const;
};

// CT gets 5-95% intensity truncation; everything gets z-normalization.
PreprocessSpec default_preprocess(Modality modality);

// Percentile with linear interpolation between order statistics
// (index = p/100 * (n-1)).
double percentile(std::vector<float> values, double p);

Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t out_h, std::size_t out_w);
Tensor<std::uint8_t> resize_nearest(const Tensor<std::uint8_t>& mask, std::size_t out_h,
                                    std::size_t out_w);

// Clip to per-image percentiles (if configured), z-normalize, resize. A
// constant image with normalize=true substitutes std=1 and reports a warning
// instead of dividing by zero.
Sample preprocess(const Sample& sample, const PreprocessSpec& spec,
                  std::string* warning = nullptr);

// volume [D, C, H, W] + mask_volume [D, H, W] -> D slices carrying
// slice_index 0..D-1 and the shared volume_key.
std::vector<Sample> volume_to_slices(const Tensor<float>& volume,
                                     const Tensor<std::uint8_t>& mask_volume,
                                     const std::string& volume_key);

// Inverse: slice predictions at contiguous indices 0..D-1 -> [D, H, W].
Tensor<std::uint8_t> slices_to_volume(
    const std::vector<std::pair<int, Tensor<std::uint8_t>>>& predictions,
    const std::string& volume_key);

struct SyntheticSpec {
  std::uint64_t seed = 0;
  int count = 10;
  std::size_t height = 64;
  std::size_t width = 64;
  std::pair<double, double> contrast_range = {0.15, 0.6};
  double noise_std = 0.1;
};

// Deterministic synthetic corpus: per sample, a random background level plus
// 1-3 ellipses at an intensity offset drawn from contrast_range, plus
// Gaussian noise. Masks exactly cover the ellipses. Offsets below noise_std
// yield genuinely hard samples.
std::vector<Sample> make_synthetic_dataset(const SyntheticSpec& spec);

inline std::vector<Sample> make_synthetic_dataset(std::uint64_t seed, int n,
                                                  std::pair<std::size_t, std::size_t> size,
                                                  std::pair<double, double> contrast_range,
                                                  double noise_std = 0.1) {
  SyntheticSpec spec;
  spec.seed = seed;
  spec.count = n;
  spec.height = size.first;
  spec.width = size.second;
  spec.contrast_range = contrast_range;
  spec.noise_std = noise_std;
  return make_synthetic_dataset(spec);
}

// Writes samples as UNMA arrays plus a manifest; the first train_count
// samples get split=train, the rest split=test.
void save_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir,
                  Modality modality, int num_classes, std::size_t train_count);

// Loads and preprocesses one split ("train" or "test").
std::vector<Sample> load_split(const DatasetManifest& manifest, const std::string& split,
                               const PreprocessSpec& spec);

Sample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry);

}  // namespace unetmer
