#include "unetmer/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "unetmer/rng.hpp"

namespace unetmer {

void PreprocessSpec::validate() const {
  if (truncate_percentiles) {
    const auto [lo, hi] = *truncate_percentiles;
    check(0.0 <= lo && lo < hi && hi <= 100.0,
          "truncate percentiles must satisfy 0 <= low < high <= 100");
  }
  if (target_size) check(target_size->first >= 1 && target_size->second >= 1, "bad target size");
}

PreprocessSpec default_preprocess(Modality modality) {
  PreprocessSpec spec;
  if (modality == Modality::CT) spec.truncate_percentiles = {5.0, 95.0};
  spec.normalize = true;
  return spec;
}

double percentile(std::vector<float> values, double p) {
  check(!values.empty(), "percentile of empty array");
  check(0.0 <= p && p <= 100.0, "percentile out of range");
  std::sort(values.begin(), values.end());
  const double idx = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(idx));
  const auto hi = static_cast<std::size_t>(std::ceil(idx));
  const double frac = idx - static_cast<double>(lo);
  return (1.0 - frac) * values[lo] + frac * values[hi];
}

Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t out_h, std::size_t out_w) {
  check(image.ndim() == 3, "resize_bilinear expects [C, H, W]");
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (H == out_h && W == out_w) return image;
  Tensor<float> out({C, out_h, out_w});
  const double sy = static_cast<double>(H) / out_h;
  const double sx = static_cast<double>(W) / out_w;
  for (std::size_t i = 0; i < out_h; ++i) {
    // Half-pixel centers, clamped at the borders.
    const double fy = std::max(0.0, (static_cast<double>(i) + 0.5) * sy - 0.5);
    const std::size_t y0 = std::min(static_cast<std::size_t>(fy), H - 1);
    const std::size_t y1 = std::min(y0 + 1, H - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t j = 0; j < out_w; ++j) {
      const double fx = std::max(0.0, (static_cast<double>(j) + 0.5) * sx - 0.5);
      const std::size_t x0 = std::min(static_cast<std::size_t>(fx), W - 1);
      const std::size_t x1 = std::min(x0 + 1, W - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < C; ++c) {
        const double top = (1.0 - wx) * image(c, y0, x0) + wx * image(c, y0, x1);
        const double bot = (1.0 - wx) * image(c, y1, x0) + wx * image(c, y1, x1);
        out(c, i, j) = static_cast<float>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

Tensor<std::uint8_t> resize_nearest(const Tensor<std::uint8_t>& mask, std::size_t out_h,
                                    std::size_t out_w) {
  check(mask.ndim() == 2, "resize_nearest expects [H, W]");
  const std::size_t H = mask.dim(0), W = mask.dim(1);
  if (H == out_h && W == out_w) return mask;
  Tensor<std::uint8_t> out({out_h, out_w});
  for (std::size_t i = 0; i < out_h; ++i) {
    const std::size_t y =
        std::min(static_cast<std::size_t>((static_cast<double>(i) + 0.5) * H / out_h), H - 1);
    for (std::size_t j = 0; j < out_w; ++j) {
      const std::size_t x =
          std::min(static_cast<std::size_t>((static_cast<double>(j) + 0.5) * W / out_w), W - 1);
      out(i, j) = mask(y, x);
    }
  }
  return out;
}

Sample preprocess(const Sample& sample, const PreprocessSpec& spec, std::string* warning) {
  spec.validate();
  check(sample.image.ndim() == 3, "sample image must be [C, H, W]");
  check(sample.mask.ndim() == 2, "sample mask must be [H, W]");
  check(sample.image.dim(1) == sample.mask.dim(0) && sample.image.dim(2) == sample.mask.dim(1),
        "image and mask spatial shapes differ");

  Sample out = sample;
  if (spec.truncate_percentiles) {
    std::vector<float> values(out.image.data(), out.image.data() + out.image.numel());
    const auto lo = static_cast<float>(percentile(values, spec.truncate_percentiles->first));
    const auto hi = static_cast<float>(percentile(values, spec.truncate_percentiles->second));
    for (std::size_t i = 0; i < out.image.numel(); ++i)
      out.image[i] = std::clamp(out.image[i], lo, hi);
  }
  if (spec.target_size) {
    out.image = resize_bilinear(out.image, spec.target_size->first, spec.target_size->second);
    out.mask = resize_nearest(out.mask, spec.target_size->first, spec.target_size->second);
  }
  // Normalization runs last so the output moments are exact.
  if (spec.normalize) {
    double sum = 0;
    const std::size_t n = out.image.numel();
    for (std::size_t i = 0; i < n; ++i) sum += out.image[i];
    const double mean = sum / n;
    double sq = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = out.image[i] - mean;
      sq += d * d;
    }
    double stddev = std::sqrt(sq / n);
    if (stddev == 0.0) {
      stddev = 1.0;  // constant image: zero numerator, so output is all zero
      if (warning) *warning = "constant image '" + sample.id + "': substituting std=1";
    }
    for (std::size_t i = 0; i < n; ++i)
      out.image[i] = static_cast<float>((out.image[i] - mean) / stddev);
  }
  return out;
}

std::vector<Sample> volume_to_slices(const Tensor<float>& volume,
                                     const Tensor<std::uint8_t>& mask_volume,
                                     const std::string& volume_key) {
  check(volume.ndim() == 4, "volume must be [D, C, H, W]");
  check(mask_volume.ndim() == 3, "mask volume must be [D, H, W]");
  const std::size_t D = volume.dim(0), C = volume.dim(1), H = volume.dim(2), W = volume.dim(3);
  check(D >= 1, "volume depth must be >= 1");
  check(mask_volume.dim(0) == D && mask_volume.dim(1) == H && mask_volume.dim(2) == W,
        "volume and mask volume shapes differ");

  std::vector<Sample> slices;
  slices.reserve(D);
  for (std::size_t d = 0; d < D; ++d) {
    Sample s;
    s.image = Tensor<float>({C, H, W});
    std::copy(&volume(d, 0, 0, 0), &volume(d, 0, 0, 0) + C * H * W, s.image.data());
    s.mask = Tensor<std::uint8_t>({H, W});
    std::copy(&mask_volume(d, 0, 0), &mask_volume(d, 0, 0) + H * W, s.mask.data());
    s.volume_key = volume_key;
    s.slice_index = static_cast<int>(d);
    s.id = volume_key + "_s" + std::to_string(d);
    slices.push_back(std::move(s));
  }
  return slices;
}

Tensor<std::uint8_t> slices_to_volume(
    const std::vector<std::pair<int, Tensor<std::uint8_t>>>& predictions,
    const std::string& volume_key) {
  check(!predictions.empty(), "no slices for volume " + volume_key);
  std::set<int> seen;
  int max_index = -1;
  for (const auto& [idx, mask] : predictions) {
    check(idx >= 0, "volume " + volume_key + ": negative slice index");
    check(seen.insert(idx).second,
          "volume " + volume_key + ": duplicate slice " + std::to_string(idx));
    max_index = std::max(max_index, idx);
    check(mask.ndim() == 2, "slice mask must be [H, W]");
    check(mask.shape() == predictions.front().second.shape(),
          "volume " + volume_key + ": slices disagree on shape");
  }
  const std::size_t D = static_cast<std::size_t>(max_index) + 1;
  for (int d = 0; d < static_cast<int>(D); ++d)
    check(seen.count(d), "volume " + volume_key + ": missing slice " + std::to_string(d));

  const std::size_t H = predictions.front().second.dim(0);
  const std::size_t W = predictions.front().second.dim(1);
  Tensor<std::uint8_t> volume({D, H, W});
  for (const auto& [idx, mask] : predictions)
    std::copy(mask.data(), mask.data() + H * W,
              &volume(static_cast<std::size_t>(idx), 0, 0));
  return volume;
}

namespace {

struct Ellipse {
  double cy, cx, ry, rx, angle, contrast;

  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double u = (ca * dx + sa * dy) / rx;
    const double v = (-sa * dx + ca * dy) / ry;
    return u * u + v * v <= 1.0;
  }
};

}  // namespace

std::vector<Sample> make_synthetic_dataset(const SyntheticSpec& spec) {
  check(spec.count >= 1, "synthetic sample count must be >= 1");
  check(spec.height % 64 == 0 && spec.width % 64 == 0,
        "synthetic size must be divisible by 64");
  check(spec.contrast_range.first <= spec.contrast_range.second,
        "contrast range must be ordered");
  check(spec.noise_std >= 0.0, "noise std must be >= 0");

  Rng rng(spec.seed);
  const std::size_t H = spec.height, W = spec.width;
  const double min_dim = static_cast<double>(std::min(H, W));

  std::vector<Sample> samples;
  samples.reserve(spec.count);
  for (int idx = 0; idx < spec.count; ++idx) {
    // Random background level plus per-image polarity (lesions uniformly
    // brighter or darker than background) keep single patches ambiguous: a
    // boundary-free foreground patch cannot tell which mode the image is in,
    // while the whole image can, so cross-patch context genuinely matters.
    const double background = rng.uniform(-0.4, 0.4);
    const double polarity = rng.uniform() < 0.5 ? 1.0 : -1.0;
    const int n_ellipses = 1 + static_cast<int>(rng.uniform_int(3));
    std::vector<Ellipse> ellipses;
    for (int e = 0; e < n_ellipses; ++e) {
      Ellipse el;
      el.cy = rng.uniform(0.2, 0.8) * H;
      el.cx = rng.uniform(0.2, 0.8) * W;
      el.ry = std::max(3.0, rng.uniform(0.07, 0.30) * min_dim);
      el.rx = std::max(3.0, rng.uniform(0.07, 0.30) * min_dim);
      el.angle = rng.uniform(0.0, M_PI);
      el.contrast = rng.uniform(spec.contrast_range.first, spec.contrast_range.second);
      ellipses.push_back(el);
    }

    Sample s;
    s.image = Tensor<float>({1, H, W});
    s.mask = Tensor<std::uint8_t>({H, W});
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const double y = static_cast<double>(i) + 0.5;
        const double x = static_cast<double>(j) + 0.5;
        double offset = 0.0;
        bool inside = false;
        for (const auto& el : ellipses)
          if (el.contains(y, x)) {
            inside = true;
            offset = std::max(offset, el.contrast);
          }
        const double noise = spec.noise_std * rng.normal();
        s.image(0, i, j) = static_cast<float>(background + polarity * offset + noise);
        s.mask(i, j) = inside ? 1 : 0;
      }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "synth_%04d", idx);
    s.id = buf;
    samples.push_back(std::move(s));
  }
  return samples;
}

void save_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir,
                  Modality modality, int num_classes, std::size_t train_count) {
  check(!samples.empty(), "no samples to save");
  check(train_count <= samples.size(), "train_count exceeds sample count");
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  std::filesystem::create_directories(dir / "masks", ec);
  check_io(std::filesystem::exists(dir / "images") && std::filesystem::exists(dir / "masks"),
           "cannot create dataset directories under " + dir.string());

  DatasetManifest manifest;
  manifest.root = dir;
  manifest.modality = modality;
  manifest.num_classes = num_classes;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    ManifestEntry e;
    e.image = "images/" + s.id + ".unma";
    e.mask = "masks/" + s.id + ".unma";
    e.split = (i < train_count) ? "train" : "test";
    e.volume_key = s.volume_key;
    e.slice_index = s.slice_index;
    save_array(dir / e.image, s.image);
    save_array(dir / e.mask, s.mask);
    manifest.entries.push_back(std::move(e));
  }
  save_manifest(manifest, dir / "manifest.txt");
}

Sample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry) {
  Sample s;
  s.image = load_array<float>(manifest.root / entry.image);
  s.mask = load_array<std::uint8_t>(manifest.root / entry.mask);
  check(s.image.ndim() == 3, "stored image must be [C, H, W]: " + entry.image);
  check(s.mask.ndim() == 2, "stored mask must be [H, W]: " + entry.mask);
  for (std::size_t i = 0; i < s.mask.numel(); ++i)
    check(s.mask[i] < manifest.num_classes,
          "mask label exceeds num_classes in " + entry.mask);
  s.id = std::filesystem::path(entry.image).stem().string();
  s.volume_key = entry.volume_key;
  s.slice_index = entry.slice_index;
  return s;
}

std::vector<Sample> load_split(const DatasetManifest& manifest, const std::string& split,
                               const PreprocessSpec& spec) {
  std::vector<Sample> out;
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    out.push_back(preprocess(load_sample(manifest, e), spec));
  }
  return out;
}

}  // namespace unetmer
