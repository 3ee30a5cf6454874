#pragma once

#include <vector>

#include "unetmer/common.hpp"
#include "unetmer/tensor.hpp"

namespace unetmer {

inline bool valid_scale(int s) { return s == 1 || s == 2 || s == 4 || s == 8; }

inline void check_scale(int s) {
  check(valid_scale(s), "scale must be one of {1,2,4,8}, got " + std::to_string(s));
}

// An image cut into s x s equal non-overlapping patches, row-major patch
// order, plus the metadata needed to stitch outputs back.
template <class T>
struct PatchGrid {
  std::vector<Tensor<T>> patches;  // each [C, H/s, W/s]
  int s = 1;
  std::size_t original_h = 0;
  std::size_t original_w = 0;
};

// Cuts image [C, H, W] into s*s patches. Patch (r, c) covers rows
// [r*H/s, (r+1)*H/s) and columns [c*W/s, (c+1)*W/s).
template <class T>
PatchGrid<T> split(const Tensor<T>& image, int s) {
  check_scale(s);
  check(image.ndim() == 3, "split expects [C, H, W], got " + image.shape_str());
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const std::size_t us = static_cast<std::size_t>(s);
  check(H % us == 0, "image height " + std::to_string(H) + " not divisible by scale " +
                         std::to_string(s));
  check(W % us == 0, "image width " + std::to_string(W) + " not divisible by scale " +
                         std::to_string(s));
  const std::size_t ph = H / us, pw = W / us;

  PatchGrid<T> grid;
  grid.s = s;
  grid.original_h = H;
  grid.original_w = W;
  grid.patches.reserve(us * us);
  for (std::size_t r = 0; r < us; ++r) {
    for (std::size_t c = 0; c < us; ++c) {
      Tensor<T> patch({C, ph, pw});
      for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t i = 0; i < ph; ++i)
          for (std::size_t j = 0; j < pw; ++j)
            patch(ch, i, j) = image(ch, r * ph + i, c * pw + j);
      grid.patches.push_back(std::move(patch));
    }
  }
  return grid;
}

// Exact inverse of split: reassembles per-patch arrays [K, H/s, W/s] into
// [K, H, W]. The channel count may differ from the one split() saw (the
// decoder emits num_classes channels).
template <class T>
Tensor<T> stitch(const PatchGrid<T>& grid) {
  check_scale(grid.s);
  const std::size_t us = static_cast<std::size_t>(grid.s);
  check(grid.patches.size() == us * us,
        "patch count " + std::to_string(grid.patches.size()) + " != s^2 = " +
            std::to_string(us * us));
  const auto& first = grid.patches.front();
  check(first.ndim() == 3, "patches must be [K, H/s, W/s]");
  const std::size_t K = first.dim(0), ph = first.dim(1), pw = first.dim(2);
  for (const auto& p : grid.patches)
    check(p.shape() == first.shape(), "patches do not share one shape");

  Tensor<T> out({K, ph * us, pw * us});
  for (std::size_t r = 0; r < us; ++r)
    for (std::size_t c = 0; c < us; ++c) {
      const auto& patch = grid.patches[r * us + c];
      for (std::size_t ch = 0; ch < K; ++ch)
        for (std::size_t i = 0; i < ph; ++i)
          for (std::size_t j = 0; j < pw; ++j)
            out(ch, r * ph + i, c * pw + j) = patch(ch, i, j);
    }
  return out;
}

// Batched forms used by the model: [N, C, H, W] <-> [N*s^2, C, H/s, W/s],
// item n*s*s + r*s + c holding patch (r, c) of image n. Both are pure
// reindexings, so they double as their own gradient ops.
template <class T>
Tensor<T> split_batch(const Tensor<T>& images, int s) {
  check_scale(s);
  check(images.ndim() == 4, "split_batch expects [N, C, H, W], got " + images.shape_str());
  const std::size_t N = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  const std::size_t us = static_cast<std::size_t>(s);
  check(H % us == 0, "image height " + std::to_string(H) + " not divisible by scale " +
                         std::to_string(s));
  check(W % us == 0, "image width " + std::to_string(W) + " not divisible by scale " +
                         std::to_string(s));
  const std::size_t ph = H / us, pw = W / us;
  Tensor<T> out({N * us * us, C, ph, pw});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t r = 0; r < us; ++r)
      for (std::size_t c = 0; c < us; ++c) {
        const std::size_t item = (n * us + r) * us + c;
        for (std::size_t ch = 0; ch < C; ++ch)
          for (std::size_t i = 0; i < ph; ++i) {
            const T* src = &images(n, ch, r * ph + i, c * pw);
            T* dst = &out(item, ch, i, 0);
            std::copy(src, src + pw, dst);
          }
      }
  return out;
}

template <class T>
Tensor<T> stitch_batch(const Tensor<T>& patches, int s, std::size_t n_images) {
  check_scale(s);
  check(patches.ndim() == 4, "stitch_batch expects [N*s^2, K, H/s, W/s]");
  const std::size_t us = static_cast<std::size_t>(s);
  check(patches.dim(0) == n_images * us * us, "patch count != n_images * s^2");
  const std::size_t K = patches.dim(1), ph = patches.dim(2), pw = patches.dim(3);
  Tensor<T> out({n_images, K, ph * us, pw * us});
  for (std::size_t n = 0; n < n_images; ++n)
    for (std::size_t r = 0; r < us; ++r)
      for (std::size_t c = 0; c < us; ++c) {
        const std::size_t item = (n * us + r) * us + c;
        for (std::size_t ch = 0; ch < K; ++ch)
          for (std::size_t i = 0; i < ph; ++i) {
            const T* src = &patches(item, ch, i, 0);
            T* dst = &out(n, ch, r * ph + i, c * pw);
            std::copy(src, src + pw, dst);
          }
      }
  return out;
}

}  // namespace unetmer
