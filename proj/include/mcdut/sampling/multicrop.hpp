#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mcdut/core/rng.hpp"
#include "mcdut/core/tensor.hpp"
#include "mcdut/image.hpp"

namespace mcdut::multicrop {

struct CropRect {
  int64_t top = 0;
  int64_t left = 0;
  int64_t height = 0;
  int64_t width = 0;

  bool in_bounds(int64_t src_h, int64_t src_w) const {
    return top >= 0 && left >= 0 && height >= 1 && width >= 1 && top + height <= src_h &&
           left + width <= src_w;
  }
};

enum class CropKind { Center, Random };

template <typename T>
struct CropView {
  CropRect rect;
  Tensor<T> image;  // crop resized back to the source spatial size
  CropKind kind = CropKind::Center;
};

enum class ResizeFilter { Bilinear };

struct CropConfig {
  int64_t num_center = 1;
  int64_t num_random = 2;
  double center_scale = 0.5;
  double random_scale_lo = 0.3;
  double random_scale_hi = 0.7;
  ResizeFilter resize_filter = ResizeFilter::Bilinear;

  void validate() const {
    require(center_scale > 0.0 && center_scale <= 1.0, ErrorKind::InvalidConfig,
            "crop config: center_scale must be in (0,1]");
    require(random_scale_lo > 0.0 && random_scale_lo <= random_scale_hi && random_scale_hi <= 1.0,
            ErrorKind::InvalidConfig, "crop config: random scale range must satisfy 0 < lo <= hi <= 1");
    require(num_center >= 0 && num_random >= 0 && num_center + num_random >= 1,
            ErrorKind::InvalidConfig, "crop config: need at least one view");
  }

  int64_t num_views() const { return num_center + num_random; }
};

struct PatchIndexSet {
  int64_t layer_id = 0;
  std::vector<int64_t> indices;  // flattened row-major spatial positions
};

// One negative pool for a layer. Rows are exact copies of pool entries; the
// provenance records which (view, row) each came from.
template <typename T>
struct NegativeSet {
  int64_t layer_id = 0;
  Tensor<T> embeddings;  // (N, K), rows unit-norm
  std::vector<std::pair<int64_t, int64_t>> provenance;
};

inline CropRect center_crop_rect(int64_t src_h, int64_t src_w, double scale) {
  require(src_h >= 1 && src_w >= 1, ErrorKind::InvalidInput, "center_crop: empty image");
  require(scale > 0.0 && scale <= 1.0, ErrorKind::InvalidConfig,
          "center_crop: scale must be in (0,1], got " + std::to_string(scale));
  CropRect r;
  r.height = std::max<int64_t>(1, static_cast<int64_t>(static_cast<double>(src_h) * scale));
  r.width = std::max<int64_t>(1, static_cast<int64_t>(static_cast<double>(src_w) * scale));
  r.top = (src_h - r.height) / 2;
  r.left = (src_w - r.width) / 2;
  return r;
}

template <typename T>
CropRect center_crop(const Tensor<T>& img, double scale) {
  require(is_image(img), ErrorKind::InvalidInput, "center_crop: not an image tensor");
  return center_crop_rect(img.dim(1), img.dim(2), scale);
}

// Side fractions are drawn independently per axis, so random views may be
// non-square; position is uniform over the valid offsets.
inline CropRect random_crop_rect(int64_t src_h, int64_t src_w, double lo, double hi, Rng& rng) {
  require(src_h >= 1 && src_w >= 1, ErrorKind::InvalidInput, "random_crop: empty image");
  require(lo > 0.0 && lo <= hi && hi <= 1.0, ErrorKind::InvalidConfig,
          "random_crop: scale range must satisfy 0 < lo <= hi <= 1");
  CropRect r;
  const double fh = rng.uniform_real(lo, hi);
  const double fw = rng.uniform_real(lo, hi);
  r.height = std::max<int64_t>(1, std::min(src_h, static_cast<int64_t>(static_cast<double>(src_h) * fh)));
  r.width = std::max<int64_t>(1, std::min(src_w, static_cast<int64_t>(static_cast<double>(src_w) * fw)));
  r.top = rng.uniform_int(0, src_h - r.height);
  r.left = rng.uniform_int(0, src_w - r.width);
  return r;
}

template <typename T>
CropRect random_crop(const Tensor<T>& img, double lo, double hi, Rng& rng) {
  require(is_image(img), ErrorKind::InvalidInput, "random_crop: not an image tensor");
  return random_crop_rect(img.dim(1), img.dim(2), lo, hi, rng);
}

// Center views first, then random views; every view is resized back to the
// source spatial size.
template <typename T>
std::vector<CropView<T>> make_multicrop_views(const Tensor<T>& img, const CropConfig& cfg, Rng& rng) {
  require(is_image(img), ErrorKind::InvalidInput, "make_multicrop_views: not an image tensor");
  cfg.validate();
  const int64_t H = img.dim(1), W = img.dim(2);
  std::vector<CropView<T>> views;
  views.reserve(static_cast<size_t>(cfg.num_views()));
  for (int64_t i = 0; i < cfg.num_center; ++i) {
    CropView<T> v;
    v.rect = center_crop_rect(H, W, cfg.center_scale);
    v.image = bilinear_resize(extract_crop(img, v.rect.top, v.rect.left, v.rect.height, v.rect.width), H, W);
    v.kind = CropKind::Center;
    views.push_back(std::move(v));
  }
  for (int64_t i = 0; i < cfg.num_random; ++i) {
    CropView<T> v;
    v.rect = random_crop_rect(H, W, cfg.random_scale_lo, cfg.random_scale_hi, rng);
    v.image = bilinear_resize(extract_crop(img, v.rect.top, v.rect.left, v.rect.height, v.rect.width), H, W);
    v.kind = CropKind::Random;
    views.push_back(std::move(v));
  }
  return views;
}

// `count` unique spatial positions of an (H_l, W_l) feature map, uniform
// without replacement, in draw order.
inline PatchIndexSet sample_patch_ids(int64_t layer_h, int64_t layer_w, int64_t count, Rng& rng,
                                      int64_t layer_id = 0) {
  require(layer_h >= 1 && layer_w >= 1, ErrorKind::InvalidInput, "sample_patch_ids: empty layer");
  const int64_t total = layer_h * layer_w;
  require(count >= 1 && count <= total, ErrorKind::InvalidConfig,
          "sample_patch_ids: requested " + std::to_string(count) + " of " + std::to_string(total) +
              " positions");
  PatchIndexSet s;
  s.layer_id = layer_id;
  s.indices = rng.sample_without_replacement(total, count);
  return s;
}

// Uniform choice of N (view, row) sources from per-view pools of the given
// sizes; shared by the tensor-level and autograd-level negative gathers.
inline std::vector<std::pair<int64_t, int64_t>> pick_negative_sources(
    const std::vector<int64_t>& pool_sizes, int64_t n, Rng& rng) {
  int64_t total = 0;
  for (int64_t s : pool_sizes) total += s;
  require(n >= 1, ErrorKind::InvalidConfig, "gather_negatives: need at least one negative");
  require(total >= n, ErrorKind::InvalidConfig,
          "gather_negatives: pool of " + std::to_string(total) + " cannot supply " + std::to_string(n) +
              " negatives");
  std::vector<int64_t> flat = rng.sample_without_replacement(total, n);
  std::vector<std::pair<int64_t, int64_t>> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t f : flat) {
    int64_t view = 0;
    while (f >= pool_sizes[static_cast<size_t>(view)]) {
      f -= pool_sizes[static_cast<size_t>(view)];
      ++view;
    }
    out.emplace_back(view, f);
  }
  return out;
}

// Draws N rows uniformly without replacement from the union of per-view
// embedding matrices (each (S_v, K), rows unit-norm).
template <typename T>
NegativeSet<T> gather_negatives(const std::vector<Tensor<T>>& view_embeddings, int64_t layer_id,
                                int64_t n, Rng& rng) {
  require(!view_embeddings.empty(), ErrorKind::InvalidConfig, "gather_negatives: no crop views");
  std::vector<int64_t> sizes;
  int64_t k = -1;
  for (const auto& m : view_embeddings) {
    require(m.ndim() == 2, ErrorKind::InternalConsistency, "gather_negatives: embedding matrix expected");
    if (k < 0) k = m.dim(1);
    require(m.dim(1) == k, ErrorKind::InternalConsistency, "gather_negatives: embedding width mismatch");
    sizes.push_back(m.dim(0));
  }
  NegativeSet<T> set;
  set.layer_id = layer_id;
  set.provenance = pick_negative_sources(sizes, n, rng);
  set.embeddings = Tensor<T>({n, k});
  for (int64_t i = 0; i < n; ++i) {
    const auto [view, row] = set.provenance[static_cast<size_t>(i)];
    const Tensor<T>& m = view_embeddings[static_cast<size_t>(view)];
    T norm2 = T(0);
    for (int64_t j = 0; j < k; ++j) {
      const T v = m.at(row, j);
      set.embeddings.at(i, j) = v;
      norm2 += v * v;
    }
    require(std::abs(std::sqrt(static_cast<double>(norm2)) - 1.0) <= 1e-5, ErrorKind::InternalConsistency,
            "gather_negatives: pool row " + std::to_string(row) + " is not unit-norm");
  }
  return set;
}

}  // namespace mcdut::multicrop
