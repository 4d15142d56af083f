#pragma once

#include <cmath>
#include <cstdint>

#include "mcdut/core/tensor.hpp"

namespace mcdut {

// Images are (C,H,W) tensors; the translation pipeline keeps values in
// [-1, 1] with C = 3.

template <typename T>
bool is_image(const Tensor<T>& img) {
  return img.ndim() == 3 && img.dim(0) >= 1 && img.dim(1) >= 1 && img.dim(2) >= 1;
}

template <typename T>
Tensor<T> extract_crop(const Tensor<T>& img, int64_t top, int64_t left, int64_t height, int64_t width) {
  require(is_image(img), ErrorKind::InvalidInput, "extract_crop: not an image tensor");
  const int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  require(top >= 0 && left >= 0 && height >= 1 && width >= 1 && top + height <= H && left + width <= W,
          ErrorKind::InvalidInput, "extract_crop: rectangle out of bounds");
  Tensor<T> out({C, height, width});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < height; ++i) {
      const T* src = img.data() + (c * H + top + i) * W + left;
      std::copy(src, src + width, out.data() + (c * height + i) * width);
    }
  return out;
}

// Bilinear resize with the half-pixel (align_corners=false) convention.
// Resizing to the identical size is an exact copy.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& img, int64_t out_h, int64_t out_w) {
  require(is_image(img), ErrorKind::InvalidInput, "bilinear_resize: not an image tensor");
  require(out_h >= 1 && out_w >= 1, ErrorKind::InvalidInput, "bilinear_resize: empty target");
  const int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  if (out_h == H && out_w == W) return img;
  Tensor<T> out({C, out_h, out_w});
  const double sy = static_cast<double>(H) / static_cast<double>(out_h);
  const double sx = static_cast<double>(W) / static_cast<double>(out_w);
  auto clamp = [](int64_t v, int64_t hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
  for (int64_t oy = 0; oy < out_h; ++oy) {
    const double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    const int64_t y0 = static_cast<int64_t>(std::floor(fy));
    const double wy = fy - static_cast<double>(y0);
    const int64_t y0c = clamp(y0, H - 1), y1c = clamp(y0 + 1, H - 1);
    for (int64_t ox = 0; ox < out_w; ++ox) {
      const double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      const int64_t x0 = static_cast<int64_t>(std::floor(fx));
      const double wx = fx - static_cast<double>(x0);
      const int64_t x0c = clamp(x0, W - 1), x1c = clamp(x0 + 1, W - 1);
      for (int64_t c = 0; c < C; ++c) {
        const T* p = img.data() + c * H * W;
        const double v00 = static_cast<double>(p[y0c * W + x0c]);
        const double v01 = static_cast<double>(p[y0c * W + x1c]);
        const double v10 = static_cast<double>(p[y1c * W + x0c]);
        const double v11 = static_cast<double>(p[y1c * W + x1c]);
        const double top = v00 + (v01 - v00) * wx;
        const double bot = v10 + (v11 - v10) * wx;
        out.at(c, oy, ox) = static_cast<T>(top + (bot - top) * wy);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> hflip(const Tensor<T>& img) {
  require(is_image(img), ErrorKind::InvalidInput, "hflip: not an image tensor");
  const int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor<T> out({C, H, W});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < H; ++i)
      for (int64_t j = 0; j < W; ++j) out.at(c, i, j) = img.at(c, i, W - 1 - j);
  return out;
}

// [0,255] byte scale -> [-1,1]
template <typename T>
Tensor<T> bytes_to_signed(const Tensor<T>& img) {
  Tensor<T> out = img;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] / T(127.5) - T(1);
  return out;
}

// [-1,1] -> [0,255], clamped
template <typename T>
Tensor<T> signed_to_bytes(const Tensor<T>& img) {
  Tensor<T> out = img;
  for (int64_t i = 0; i < out.numel(); ++i) {
    T v = (out[i] + T(1)) * T(127.5);
    out[i] = std::min(T(255), std::max(T(0), v));
  }
  return out;
}

}  // namespace mcdut
