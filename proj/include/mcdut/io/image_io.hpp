#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <string>

#include "mcdut/core/tensor.hpp"

namespace mcdut::io {

// Decodes an 8-bit RGB image file into a (3,H,W) tensor in [0,255].
template <typename T>
Tensor<T> read_image(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  require(!bgr.empty(), ErrorKind::Io, "cannot decode image file: " + path);
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  const int64_t H = rgb.rows, W = rgb.cols;
  Tensor<T> out({3, H, W});
  for (int64_t i = 0; i < H; ++i) {
    const uint8_t* row = rgb.ptr<uint8_t>(static_cast<int>(i));
    for (int64_t j = 0; j < W; ++j)
      for (int64_t c = 0; c < 3; ++c) out.at(c, i, j) = static_cast<T>(row[j * 3 + c]);
  }
  return out;
}

// Writes a (3,H,W) tensor in [0,255] as an 8-bit RGB PNG.
template <typename T>
void write_png(const std::string& path, const Tensor<T>& img) {
  require(img.ndim() == 3 && img.dim(0) == 3, ErrorKind::InvalidInput, "write_png: expected (3,H,W)");
  const int64_t H = img.dim(1), W = img.dim(2);
  cv::Mat rgb(static_cast<int>(H), static_cast<int>(W), CV_8UC3);
  for (int64_t i = 0; i < H; ++i) {
    uint8_t* row = rgb.ptr<uint8_t>(static_cast<int>(i));
    for (int64_t j = 0; j < W; ++j)
      for (int64_t c = 0; c < 3; ++c) {
        double v = std::round(static_cast<double>(img.at(c, i, j)));
        row[j * 3 + c] = static_cast<uint8_t>(std::min(255.0, std::max(0.0, v)));
      }
  }
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  require(cv::imwrite(path, bgr), ErrorKind::Io, "cannot write image file: " + path);
}

}  // namespace mcdut::io
