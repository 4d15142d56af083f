#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "mcdut/core/rng.hpp"
#include "mcdut/image.hpp"
#include "mcdut/io/image_io.hpp"

namespace mcdut::data {

enum class Split { Train, Test };

struct DatasetManifest {
  std::string root;
  std::vector<std::string> domain_a_files;
  std::vector<std::string> domain_b_files;
  Split split = Split::Train;
};

inline bool has_image_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// Directory convention: root/{trainA,trainB} or root/{testA,testB}. File
// lists come back sorted and deduplicated; non-image files are skipped with
// a warning.
inline DatasetManifest scan_dataset(const std::string& root, Split split) {
  namespace fs = std::filesystem;
  DatasetManifest m;
  m.root = root;
  m.split = split;
  const std::string prefix = split == Split::Train ? "train" : "test";
  for (const char domain : {'A', 'B'}) {
    const fs::path dir = fs::path(root) / (prefix + std::string(1, domain));
    require(fs::is_directory(dir), ErrorKind::Dataset, "missing dataset directory: " + dir.string());
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      if (!has_image_extension(entry.path())) {
        std::cerr << "[dataset] skipping non-image file: " << entry.path().string() << "\n";
        continue;
      }
      files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    files.erase(std::unique(files.begin(), files.end()), files.end());
    require(!files.empty(), ErrorKind::Dataset, "no images in dataset directory: " + dir.string());
    (domain == 'A' ? m.domain_a_files : m.domain_b_files) = std::move(files);
  }
  std::cerr << "[dataset] " << root << " " << prefix << ": " << m.domain_a_files.size() << " A / "
            << m.domain_b_files.size() << " B images\n";
  return m;
}

struct PreprocessOptions {
  int64_t load_size = 286;
  int64_t crop_size = 256;
  bool random_flip = true;
};

enum class PrepMode { Train, Eval };

// Train mode: resize to load_size, random crop to crop_size, random
// horizontal flip, scale to [-1,1]. Eval mode resizes straight to crop_size
// and consumes no randomness.
template <typename T>
Tensor<T> load_and_preprocess(const std::string& path, PrepMode mode, Rng& rng,
                              const PreprocessOptions& opts = {}) {
  require(opts.crop_size >= 1 && opts.load_size >= opts.crop_size, ErrorKind::InvalidConfig,
          "preprocess: load_size must be >= crop_size");
  Tensor<T> img = io::read_image<T>(path);
  if (mode == PrepMode::Eval) {
    return bytes_to_signed(bilinear_resize(img, opts.crop_size, opts.crop_size));
  }
  img = bilinear_resize(img, opts.load_size, opts.load_size);
  const int64_t span = opts.load_size - opts.crop_size;
  const int64_t top = span > 0 ? rng.uniform_int(0, span) : 0;
  const int64_t left = span > 0 ? rng.uniform_int(0, span) : 0;
  img = extract_crop(img, top, left, opts.crop_size, opts.crop_size);
  if (opts.random_flip && rng.uniform_real(0.0, 1.0) < 0.5) img = hflip(img);
  return bytes_to_signed(img);
}

// Unpaired pairing for one epoch: both domains are shuffled independently and
// paired by position; the shorter domain cycles so the epoch covers
// max(|A|,|B|) pairs.
inline std::vector<std::pair<int64_t, int64_t>> epoch_pairs(int64_t num_a, int64_t num_b, Rng& rng) {
  require(num_a >= 1 && num_b >= 1, ErrorKind::Dataset, "epoch_pairs: empty domain");
  std::vector<int64_t> ia(static_cast<size_t>(num_a)), ib(static_cast<size_t>(num_b));
  for (int64_t i = 0; i < num_a; ++i) ia[static_cast<size_t>(i)] = i;
  for (int64_t i = 0; i < num_b; ++i) ib[static_cast<size_t>(i)] = i;
  rng.shuffle(ia);
  rng.shuffle(ib);
  const int64_t len = std::max(num_a, num_b);
  std::vector<std::pair<int64_t, int64_t>> pairs(static_cast<size_t>(len));
  for (int64_t i = 0; i < len; ++i)
    pairs[static_cast<size_t>(i)] = {ia[static_cast<size_t>(i % num_a)], ib[static_cast<size_t>(i % num_b)]};
  return pairs;
}

}  // namespace mcdut::data
