#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "mcdut/core/rng.hpp"
#include "mcdut/core/tensor.hpp"
#include "mcdut/data/dataset.hpp"
#include "mcdut/train/engine.hpp"

namespace mcdut::eval {

struct EmbeddingSet {
  Tensor<double> features;  // (n, d)
  std::string extractor_id;

  int64_t count() const { return features.ndim() == 2 ? features.dim(0) : 0; }
  int64_t dim() const { return features.ndim() == 2 ? features.dim(1) : 0; }

  void validate(bool for_fid = true) const {
    require(features.ndim() == 2, ErrorKind::InvalidInput, "embedding set: expected (n,d) matrix");
    require(count() >= 2, ErrorKind::InvalidInput,
            for_fid ? "embedding set: need n >= 2 for covariance statistics"
                    : "embedding set: need n >= 2");
    require(features.all_finite(), ErrorKind::InvalidInput, "embedding set: non-finite entries");
  }
};

// Feature extractors map a (3,H,W) image in [-1,1] to a feature row. The
// metric math is extractor-agnostic; pretrained backbones plug in behind the
// same interface when their weights are available as an external asset.
class Extractor {
 public:
  virtual ~Extractor() = default;
  virtual Tensor<double> embed(const Tensor<double>& image) const = 0;
  virtual std::string id() const = 0;
};

class IdentityExtractor : public Extractor {
 public:
  Tensor<double> embed(const Tensor<double>& image) const override {
    return image.reshaped({image.numel()});
  }
  std::string id() const override { return "identity"; }
};

// Fixed Gaussian projection of the flattened pixels; deterministic per
// (seed, out_dim) and cheap enough for desk-scale evaluation.
class RandomProjectionExtractor : public Extractor {
 public:
  explicit RandomProjectionExtractor(uint64_t seed = 0, int64_t out_dim = 64)
      : seed_(seed), out_dim_(out_dim) {
    require(out_dim >= 1, ErrorKind::InvalidConfig, "random projection: out_dim must be >= 1");
  }

  Tensor<double> embed(const Tensor<double>& image) const override {
    const int64_t d_in = image.numel();
    if (proj_.empty() || proj_.dim(1) != d_in) {
      Rng rng(mix_seed(seed_, 0x9a0));
      proj_ = Tensor<double>::randn({out_dim_, d_in}, rng, 1.0 / std::sqrt(static_cast<double>(d_in)));
    }
    Tensor<double> out({out_dim_});
    for (int64_t r = 0; r < out_dim_; ++r) {
      double s = 0;
      for (int64_t i = 0; i < d_in; ++i) s += proj_.at(r, i) * image[i];
      out[r] = s;
    }
    return out;
  }

  std::string id() const override {
    return "randproj-" + std::to_string(seed_) + "-" + std::to_string(out_dim_);
  }

 private:
  uint64_t seed_;
  int64_t out_dim_;
  mutable Tensor<double> proj_;
};

inline std::unique_ptr<Extractor> make_extractor(const std::string& name, uint64_t seed = 0) {
  if (name == "identity") return std::make_unique<IdentityExtractor>();
  if (name == "randproj") return std::make_unique<RandomProjectionExtractor>(seed);
  fail(ErrorKind::Asset, "unknown or unavailable feature extractor: " + name);
}

template <typename T>
EmbeddingSet extract_embeddings(const std::vector<Tensor<T>>& images, const Extractor& extractor) {
  require(!images.empty(), ErrorKind::InvalidInput, "extract_embeddings: empty image list");
  EmbeddingSet set;
  set.extractor_id = extractor.id();
  for (size_t i = 0; i < images.size(); ++i) {
    Tensor<double> img(images[i].shape());
    for (int64_t j = 0; j < img.numel(); ++j) img[j] = static_cast<double>(images[i][j]);
    Tensor<double> row = extractor.embed(img);
    if (i == 0) set.features = Tensor<double>({static_cast<int64_t>(images.size()), row.numel()});
    require(row.numel() == set.features.dim(1), ErrorKind::InternalConsistency,
            "extractor produced rows of differing width");
    std::copy(row.data(), row.data() + row.numel(),
              set.features.data() + static_cast<int64_t>(i) * row.numel());
  }
  return set;
}

namespace detail {

using EMat = Eigen::MatrixXd;
using EVec = Eigen::VectorXd;

inline void mean_and_cov(const Tensor<double>& x, EVec& mu, EMat& cov) {
  const int64_t n = x.dim(0), d = x.dim(1);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
      x.data(), n, d);
  mu = m.colwise().mean();
  EMat centered = m.rowwise() - mu.transpose();
  cov = centered.transpose() * centered / static_cast<double>(n - 1);
}

// Symmetric PSD square root via eigendecomposition. Mild negative
// eigenvalues (numerical) clip to zero; anything beyond tolerance is an
// error, not a silent fix.
inline EMat sqrt_psd(const EMat& m, double tol = 1e-6) {
  EMat sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<EMat> eig(sym);
  require(eig.info() == Eigen::Success, ErrorKind::Numerical, "eigendecomposition failed");
  EVec vals = eig.eigenvalues();
  const double scale = std::max(1.0, std::abs(vals.maxCoeff()));
  for (int64_t i = 0; i < vals.size(); ++i) {
    require(vals[i] > -tol * scale, ErrorKind::Numerical,
            "matrix is not PSD within tolerance (eigenvalue " + std::to_string(vals[i]) + ")");
    vals[i] = std::max(0.0, vals[i]);
  }
  return eig.eigenvectors() * vals.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace detail

// Frechet distance between Gaussian fits of the two embedding sets.
inline double fid(const EmbeddingSet& real, const EmbeddingSet& gen) {
  real.validate();
  gen.validate();
  require(real.dim() == gen.dim(), ErrorKind::InvalidInput, "fid: embedding widths differ");
  detail::EVec mu_r, mu_g;
  detail::EMat cov_r, cov_g;
  detail::mean_and_cov(real.features, mu_r, cov_r);
  detail::mean_and_cov(gen.features, mu_g, cov_g);
  const detail::EMat root_r = detail::sqrt_psd(cov_r);
  const detail::EMat mid = detail::sqrt_psd(root_r * cov_g * root_r);
  const double mean_term = (mu_r - mu_g).squaredNorm();
  const double trace_term = cov_r.trace() + cov_g.trace() - 2.0 * mid.trace();
  return mean_term + trace_term;
}

struct KidOptions {
  int64_t subset_size = 100;
  int64_t num_subsets = 10;
  uint64_t seed = 0;
};

// Unbiased squared MMD with the polynomial kernel k(a,b) = (a.b/d + 1)^3,
// diagonal terms excluded from all three sums, averaged over subsets.
// Identical inputs give exactly zero. Reported value is raw; callers scale
// by 100 for the conventional figure.
inline double kid(const EmbeddingSet& real, const EmbeddingSet& gen, const KidOptions& opts = {}) {
  real.validate(false);
  gen.validate(false);
  require(real.dim() == gen.dim(), ErrorKind::InvalidInput, "kid: embedding widths differ");
  require(opts.subset_size >= 2 && opts.num_subsets >= 1, ErrorKind::InvalidConfig,
          "kid: need subset_size >= 2 and num_subsets >= 1");
  const int64_t d = real.dim();
  const int64_t s = std::min<int64_t>({opts.subset_size, real.count(), gen.count()});
  const auto kernel = [d](const double* a, const double* b) {
    double dot = 0;
    for (int64_t i = 0; i < d; ++i) dot += a[i] * b[i];
    return std::pow(dot / static_cast<double>(d) + 1.0, 3.0);
  };
  Rng rng(mix_seed(opts.seed, 0x21d));
  double total = 0;
  for (int64_t rep = 0; rep < opts.num_subsets; ++rep) {
    const auto pick = [&](const EmbeddingSet& set) {
      std::vector<int64_t> idx;
      if (s == set.count()) {
        idx.resize(static_cast<size_t>(s));
        for (int64_t i = 0; i < s; ++i) idx[static_cast<size_t>(i)] = i;
      } else {
        idx = rng.sample_without_replacement(set.count(), s);
      }
      return idx;
    };
    const auto ia = pick(real);
    const auto ib = pick(gen);
    double acc = 0;
    for (int64_t i = 0; i < s; ++i) {
      const double* ai = real.features.data() + ia[static_cast<size_t>(i)] * d;
      const double* bi = gen.features.data() + ib[static_cast<size_t>(i)] * d;
      for (int64_t j = 0; j < s; ++j) {
        if (i == j) continue;
        const double* aj = real.features.data() + ia[static_cast<size_t>(j)] * d;
        const double* bj = gen.features.data() + ib[static_cast<size_t>(j)] * d;
        acc += kernel(ai, aj) + kernel(bi, bj) - kernel(ai, bj) - kernel(aj, bi);
      }
    }
    total += acc / static_cast<double>(s * (s - 1));
  }
  return total / static_cast<double>(opts.num_subsets);
}

struct MetricReport {
  double fid = 0;
  double kid_x100 = 0;
  int64_t n_gen = 0;
  int64_t n_real = 0;
  std::string extractor_id;

  nlohmann::json to_json() const {
    return nlohmann::json{{"fid", fid},
                          {"kid_x100", kid_x100},
                          {"n_gen", n_gen},
                          {"n_real", n_real},
                          {"extractor_id", extractor_id}};
  }
};

struct EvaluateOptions {
  KidOptions kid;
  int64_t max_images = 0;  // 0 = all
};

// Translates every test-A image with the engine's generator, embeds the
// translations and the real B set, and reports FID and KID x100.
template <typename T>
MetricReport evaluate_run(const train::Engine<T>& engine, const data::DatasetManifest& test_manifest,
                          const Extractor& extractor, const EvaluateOptions& opts = {}) {
  data::PreprocessOptions prep;
  prep.crop_size = engine.config().crop_size;
  prep.load_size = engine.config().load_size;
  Rng unused(0);
  auto limit = [&](size_t n) {
    return opts.max_images > 0 ? std::min<size_t>(n, static_cast<size_t>(opts.max_images)) : n;
  };
  std::vector<Tensor<T>> translated;
  for (size_t i = 0; i < limit(test_manifest.domain_a_files.size()); ++i) {
    auto img = data::load_and_preprocess<T>(test_manifest.domain_a_files[i], data::PrepMode::Eval,
                                            unused, prep);
    translated.push_back(engine.translate(img));
  }
  std::vector<Tensor<T>> real_b;
  for (size_t i = 0; i < limit(test_manifest.domain_b_files.size()); ++i)
    real_b.push_back(data::load_and_preprocess<T>(test_manifest.domain_b_files[i], data::PrepMode::Eval,
                                                  unused, prep));
  const EmbeddingSet gen_set = extract_embeddings(translated, extractor);
  const EmbeddingSet real_set = extract_embeddings(real_b, extractor);
  MetricReport rep;
  rep.fid = fid(real_set, gen_set);
  rep.kid_x100 = 100.0 * kid(real_set, gen_set, opts.kid);
  rep.n_gen = gen_set.count();
  rep.n_real = real_set.count();
  rep.extractor_id = extractor.id();
  return rep;
}

}  // namespace mcdut::eval
