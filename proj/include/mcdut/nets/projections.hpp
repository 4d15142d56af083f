#pragma once

#include <string>
#include <vector>

#include "mcdut/losses/contrastive.hpp"
#include "mcdut/nets/modules.hpp"
#include "mcdut/nets/registry.hpp"
#include "mcdut/sampling/multicrop.hpp"

namespace mcdut::nets {

// Content projection: one two-layer MLP per encoder tap, mapping gathered
// patch vectors to K-dimensional embeddings.
template <typename T>
class PatchProjection {
 public:
  PatchProjection() = default;

  static PatchProjection create(const std::vector<int64_t>& tap_channels, int64_t embed_dim, Rng& rng) {
    require(embed_dim >= 1, ErrorKind::InvalidConfig, "patch projection: embed_dim must be >= 1");
    PatchProjection p;
    p.embed_dim_ = embed_dim;
    // small random biases keep dead-rectifier patches off the exact zero
    // vector, which the unit-sphere normalization rejects
    for (int64_t c : tap_channels) {
      p.fc1_.push_back(LinearLayer<T>::create(c, embed_dim, rng, T(nets::kInitStd)));
      p.fc2_.push_back(LinearLayer<T>::create(embed_dim, embed_dim, rng, T(nets::kInitStd)));
    }
    return p;
  }

  size_t num_layers() const { return fc1_.size(); }
  int64_t embed_dim() const { return embed_dim_; }

  // patches (S, C_l) -> unit-norm embeddings (S, K)
  Variable<T> project(const Variable<T>& patches, size_t layer) const {
    require(layer < fc1_.size(), ErrorKind::InvalidConfig, "patch projection: layer id out of range");
    auto h = ops::relu(fc1_[layer].forward(patches));
    return ops::row_l2_normalize(fc2_[layer].forward(h));
  }

  void collect(ParamRegistry<T>& reg, const std::string& prefix = "proj_f") {
    for (size_t l = 0; l < fc1_.size(); ++l) {
      fc1_[l].collect(reg, prefix + ".l" + std::to_string(l) + ".fc1");
      fc2_[l].collect(reg, prefix + ".l" + std::to_string(l) + ".fc2");
    }
  }

 private:
  int64_t embed_dim_ = 256;
  std::vector<LinearLayer<T>> fc1_, fc2_;
};

// Gathers the sampled patch vectors of every tap for one sample and projects
// them onto the unit sphere: returns one (S_l, K) matrix per layer.
template <typename T>
std::vector<Variable<T>> project_patches(const std::vector<Variable<T>>& taps,
                                         const std::vector<multicrop::PatchIndexSet>& ids,
                                         const PatchProjection<T>& head, int64_t sample = 0) {
  require(taps.size() == head.num_layers(), ErrorKind::InternalConsistency,
          "project_patches: tap count does not match head layer count");
  require(ids.size() == taps.size(), ErrorKind::InternalConsistency,
          "project_patches: id set count does not match tap count");
  std::vector<Variable<T>> out;
  out.reserve(taps.size());
  for (size_t l = 0; l < taps.size(); ++l) {
    auto gathered = ops::gather_patches(taps[l], sample, ids[l].indices);
    out.push_back(head.project(gathered, l));
  }
  return out;
}

// Domain projection: per tap, a conv stage, global average pooling (which
// absorbs spatial position), then three dense layers producing the style
// vector.
template <typename T>
class DomainProjection {
 public:
  DomainProjection() = default;

  static DomainProjection create(const std::vector<int64_t>& tap_channels, int64_t style_dim, Rng& rng) {
    require(style_dim >= 1, ErrorKind::InvalidConfig, "domain projection: style_dim must be >= 1");
    DomainProjection p;
    p.style_dim_ = style_dim;
    for (int64_t c : tap_channels) {
      p.conv_.push_back(Conv2d<T>::create(c, c, 3, 1, 1, rng));
      p.fc1_.push_back(LinearLayer<T>::create(c, style_dim, rng));
      p.fc2_.push_back(LinearLayer<T>::create(style_dim, style_dim, rng));
      p.fc3_.push_back(LinearLayer<T>::create(style_dim, style_dim, rng));
    }
    return p;
  }

  size_t num_layers() const { return conv_.size(); }
  int64_t style_dim() const { return style_dim_; }

  // tap (N, C_l, H, W) -> style vectors (N, style_dim)
  Variable<T> project(const Variable<T>& tap, size_t layer) const {
    require(layer < conv_.size(), ErrorKind::InvalidConfig, "domain projection: layer id out of range");
    auto h = ops::global_avg_pool(ops::relu(conv_[layer].forward(tap)));
    h = ops::relu(fc1_[layer].forward(h));
    h = ops::relu(fc2_[layer].forward(h));
    return fc3_[layer].forward(h);
  }

  void collect(ParamRegistry<T>& reg, const std::string& prefix) {
    for (size_t l = 0; l < conv_.size(); ++l) {
      const std::string p = prefix + ".l" + std::to_string(l);
      conv_[l].collect(reg, p + ".conv");
      fc1_[l].collect(reg, p + ".fc1");
      fc2_[l].collect(reg, p + ".fc2");
      fc3_[l].collect(reg, p + ".fc3");
    }
  }

 private:
  int64_t style_dim_ = 128;
  std::vector<Conv2d<T>> conv_;
  std::vector<LinearLayer<T>> fc1_, fc2_, fc3_;
};

// One style vector per selected layer.
template <typename T>
std::vector<Variable<T>> project_domain(const std::vector<Variable<T>>& taps,
                                        const DomainProjection<T>& head) {
  require(taps.size() == head.num_layers(), ErrorKind::InternalConsistency,
          "project_domain: tap count does not match head layer count");
  std::vector<Variable<T>> out;
  out.reserve(taps.size());
  for (size_t l = 0; l < taps.size(); ++l) out.push_back(head.project(taps[l], l));
  return out;
}

}  // namespace mcdut::nets
