#pragma once

#include <string>

#include "mcdut/nets/modules.hpp"
#include "mcdut/nets/registry.hpp"

namespace mcdut::nets {

// Patch discriminator. The default three stride-2 stages plus one stride-1
// stage give the 70x70 receptive field; shallower depths exist for small
// inputs. Emits one raw logit per patch; no final squashing, the adversarial
// losses operate on logits.
struct DiscriminatorSpec {
  int64_t in_channels = 3;
  int64_t base_channels = 64;
  int64_t num_downsampling = 3;

  void validate() const {
    require(in_channels >= 1 && base_channels >= 1, ErrorKind::InvalidConfig,
            "discriminator: channels must be >= 1");
    require(num_downsampling >= 1, ErrorKind::InvalidConfig,
            "discriminator: need at least one downsampling stage");
  }

  // final two stride-1 convs each shave one pixel, so the downsampled map
  // must keep at least 3 pixels per side
  int64_t min_input_size() const { return int64_t(3) << num_downsampling; }
};

template <typename T>
class PatchDiscriminator {
 public:
  PatchDiscriminator() = default;

  static PatchDiscriminator create(const DiscriminatorSpec& spec, Rng& rng) {
    spec.validate();
    PatchDiscriminator d;
    d.spec_ = spec;
    const int64_t b = spec.base_channels;
    auto width = [b](int64_t stage) { return b * std::min<int64_t>(int64_t(1) << stage, 8); };
    int64_t in = spec.in_channels;
    for (int64_t i = 0; i < spec.num_downsampling; ++i) {
      d.downs_.push_back(Conv2d<T>::create(in, width(i), 4, 2, 1, rng));
      in = width(i);
    }
    d.pre_ = Conv2d<T>::create(in, width(spec.num_downsampling), 4, 1, 1, rng);
    d.head_ = Conv2d<T>::create(width(spec.num_downsampling), 1, 4, 1, 1, rng);
    return d;
  }

  const DiscriminatorSpec& spec() const { return spec_; }

  // (N,C,H,W) -> (N,1,h,w) patch logit map
  Variable<T> forward(const Variable<T>& x) const {
    require(x.value().ndim() == 4 && x.shape()[1] == spec_.in_channels, ErrorKind::InvalidInput,
            "discriminator: expected (N," + std::to_string(spec_.in_channels) + ",H,W) input");
    require(x.shape()[2] >= spec_.min_input_size() && x.shape()[3] >= spec_.min_input_size(),
            ErrorKind::InvalidInput,
            "discriminator: input below the " + std::to_string(spec_.min_input_size()) +
                " pixel minimum for this depth");
    const T slope = T(0.2);
    Variable<T> h = x;
    for (size_t i = 0; i < downs_.size(); ++i) {
      h = downs_[i].forward(h);
      if (i > 0) h = ops::instance_norm2d(h);  // first stage stays unnormalized
      h = ops::leaky_relu(h, slope);
    }
    h = ops::leaky_relu(ops::instance_norm2d(pre_.forward(h)), slope);
    return head_.forward(h);
  }

  void collect(ParamRegistry<T>& reg, const std::string& prefix = "disc") {
    for (size_t i = 0; i < downs_.size(); ++i)
      downs_[i].collect(reg, prefix + ".c" + std::to_string(i + 1));
    pre_.collect(reg, prefix + ".pre");
    head_.collect(reg, prefix + ".head");
  }

 private:
  DiscriminatorSpec spec_;
  std::vector<Conv2d<T>> downs_;
  Conv2d<T> pre_, head_;
};

}  // namespace mcdut::nets
