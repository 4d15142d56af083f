#pragma once

#include <string>
#include <vector>

#include "mcdut/attention/dca.hpp"
#include "mcdut/nets/modules.hpp"
#include "mcdut/nets/registry.hpp"

namespace mcdut::nets {

// Resnet translator split into an encoder (stem, two downsampling stages with
// optional channel attention, residual blocks) and a decoder (two upsampling
// stages plus an RGB head). Feature taps for the contrastive and domain
// heads sit at: input pixels, both downsampling outputs, and residual blocks
// one and five (clamped to the last block for shallow configs).
struct GeneratorSpec {
  int64_t in_channels = 3;
  int64_t base_channels = 64;
  int64_t num_resnet_blocks = 9;
  int64_t downsample_count = 2;  // architecture is built around exactly two
  attention::AttentionKind attention = attention::AttentionKind::Dca;
  attention::DcaBranch dca_branch = attention::DcaBranch::Dual;
  int64_t attention_reduction = 16;

  static constexpr int64_t kNumTaps = 5;

  void validate() const {
    require(in_channels >= 1, ErrorKind::InvalidConfig, "generator: in_channels must be >= 1");
    require(base_channels >= 1, ErrorKind::InvalidConfig, "generator: base_channels must be >= 1");
    require(num_resnet_blocks >= 2, ErrorKind::InvalidConfig,
            "generator: need at least two residual blocks for the feature taps");
    require(downsample_count == 2, ErrorKind::InvalidConfig,
            "generator: only two downsampling stages are supported");
    require(attention_reduction >= 1, ErrorKind::InvalidConfig, "generator: bad attention reduction");
  }

  bool dca_enabled() const { return attention != attention::AttentionKind::None; }

  int64_t deep_tap_block() const { return std::min<int64_t>(5, num_resnet_blocks); }

  std::vector<int64_t> tap_channels() const {
    return {in_channels, 2 * base_channels, 4 * base_channels, 4 * base_channels, 4 * base_channels};
  }
};

template <typename T>
struct GeneratorForward {
  Variable<T> image;
  std::vector<Variable<T>> taps;
};

template <typename T>
class ResnetGenerator {
 public:
  ResnetGenerator() = default;

  static ResnetGenerator create(const GeneratorSpec& spec, Rng& rng) {
    spec.validate();
    ResnetGenerator g;
    g.spec_ = spec;
    const int64_t b = spec.base_channels;
    g.stem_ = Conv2d<T>::create(spec.in_channels, b, 7, 1, 0, rng);
    g.down1_ = Conv2d<T>::create(b, 2 * b, 3, 2, 1, rng);
    g.down2_ = Conv2d<T>::create(2 * b, 4 * b, 3, 2, 1, rng);
    g.att1_ = attention::AttentionBlock<T>::create(spec.attention, 2 * b, spec.attention_reduction,
                                                   spec.dca_branch, rng);
    g.att2_ = attention::AttentionBlock<T>::create(spec.attention, 4 * b, spec.attention_reduction,
                                                   spec.dca_branch, rng);
    g.blocks_.reserve(static_cast<size_t>(spec.num_resnet_blocks));
    for (int64_t i = 0; i < spec.num_resnet_blocks; ++i)
      g.blocks_.push_back(ResnetBlock<T>::create(4 * b, rng));
    g.up1_ = ConvTranspose2d<T>::create(4 * b, 2 * b, 3, 2, 1, 1, rng);
    g.up2_ = ConvTranspose2d<T>::create(2 * b, b, 3, 2, 1, 1, rng);
    g.head_ = Conv2d<T>::create(b, spec.in_channels, 7, 1, 0, rng);
    return g;
  }

  const GeneratorSpec& spec() const { return spec_; }

  // Encoder taps only; used for the input image, crop views and real target
  // images where the decoder half is not needed.
  std::vector<Variable<T>> encode(const Variable<T>& x) const {
    return encode_impl(x).taps;
  }

  GeneratorForward<T> forward(const Variable<T>& x) const {
    check_input(x);
    require(x.shape()[2] % 4 == 0 && x.shape()[3] % 4 == 0, ErrorKind::InvalidInput,
            "generator: spatial size must be divisible by 4 for decoding, got " +
                shape_str(x.value().shape()));
    EncodeState st = encode_impl(x);
    Variable<T> h = st.hidden;
    for (int64_t i = spec_.deep_tap_block(); i < spec_.num_resnet_blocks; ++i)
      h = blocks_[static_cast<size_t>(i)].forward(h);
    h = ops::relu(ops::instance_norm2d(up1_.forward(h)));
    h = ops::relu(ops::instance_norm2d(up2_.forward(h)));
    GeneratorForward<T> out;
    out.image = ops::tanh_op(head_.forward(ops::reflection_pad2d(h, 3)));
    out.taps = std::move(st.taps);
    return out;
  }

  void collect(ParamRegistry<T>& reg, const std::string& prefix = "gen") {
    stem_.collect(reg, prefix + ".stem");
    down1_.collect(reg, prefix + ".down1");
    down2_.collect(reg, prefix + ".down2");
    att1_.collect(reg, prefix + ".att1");
    att2_.collect(reg, prefix + ".att2");
    for (size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect(reg, prefix + ".res" + std::to_string(i + 1));
    up1_.collect(reg, prefix + ".up1");
    up2_.collect(reg, prefix + ".up2");
    head_.collect(reg, prefix + ".head");
  }

 private:
  struct EncodeState {
    std::vector<Variable<T>> taps;
    Variable<T> hidden;
  };

  void check_input(const Variable<T>& x) const {
    require(x.value().ndim() == 4, ErrorKind::InvalidInput, "generator: input must be (N,C,H,W)");
    require(x.shape()[1] == spec_.in_channels, ErrorKind::InvalidInput,
            "generator: expected " + std::to_string(spec_.in_channels) + " channels, got " +
                std::to_string(x.shape()[1]));
    require(x.shape()[2] >= 8 && x.shape()[3] >= 8, ErrorKind::InvalidInput,
            "generator: input smaller than the 8x8 minimum");
  }

  EncodeState encode_impl(const Variable<T>& x) const {
    check_input(x);
    EncodeState st;
    st.taps.reserve(GeneratorSpec::kNumTaps);
    st.taps.push_back(x);  // tap 0: raw pixels
    auto h = ops::relu(ops::instance_norm2d(stem_.forward(ops::reflection_pad2d(x, 3))));
    h = ops::relu(ops::instance_norm2d(down1_.forward(h)));
    h = att1_.forward(h);
    st.taps.push_back(h);  // tap 1: first downsampling output
    h = ops::relu(ops::instance_norm2d(down2_.forward(h)));
    h = att2_.forward(h);
    st.taps.push_back(h);  // tap 2: second downsampling output
    const int64_t deep = spec_.deep_tap_block();
    for (int64_t i = 0; i < deep; ++i) {
      h = blocks_[static_cast<size_t>(i)].forward(h);
      if (i == 0) st.taps.push_back(h);  // tap 3: first residual block
    }
    st.taps.push_back(h);  // tap 4: fifth (or last) residual block
    st.hidden = h;
    return st;
  }

  GeneratorSpec spec_;
  Conv2d<T> stem_, down1_, down2_, head_;
  attention::AttentionBlock<T> att1_, att2_;
  std::vector<ResnetBlock<T>> blocks_;
  ConvTranspose2d<T> up1_, up2_;
};

}  // namespace mcdut::nets
