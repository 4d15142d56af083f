#pragma once

#include <string>

#include "mcdut/core/nn_ops.hpp"
#include "mcdut/core/ops.hpp"
#include "mcdut/core/rng.hpp"
#include "mcdut/nets/registry.hpp"

namespace mcdut::nets {

// Weights start from N(0, 0.02), biases from zero.
inline constexpr double kInitStd = 0.02;

template <typename T>
struct Conv2d {
  Variable<T> w, b;
  int64_t stride = 1, pad = 0;

  static Conv2d create(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride, int64_t pad, Rng& rng) {
    Conv2d m;
    m.w = Variable<T>::param(Tensor<T>::randn({out_ch, in_ch, k, k}, rng, T(kInitStd)));
    m.b = Variable<T>::param(Tensor<T>::zeros({out_ch}));
    m.stride = stride;
    m.pad = pad;
    return m;
  }

  Variable<T> forward(const Variable<T>& x) const { return ops::conv2d(x, w, b, stride, pad); }

  void collect(ParamRegistry<T>& reg, const std::string& prefix) {
    reg.add(prefix + ".w", w);
    reg.add(prefix + ".b", b);
  }
};

template <typename T>
struct ConvTranspose2d {
  Variable<T> w, b;
  int64_t stride = 1, pad = 0, out_pad = 0;

  static ConvTranspose2d create(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride, int64_t pad,
                                int64_t out_pad, Rng& rng) {
    ConvTranspose2d m;
    m.w = Variable<T>::param(Tensor<T>::randn({in_ch, out_ch, k, k}, rng, T(kInitStd)));
    m.b = Variable<T>::param(Tensor<T>::zeros({out_ch}));
    m.stride = stride;
    m.pad = pad;
    m.out_pad = out_pad;
    return m;
  }

  Variable<T> forward(const Variable<T>& x) const {
    return ops::conv_transpose2d(x, w, b, stride, pad, out_pad);
  }

  void collect(ParamRegistry<T>& reg, const std::string& prefix) {
    reg.add(prefix + ".w", w);
    reg.add(prefix + ".b", b);
  }
};

template <typename T>
struct LinearLayer {
  Variable<T> w, b;

  static LinearLayer create(int64_t in_f, int64_t out_f, Rng& rng, T bias_init_std = T(0)) {
    LinearLayer m;
    m.w = Variable<T>::param(Tensor<T>::randn({out_f, in_f}, rng, T(kInitStd)));
    m.b = Variable<T>::param(bias_init_std > T(0) ? Tensor<T>::randn({out_f}, rng, bias_init_std)
                                                  : Tensor<T>::zeros({out_f}));
    return m;
  }

  Variable<T> forward(const Variable<T>& x) const { return ops::linear(x, w, b); }

  void collect(ParamRegistry<T>& reg, const std::string& prefix) {
    reg.add(prefix + ".w", w);
    reg.add(prefix + ".b", b);
  }
};

// Residual block: refpad-conv-IN-relu-refpad-conv-IN plus the skip.
template <typename T>
struct ResnetBlock {
  Conv2d<T> c1, c2;

  static ResnetBlock create(int64_t ch, Rng& rng) {
    ResnetBlock m;
    m.c1 = Conv2d<T>::create(ch, ch, 3, 1, 0, rng);
    m.c2 = Conv2d<T>::create(ch, ch, 3, 1, 0, rng);
    return m;
  }

  Variable<T> forward(const Variable<T>& x) const {
    auto h = ops::relu(ops::instance_norm2d(c1.forward(ops::reflection_pad2d(x, 1))));
    h = ops::instance_norm2d(c2.forward(ops::reflection_pad2d(h, 1)));
    return ops::add(x, h);
  }

  void collect(ParamRegistry<T>& reg, const std::string& prefix) {
    c1.collect(reg, prefix + ".c1");
    c2.collect(reg, prefix + ".c2");
  }
};

}  // namespace mcdut::nets
