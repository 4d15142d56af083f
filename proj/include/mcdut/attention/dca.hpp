#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mcdut/core/autograd.hpp"
#include "mcdut/core/nn_ops.hpp"
#include "mcdut/core/ops.hpp"
#include "mcdut/nets/registry.hpp"

namespace mcdut::attention {

enum class PoolMode { Avg, Max };

// 1-D directional reductions of a (C,H,W) feature map: h_pool collapses the
// width of each row, w_pool collapses the height of each column.
template <typename T>
struct DirectionalPooled {
  Tensor<T> h_pool;  // (C,H)
  Tensor<T> w_pool;  // (C,W)
  PoolMode mode = PoolMode::Avg;
};

template <typename T>
DirectionalPooled<T> directional_pool(const Tensor<T>& feature, PoolMode mode) {
  require(feature.ndim() == 3, ErrorKind::InvalidInput, "directional_pool: expected (C,H,W)");
  const int64_t C = feature.dim(0), H = feature.dim(1), W = feature.dim(2);
  require(H >= 1 && W >= 1, ErrorKind::InvalidInput, "directional_pool: empty spatial dims");
  DirectionalPooled<T> out;
  out.mode = mode;
  out.h_pool = Tensor<T>({C, H});
  out.w_pool = Tensor<T>({C, W});
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < H; ++i) {
      T acc = feature.at(c, i, 0);
      for (int64_t j = 1; j < W; ++j) {
        const T v = feature.at(c, i, j);
        acc = mode == PoolMode::Max ? std::max(acc, v) : acc + v;
      }
      out.h_pool.at(c, i) = mode == PoolMode::Max ? acc : acc / static_cast<T>(W);
    }
    for (int64_t j = 0; j < W; ++j) {
      T acc = feature.at(c, 0, j);
      for (int64_t i = 1; i < H; ++i) {
        const T v = feature.at(c, i, j);
        acc = mode == PoolMode::Max ? std::max(acc, v) : acc + v;
      }
      out.w_pool.at(c, j) = mode == PoolMode::Max ? acc : acc / static_cast<T>(H);
    }
  }
  return out;
}

// Concatenates each branch along the spatial axis, then adds the branches:
// (C,H)++(C,W) per branch -> elementwise sum -> hybrid (C,H+W).
template <typename T>
Tensor<T> fuse_branches(const DirectionalPooled<T>& avg, const DirectionalPooled<T>& max) {
  require(avg.h_pool.shape() == max.h_pool.shape() && avg.w_pool.shape() == max.w_pool.shape(),
          ErrorKind::InternalConsistency, "fuse_branches: branch shapes differ");
  const int64_t C = avg.h_pool.dim(0), H = avg.h_pool.dim(1), W = avg.w_pool.dim(1);
  Tensor<T> out({C, H + W});
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < H; ++i) out.at(c, i) = avg.h_pool.at(c, i) + max.h_pool.at(c, i);
    for (int64_t j = 0; j < W; ++j) out.at(c, H + j) = avg.w_pool.at(c, j) + max.w_pool.at(c, j);
  }
  return out;
}

// Bottleneck that turns the hybrid pool feature into one gate per channel:
// the two dense layers are shared across the H+W positions, positional
// responses are averaged, and a sigmoid bounds the gates to (0,1).
template <typename T>
struct DcaParams {
  int64_t channels = 0;
  int64_t reduction = 16;
  Tensor<T> w1;  // (Cr, C)
  Tensor<T> b1;  // (Cr)
  Tensor<T> w2;  // (C, Cr)
  Tensor<T> b2;  // (C)

  static DcaParams create(int64_t channels, int64_t reduction, Rng& rng, T init_std = T(0.02)) {
    require(channels >= 1 && reduction >= 1, ErrorKind::InvalidConfig, "dca: bad channels/reduction");
    DcaParams p;
    p.channels = channels;
    p.reduction = reduction;
    const int64_t cr = std::max<int64_t>(1, channels / reduction);
    p.w1 = Tensor<T>::randn({cr, channels}, rng, init_std);
    p.b1 = Tensor<T>::zeros({cr});
    p.w2 = Tensor<T>::randn({channels, cr}, rng, init_std);
    p.b2 = Tensor<T>::zeros({channels});
    return p;
  }
};

template <typename T>
Tensor<T> channel_weights(const Tensor<T>& hybrid, const DcaParams<T>& params) {
  require(hybrid.ndim() == 2, ErrorKind::InvalidInput, "channel_weights: expected (C,H+W)");
  const int64_t C = hybrid.dim(0), P = hybrid.dim(1);
  require(C == params.channels, ErrorKind::InvalidConfig, "channel_weights: channel count mismatch");
  const int64_t cr = params.w1.dim(0);
  Tensor<T> mean_out({C});
  std::vector<T> hidden(static_cast<size_t>(cr));
  for (int64_t p = 0; p < P; ++p) {
    for (int64_t r = 0; r < cr; ++r) {
      T s = params.b1[r];
      for (int64_t c = 0; c < C; ++c) s += params.w1.at(r, c) * hybrid.at(c, p);
      hidden[static_cast<size_t>(r)] = s > T(0) ? s : T(0);
    }
    for (int64_t c = 0; c < C; ++c) {
      T s = params.b2[c];
      for (int64_t r = 0; r < cr; ++r) s += params.w2.at(c, r) * hidden[static_cast<size_t>(r)];
      mean_out[c] += s;
    }
  }
  Tensor<T> gates({C});
  for (int64_t c = 0; c < C; ++c)
    gates[c] = ops::sigmoid_scalar(mean_out[c] / static_cast<T>(P));
  return gates;
}

template <typename T>
Tensor<T> apply_channel_gates(const Tensor<T>& feature, const Tensor<T>& gates) {
  require(feature.ndim() == 3, ErrorKind::InvalidInput, "apply_channel_gates: expected (C,H,W)");
  require(gates.numel() == feature.dim(0), ErrorKind::InvalidConfig,
          "apply_channel_gates: one gate per channel required");
  Tensor<T> out = feature;
  const int64_t plane = feature.dim(1) * feature.dim(2);
  for (int64_t c = 0; c < feature.dim(0); ++c) {
    T* dst = out.data() + c * plane;
    for (int64_t i = 0; i < plane; ++i) dst[i] *= gates[c];
  }
  return out;
}

// Full block on a plain (C,H,W) tensor: dual directional pooling, additive
// fusion, bottleneck gates, channelwise rescale.
template <typename T>
Tensor<T> dca_forward(const Tensor<T>& feature, const DcaParams<T>& params) {
  require(feature.ndim() == 3, ErrorKind::InvalidInput, "dca_forward: expected (C,H,W)");
  require(feature.dim(0) == params.channels, ErrorKind::InvalidConfig,
          "dca_forward: feature has " + std::to_string(feature.dim(0)) + " channels, block expects " +
              std::to_string(params.channels));
  const auto avg = directional_pool(feature, PoolMode::Avg);
  const auto max = directional_pool(feature, PoolMode::Max);
  const Tensor<T> gates = channel_weights(fuse_branches(avg, max), params);
  return apply_channel_gates(feature, gates);
}

enum class AttentionKind { None, Dca, Se, Cbam };
enum class DcaBranch { Dual, GapOnly, GmpOnly };

inline const char* to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::None: return "none";
    case AttentionKind::Dca: return "dca";
    case AttentionKind::Se: return "se";
    case AttentionKind::Cbam: return "cbam";
  }
  return "none";
}

inline AttentionKind attention_kind_from_string(const std::string& s) {
  if (s == "none") return AttentionKind::None;
  if (s == "dca") return AttentionKind::Dca;
  if (s == "se") return AttentionKind::Se;
  if (s == "cbam") return AttentionKind::Cbam;
  fail(ErrorKind::InvalidConfig, "unknown attention kind: " + s);
}

inline const char* to_string(DcaBranch b) {
  switch (b) {
    case DcaBranch::Dual: return "dual";
    case DcaBranch::GapOnly: return "gap";
    case DcaBranch::GmpOnly: return "gmp";
  }
  return "dual";
}

inline DcaBranch dca_branch_from_string(const std::string& s) {
  if (s == "dual") return DcaBranch::Dual;
  if (s == "gap") return DcaBranch::GapOnly;
  if (s == "gmp") return DcaBranch::GmpOnly;
  fail(ErrorKind::InvalidConfig, "unknown dca branch: " + s);
}

// Trainable channel-attention block. The DCA path is the default; SE and
// CBAM exist as ablation baselines behind the same interface.
template <typename T>
class AttentionBlock {
 public:
  AttentionBlock() = default;

  static AttentionBlock create(AttentionKind kind, int64_t channels, int64_t reduction, DcaBranch branch,
                               Rng& rng) {
    AttentionBlock blk;
    blk.kind_ = kind;
    blk.branch_ = branch;
    blk.channels_ = channels;
    blk.reduction_ = reduction;
    if (kind == AttentionKind::None) return blk;
    const int64_t cr = std::max<int64_t>(1, channels / reduction);
    blk.w1_ = Variable<T>::param(Tensor<T>::randn({cr, channels}, rng, T(0.02)));
    blk.b1_ = Variable<T>::param(Tensor<T>::zeros({cr}));
    blk.w2_ = Variable<T>::param(Tensor<T>::randn({channels, cr}, rng, T(0.02)));
    blk.b2_ = Variable<T>::param(Tensor<T>::zeros({channels}));
    if (kind == AttentionKind::Cbam) {
      blk.spatial_w_ = Variable<T>::param(Tensor<T>::randn({1, 2, 7, 7}, rng, T(0.02)));
      blk.spatial_b_ = Variable<T>::param(Tensor<T>::zeros({1}));
    }
    return blk;
  }

  AttentionKind kind() const { return kind_; }
  int64_t channels() const { return channels_; }

  Variable<T> forward(const Variable<T>& x) const {
    switch (kind_) {
      case AttentionKind::None: return x;
      case AttentionKind::Dca: return forward_dca(x);
      case AttentionKind::Se: return forward_se(x);
      case AttentionKind::Cbam: return forward_cbam(x);
    }
    return x;
  }

  void collect(nets::ParamRegistry<T>& reg, const std::string& prefix) {
    if (kind_ == AttentionKind::None) return;
    reg.add(prefix + ".w1", w1_);
    reg.add(prefix + ".b1", b1_);
    reg.add(prefix + ".w2", w2_);
    reg.add(prefix + ".b2", b2_);
    if (kind_ == AttentionKind::Cbam) {
      reg.add(prefix + ".spatial_w", spatial_w_);
      reg.add(prefix + ".spatial_b", spatial_b_);
    }
  }

 private:
  Variable<T> bottleneck_rows(const Variable<T>& rows) const {
    return ops::linear(ops::relu(ops::linear(rows, w1_, b1_)), w2_, b2_);
  }

  Variable<T> forward_dca(const Variable<T>& x) const {
    const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    require(C == channels_, ErrorKind::InvalidConfig,
            "attention: feature has " + std::to_string(C) + " channels, block expects " +
                std::to_string(channels_));
    auto branch = [&](bool max_mode) {
      auto h = ops::reshape(ops::dir_pool(x, /*over_width=*/true, max_mode), {N * C, H});
      auto w = ops::reshape(ops::dir_pool(x, /*over_width=*/false, max_mode), {N * C, W});
      return ops::concat_cols(h, w);  // (N*C, H+W)
    };
    Variable<T> hybrid;
    if (branch_ == DcaBranch::GapOnly) hybrid = branch(false);
    else if (branch_ == DcaBranch::GmpOnly) hybrid = branch(true);
    else hybrid = ops::add(branch(false), branch(true));
    auto rows = ops::positions_to_rows(ops::reshape(hybrid, {N, C, H + W}));  // (N*(H+W), C)
    auto pooled = ops::block_row_mean(bottleneck_rows(rows), N);              // (N, C)
    return ops::scale_channels(x, ops::sigmoid(pooled));
  }

  Variable<T> forward_se(const Variable<T>& x) const {
    require(x.shape()[1] == channels_, ErrorKind::InvalidConfig, "attention: channel mismatch");
    auto gates = ops::sigmoid(bottleneck_rows(ops::global_avg_pool(x)));
    return ops::scale_channels(x, gates);
  }

  Variable<T> forward_cbam(const Variable<T>& x) const {
    require(x.shape()[1] == channels_, ErrorKind::InvalidConfig, "attention: channel mismatch");
    // channel gate: shared bottleneck on global avg + max descriptors
    auto gates = ops::sigmoid(
        ops::add(bottleneck_rows(ops::global_avg_pool(x)), bottleneck_rows(ops::global_max_pool(x))));
    auto xc = ops::scale_channels(x, gates);
    // spatial gate: 7x7 conv over stacked channel mean/max maps
    const int64_t N = x.shape()[0], H = x.shape()[2], W = x.shape()[3];
    auto mean_map = ops::reshape(ops::channel_pool(xc, false), {N, H * W});
    auto max_map = ops::reshape(ops::channel_pool(xc, true), {N, H * W});
    auto stacked = ops::reshape(ops::concat_cols(mean_map, max_map), {N, 2, H, W});
    auto mask = ops::sigmoid(ops::conv2d(stacked, spatial_w_, spatial_b_, 1, 3));
    return ops::scale_spatial(xc, mask);
  }

  AttentionKind kind_ = AttentionKind::None;
  DcaBranch branch_ = DcaBranch::Dual;
  int64_t channels_ = 0;
  int64_t reduction_ = 16;
  Variable<T> w1_, b1_, w2_, b2_;
  Variable<T> spatial_w_, spatial_b_;
};

}  // namespace mcdut::attention
