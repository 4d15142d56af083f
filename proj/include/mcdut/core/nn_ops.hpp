#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "mcdut/core/autograd.hpp"
#include "mcdut/core/ops.hpp"
#include "mcdut/core/tensor.hpp"

namespace mcdut::ops {

inline int64_t conv_out_size(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline int64_t conv_transpose_out_size(int64_t in, int64_t k, int64_t stride, int64_t pad, int64_t out_pad) {
  return (in - 1) * stride - 2 * pad + k + out_pad;
}

// im2col over one sample: x (C,H,W) -> cols (C*kh*kw, Ho*Wo), zero padding.
template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t Ho, int64_t Wo, T* cols) {
  const int64_t plane = H * W;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        T* dst = cols + ((c * kh + ki) * kw + kj) * (Ho * Wo);
        for (int64_t oy = 0; oy < Ho; ++oy) {
          const int64_t iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= H) {
            std::fill(dst + oy * Wo, dst + (oy + 1) * Wo, T(0));
            continue;
          }
          const T* src_row = x + c * plane + iy * W;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const int64_t ix = ox * stride + kj - pad;
            dst[oy * Wo + ox] = (ix >= 0 && ix < W) ? src_row[ix] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds cols back into x (C,H,W).
template <typename T>
void col2im(const T* cols, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t Ho, int64_t Wo, T* x) {
  const int64_t plane = H * W;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const T* src = cols + ((c * kh + ki) * kw + kj) * (Ho * Wo);
        for (int64_t oy = 0; oy < Ho; ++oy) {
          const int64_t iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= H) continue;
          T* dst_row = x + c * plane + iy * W;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const int64_t ix = ox * stride + kj - pad;
            if (ix >= 0 && ix < W) dst_row[ix] += src[oy * Wo + ox];
          }
        }
      }
    }
  }
}

// conv2d: x (N,C,H,W), w (F,C,kh,kw), b (F) -> (N,F,Ho,Wo). Zero padding.
template <typename T>
Variable<T> conv2d(const Variable<T>& x, const Variable<T>& w, const Variable<T>& b, int64_t stride,
                   int64_t pad) {
  require(x.value().ndim() == 4, ErrorKind::InvalidInput, "conv2d: input must be (N,C,H,W)");
  require(w.value().ndim() == 4, ErrorKind::InternalConsistency, "conv2d: weight must be (F,C,kh,kw)");
  const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int64_t F = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  require(w.shape()[1] == C, ErrorKind::InvalidInput,
          "conv2d: channel mismatch, input has " + std::to_string(C) + " expected " + std::to_string(w.shape()[1]));
  require(b.value().numel() == F, ErrorKind::InternalConsistency, "conv2d: bias size mismatch");
  const int64_t Ho = conv_out_size(H, kh, stride, pad);
  const int64_t Wo = conv_out_size(W, kw, stride, pad);
  require(Ho > 0 && Wo > 0, ErrorKind::InvalidInput, "conv2d: output would be empty");

  const int64_t ckk = C * kh * kw;
  Tensor<T> out({N, F, Ho, Wo});
  Tensor<T> cols({ckk, Ho * Wo});
  for (int64_t n = 0; n < N; ++n) {
    im2col(x.value().data() + n * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo, cols.data());
    Eigen::Map<EigenMatrix<T>> y(out.data() + n * F * Ho * Wo, F, Ho * Wo);
    y.noalias() = as_matrix(w.value(), F, ckk) * as_matrix(cols, ckk, Ho * Wo);
    for (int64_t f = 0; f < F; ++f) y.row(f).array() += b.value()[f];
  }

  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  return make_node<T>(std::move(out), {x, w, b},
                      [xn, wn, bn, N, C, H, W, F, kh, kw, stride, pad, Ho, Wo, ckk](VarNode<T>& nd) {
    Tensor<T> cols({ckk, Ho * Wo});
    for (int64_t n = 0; n < N; ++n) {
      Eigen::Map<const EigenMatrix<T>> dY(nd.grad.data() + n * F * Ho * Wo, F, Ho * Wo);
      if (wn->requires_grad || bn->requires_grad) {
        im2col(xn->value.data() + n * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo, cols.data());
        if (wn->requires_grad)
          as_matrix(wn->grad_buffer(), F, ckk).noalias() += dY * as_matrix(cols, ckk, Ho * Wo).transpose();
        if (bn->requires_grad) {
          Tensor<T>& gb = bn->grad_buffer();
          for (int64_t f = 0; f < F; ++f) gb[f] += dY.row(f).sum();
        }
      }
      if (xn->requires_grad) {
        as_matrix(cols, ckk, Ho * Wo).noalias() = as_matrix(wn->value, F, ckk).transpose() * dY;
        col2im(cols.data(), C, H, W, kh, kw, stride, pad, Ho, Wo,
               xn->grad_buffer().data() + n * C * H * W);
      }
    }
  });
}

// conv_transpose2d: x (N,C,H,W), w (C,F,kh,kw), b (F) -> (N,F,Ho,Wo).
template <typename T>
Variable<T> conv_transpose2d(const Variable<T>& x, const Variable<T>& w, const Variable<T>& b,
                             int64_t stride, int64_t pad, int64_t out_pad) {
  require(x.value().ndim() == 4, ErrorKind::InvalidInput, "conv_transpose2d: input must be (N,C,H,W)");
  const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int64_t F = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
  require(w.shape()[0] == C, ErrorKind::InvalidInput, "conv_transpose2d: channel mismatch");
  require(out_pad >= 0 && out_pad < stride, ErrorKind::InvalidConfig, "conv_transpose2d: bad output padding");
  const int64_t Ho = conv_transpose_out_size(H, kh, stride, pad, out_pad);
  const int64_t Wo = conv_transpose_out_size(W, kw, stride, pad, out_pad);
  require(Ho > 0 && Wo > 0, ErrorKind::InvalidInput, "conv_transpose2d: output would be empty");

  const int64_t fkk = F * kh * kw;
  Tensor<T> out({N, F, Ho, Wo});
  Tensor<T> m({fkk, H * W});
  for (int64_t n = 0; n < N; ++n) {
    Eigen::Map<const EigenMatrix<T>> xm(x.value().data() + n * C * H * W, C, H * W);
    as_matrix(m, fkk, H * W).noalias() = as_matrix(w.value(), C, fkk).transpose() * xm;
    T* y = out.data() + n * F * Ho * Wo;
    col2im(m.data(), F, Ho, Wo, kh, kw, stride, pad, H, W, y);
    for (int64_t f = 0; f < F; ++f) {
      const T bias = b.value()[f];
      for (int64_t i = 0; i < Ho * Wo; ++i) y[f * Ho * Wo + i] += bias;
    }
  }

  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  return make_node<T>(std::move(out), {x, w, b},
                      [xn, wn, bn, N, C, H, W, F, kh, kw, stride, pad, Ho, Wo, fkk](VarNode<T>& nd) {
    Tensor<T> dm({fkk, H * W});
    for (int64_t n = 0; n < N; ++n) {
      // dM = im2col(dY) with the forward's scatter geometry.
      im2col(nd.grad.data() + n * F * Ho * Wo, F, Ho, Wo, kh, kw, stride, pad, H, W, dm.data());
      if (wn->requires_grad) {
        Eigen::Map<const EigenMatrix<T>> xm(xn->value.data() + n * C * H * W, C, H * W);
        as_matrix(wn->grad_buffer(), C, fkk).noalias() += xm * as_matrix(dm, fkk, H * W).transpose();
      }
      if (bn->requires_grad) {
        Tensor<T>& gb = bn->grad_buffer();
        const T* dy = nd.grad.data() + n * F * Ho * Wo;
        for (int64_t f = 0; f < F; ++f)
          for (int64_t i = 0; i < Ho * Wo; ++i) gb[f] += dy[f * Ho * Wo + i];
      }
      if (xn->requires_grad) {
        Eigen::Map<EigenMatrix<T>> gx(xn->grad_buffer().data() + n * C * H * W, C, H * W);
        gx.noalias() += as_matrix(wn->value, C, fkk) * as_matrix(dm, fkk, H * W);
      }
    }
  });
}

// linear: x (M,K), w (F,K), b (F) -> (M,F)
template <typename T>
Variable<T> linear(const Variable<T>& x, const Variable<T>& w, const Variable<T>& b) {
  check_matrix(x, "linear");
  check_matrix(w, "linear");
  const int64_t m = x.shape()[0], k = x.shape()[1], f = w.shape()[0];
  require(w.shape()[1] == k, ErrorKind::InternalConsistency,
          "linear: weight expects " + std::to_string(w.shape()[1]) + " features, input has " + std::to_string(k));
  require(b.value().numel() == f, ErrorKind::InternalConsistency, "linear: bias size mismatch");
  Tensor<T> out({m, f});
  as_matrix(out, m, f).noalias() = as_matrix(x.value(), m, k) * as_matrix(w.value(), f, k).transpose();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < f; ++j) out[i * f + j] += b.value()[j];
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  return make_node<T>(std::move(out), {x, w, b}, [xn, wn, bn, m, k, f](VarNode<T>& nd) {
    auto dY = as_matrix(nd.grad, m, f);
    if (xn->requires_grad)
      as_matrix(xn->grad_buffer(), m, k).noalias() += dY * as_matrix(wn->value, f, k);
    if (wn->requires_grad)
      as_matrix(wn->grad_buffer(), f, k).noalias() += dY.transpose() * as_matrix(xn->value, m, k);
    if (bn->requires_grad) {
      Tensor<T>& gb = bn->grad_buffer();
      for (int64_t j = 0; j < f; ++j) gb[j] += dY.col(j).sum();
    }
  });
}

template <typename T>
Variable<T> reflection_pad2d(const Variable<T>& x, int64_t p) {
  require(x.value().ndim() == 4, ErrorKind::InvalidInput, "reflection_pad2d: input must be (N,C,H,W)");
  const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  require(p >= 0 && p < H && p < W, ErrorKind::InvalidInput, "reflection_pad2d: pad too large for input");
  const int64_t Ho = H + 2 * p, Wo = W + 2 * p;
  auto reflect = [](int64_t i, int64_t n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
  };
  Tensor<T> out({N, C, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* src = x.value().data() + (n * C + c) * H * W;
      T* dst = out.data() + (n * C + c) * Ho * Wo;
      for (int64_t i = 0; i < Ho; ++i) {
        const int64_t si = reflect(i - p, H);
        for (int64_t j = 0; j < Wo; ++j) dst[i * Wo + j] = src[si * W + reflect(j - p, W)];
      }
    }
  auto xn = x.node();
  return make_node<T>(std::move(out), {x}, [xn, N, C, H, W, p, Ho, Wo, reflect](VarNode<T>& nd) {
    Tensor<T>& g = xn->grad_buffer();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        T* dst = g.data() + (n * C + c) * H * W;
        const T* src = nd.grad.data() + (n * C + c) * Ho * Wo;
        for (int64_t i = 0; i < Ho; ++i) {
          const int64_t si = reflect(i - p, H);
          for (int64_t j = 0; j < Wo; ++j) dst[si * W + reflect(j - p, W)] += src[i * Wo + j];
        }
      }
  });
}

// Instance normalization without affine parameters: each (n,c) plane is
// standardized over its spatial extent.
template <typename T>
Variable<T> instance_norm2d(const Variable<T>& x, T eps = T(1e-5)) {
  require(x.value().ndim() == 4, ErrorKind::InvalidInput, "instance_norm2d: input must be (N,C,H,W)");
  const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int64_t m = H * W;
  require(m >= 1, ErrorKind::InvalidInput, "instance_norm2d: empty spatial extent");
  Tensor<T> out({N, C, H, W});
  auto istds = std::make_shared<std::vector<T>>(static_cast<size_t>(N * C));
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = x.value().data() + nc * m;
    T mu = T(0);
    for (int64_t i = 0; i < m; ++i) mu += src[i];
    mu /= static_cast<T>(m);
    T var = T(0);
    for (int64_t i = 0; i < m; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<T>(m);
    const T istd = T(1) / std::sqrt(var + eps);
    (*istds)[static_cast<size_t>(nc)] = istd;
    T* dst = out.data() + nc * m;
    for (int64_t i = 0; i < m; ++i) dst[i] = (src[i] - mu) * istd;
  }
  auto xn = x.node();
  return make_node<T>(std::move(out), {x}, [xn, istds, N, C, m](VarNode<T>& nd) {
    Tensor<T>& g = xn->grad_buffer();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      const T* dy = nd.grad.data() + nc * m;
      const T* y = nd.value.data() + nc * m;
      const T istd = (*istds)[static_cast<size_t>(nc)];
      T mean_dy = T(0), mean_dyy = T(0);
      for (int64_t i = 0; i < m; ++i) {
        mean_dy += dy[i];
        mean_dyy += dy[i] * y[i];
      }
      mean_dy /= static_cast<T>(m);
      mean_dyy /= static_cast<T>(m);
      T* dst = g.data() + nc * m;
      for (int64_t i = 0; i < m; ++i) dst[i] += istd * (dy[i] - mean_dy - y[i] * mean_dyy);
    }
  });
}

// Directional pooling. over_width=true reduces W giving (N,C,H) ("row" pools);
// over_width=false reduces H giving (N,C,W) ("column" pools).
template <typename T>
Variable<T> dir_pool(const Variable<T>& x, bool over_width, bool max_mode) {
  require(x.value().ndim() == 4, ErrorKind::InvalidInput, "dir_pool: input must be (N,C,H,W)");
  const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  require(H >= 1 && W >= 1, ErrorKind::InvalidInput, "dir_pool: empty spatial dims");
  const int64_t keep = over_width ? H : W;
  const int64_t red = over_width ? W : H;
  Tensor<T> out({N, C, keep});
  auto argmax = max_mode ? std::make_shared<std::vector<int64_t>>(static_cast<size_t>(N * C * keep))
                         : nullptr;
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = x.value().data() + nc * H * W;
    T* dst = out.data() + nc * keep;
    for (int64_t i = 0; i < keep; ++i) {
      auto idx = [&](int64_t r) { return over_width ? i * W + r : r * W + i; };
      if (max_mode) {
        T best = src[idx(0)];
        int64_t bi = 0;
        for (int64_t r = 1; r < red; ++r)
          if (src[idx(r)] > best) {
            best = src[idx(r)];
            bi = r;
          }
        dst[i] = best;
        (*argmax)[static_cast<size_t>(nc * keep + i)] = bi;
      } else {
        T s = T(0);
        for (int64_t r = 0; r < red; ++r) s += src[idx(r)];
        dst[i] = s / static_cast<T>(red);
      }
    }
  }
  auto xn = x.node();
  return make_node<T>(std::move(out), {x},
                      [xn, argmax, over_width, max_mode, N, C, H, W, keep, red](VarNode<T>& nd) {
    Tensor<T>& g = xn->grad_buffer();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      const T* dy = nd.grad.data() + nc * keep;
      T* dst = g.data() + nc * H * W;
      for (int64_t i = 0; i < keep; ++i) {
        auto idx = [&](int64_t r) { return over_width ? i * W + r : r * W + i; };
        if (max_mode) {
          dst[idx((*argmax)[static_cast<size_t>(nc * keep + i)])] += dy[i];
        } else {
          const T share = dy[i] / static_cast<T>(red);
          for (int64_t r = 0; r < red; ++r) dst[idx(r)] += share;
        }
      }
    }
  });
}

// Pool across the channel axis: (N,C,H,W) -> (N,1,H,W).
template <typename T>
Variable<T> channel_pool(const Variable<T>& x, bool max_mode) {
  require(x.value().ndim() == 4, ErrorKind::InvalidInput, "channel_pool: input must be (N,C,H,W)");
  const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int64_t plane = H * W;
  Tensor<T> out({N, 1, H, W});
  auto argmax = max_mode ? std::make_shared<std::vector<int64_t>>(static_cast<size_t>(N * plane)) : nullptr;
  for (int64_t n = 0; n < N; ++n) {
    const T* src = x.value().data() + n * C * plane;
    T* dst = out.data() + n * plane;
    for (int64_t i = 0; i < plane; ++i) {
      if (max_mode) {
        T best = src[i];
        int64_t bc = 0;
        for (int64_t c = 1; c < C; ++c)
          if (src[c * plane + i] > best) {
            best = src[c * plane + i];
            bc = c;
          }
        dst[i] = best;
        (*argmax)[static_cast<size_t>(n * plane + i)] = bc;
      } else {
        T s = T(0);
        for (int64_t c = 0; c < C; ++c) s += src[c * plane + i];
        dst[i] = s / static_cast<T>(C);
      }
    }
  }
  auto xn = x.node();
  return make_node<T>(std::move(out), {x}, [xn, argmax, max_mode, N, C, plane](VarNode<T>& nd) {
    Tensor<T>& g = xn->grad_buffer();
    for (int64_t n = 0; n < N; ++n) {
      const T* dy = nd.grad.data() + n * plane;
      T* dst = g.data() + n * C * plane;
      for (int64_t i = 0; i < plane; ++i) {
        if (max_mode) {
          dst[(*argmax)[static_cast<size_t>(n * plane + i)] * plane + i] += dy[i];
        } else {
          const T share = dy[i] / static_cast<T>(C);
          for (int64_t c = 0; c < C; ++c) dst[c * plane + i] += share;
        }
      }
    }
  });
}

template <typename T>
Variable<T> global_max_pool(const Variable<T>& x) {
  require(x.value().ndim() == 4, ErrorKind::InvalidInput, "global_max_pool: input must be (N,C,H,W)");
  const int64_t N = x.shape()[0], C = x.shape()[1], m = x.shape()[2] * x.shape()[3];
  require(m >= 1, ErrorKind::InvalidInput, "global_max_pool: empty spatial extent");
  Tensor<T> out({N, C});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(N * C));
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = x.value().data() + nc * m;
    T best = src[0];
    int64_t bi = 0;
    for (int64_t i = 1; i < m; ++i)
      if (src[i] > best) {
        best = src[i];
        bi = i;
      }
    out[nc] = best;
    (*argmax)[static_cast<size_t>(nc)] = bi;
  }
  auto xn = x.node();
  return make_node<T>(std::move(out), {x}, [xn, argmax, N, C, m](VarNode<T>& nd) {
    Tensor<T>& g = xn->grad_buffer();
    for (int64_t nc = 0; nc < N * C; ++nc)
      g[nc * m + (*argmax)[static_cast<size_t>(nc)]] += nd.grad[nc];
  });
}

template <typename T>
Variable<T> global_avg_pool(const Variable<T>& x) {
  require(x.value().ndim() == 4, ErrorKind::InvalidInput, "global_avg_pool: input must be (N,C,H,W)");
  const int64_t N = x.shape()[0], C = x.shape()[1], m = x.shape()[2] * x.shape()[3];
  Tensor<T> out({N, C});
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = x.value().data() + nc * m;
    T s = T(0);
    for (int64_t i = 0; i < m; ++i) s += src[i];
    out[nc] = s / static_cast<T>(m);
  }
  auto xn = x.node();
  return make_node<T>(std::move(out), {x}, [xn, N, C, m](VarNode<T>& nd) {
    Tensor<T>& g = xn->grad_buffer();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      const T share = nd.grad[nc] / static_cast<T>(m);
      T* dst = g.data() + nc * m;
      for (int64_t i = 0; i < m; ++i) dst[i] += share;
    }
  });
}

// out[n,c,h,w] = x[n,c,h,w] * gate[n,c]
template <typename T>
Variable<T> scale_channels(const Variable<T>& x, const Variable<T>& gate) {
  require(x.value().ndim() == 4, ErrorKind::InvalidInput, "scale_channels: input must be (N,C,H,W)");
  const int64_t N = x.shape()[0], C = x.shape()[1], m = x.shape()[2] * x.shape()[3];
  require(gate.value().ndim() == 2 && gate.shape()[0] == N && gate.shape()[1] == C,
          ErrorKind::InvalidConfig, "scale_channels: gate must be (N,C) matching input channels");
  Tensor<T> out = x.value();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T gs = gate.value()[nc];
    T* dst = out.data() + nc * m;
    for (int64_t i = 0; i < m; ++i) dst[i] *= gs;
  }
  auto xn = x.node();
  auto gn = gate.node();
  return make_node<T>(std::move(out), {x, gate}, [xn, gn, N, C, m](VarNode<T>& nd) {
    if (xn->requires_grad) {
      Tensor<T>& g = xn->grad_buffer();
      for (int64_t nc = 0; nc < N * C; ++nc) {
        const T gs = gn->value[nc];
        const T* dy = nd.grad.data() + nc * m;
        T* dst = g.data() + nc * m;
        for (int64_t i = 0; i < m; ++i) dst[i] += dy[i] * gs;
      }
    }
    if (gn->requires_grad) {
      Tensor<T>& g = gn->grad_buffer();
      for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* dy = nd.grad.data() + nc * m;
        const T* xv = xn->value.data() + nc * m;
        T s = T(0);
        for (int64_t i = 0; i < m; ++i) s += dy[i] * xv[i];
        g[nc] += s;
      }
    }
  });
}

// out[n,c,h,w] = x[n,c,h,w] * mask[n,0,h,w]
template <typename T>
Variable<T> scale_spatial(const Variable<T>& x, const Variable<T>& mask) {
  require(x.value().ndim() == 4 && mask.value().ndim() == 4, ErrorKind::InvalidInput,
          "scale_spatial: inputs must be (N,C,H,W)");
  const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  require(mask.shape()[0] == N && mask.shape()[1] == 1 && mask.shape()[2] == H && mask.shape()[3] == W,
          ErrorKind::InternalConsistency, "scale_spatial: mask must be (N,1,H,W)");
  const int64_t plane = H * W;
  Tensor<T> out = x.value();
  for (int64_t n = 0; n < N; ++n) {
    const T* ms = mask.value().data() + n * plane;
    for (int64_t c = 0; c < C; ++c) {
      T* dst = out.data() + (n * C + c) * plane;
      for (int64_t i = 0; i < plane; ++i) dst[i] *= ms[i];
    }
  }
  auto xn = x.node();
  auto mn = mask.node();
  return make_node<T>(std::move(out), {x, mask}, [xn, mn, N, C, plane](VarNode<T>& nd) {
    if (xn->requires_grad) {
      Tensor<T>& g = xn->grad_buffer();
      for (int64_t n = 0; n < N; ++n) {
        const T* ms = mn->value.data() + n * plane;
        for (int64_t c = 0; c < C; ++c) {
          const T* dy = nd.grad.data() + (n * C + c) * plane;
          T* dst = g.data() + (n * C + c) * plane;
          for (int64_t i = 0; i < plane; ++i) dst[i] += dy[i] * ms[i];
        }
      }
    }
    if (mn->requires_grad) {
      Tensor<T>& g = mn->grad_buffer();
      for (int64_t n = 0; n < N; ++n) {
        T* dst = g.data() + n * plane;
        for (int64_t c = 0; c < C; ++c) {
          const T* dy = nd.grad.data() + (n * C + c) * plane;
          const T* xv = xn->value.data() + (n * C + c) * plane;
          for (int64_t i = 0; i < plane; ++i) dst[i] += dy[i] * xv[i];
        }
      }
    }
  });
}

// Gathers feature vectors at flattened spatial ids of one sample:
// (N,C,H,W), n, ids(S) -> (S, C).
template <typename T>
Variable<T> gather_patches(const Variable<T>& x, int64_t n, std::vector<int64_t> ids) {
  require(x.value().ndim() == 4, ErrorKind::InvalidInput, "gather_patches: input must be (N,C,H,W)");
  const int64_t N = x.shape()[0], C = x.shape()[1], plane = x.shape()[2] * x.shape()[3];
  require(n >= 0 && n < N, ErrorKind::InternalConsistency, "gather_patches: sample index out of range");
  const int64_t S = static_cast<int64_t>(ids.size());
  Tensor<T> out({S, C});
  const T* base = x.value().data() + n * C * plane;
  for (int64_t s = 0; s < S; ++s) {
    const int64_t pos = ids[static_cast<size_t>(s)];
    require(pos >= 0 && pos < plane, ErrorKind::InternalConsistency,
            "gather_patches: spatial index " + std::to_string(pos) + " out of range");
    for (int64_t c = 0; c < C; ++c) out[s * C + c] = base[c * plane + pos];
  }
  auto xn = x.node();
  auto pids = std::make_shared<std::vector<int64_t>>(std::move(ids));
  return make_node<T>(std::move(out), {x}, [xn, pids, n, C, plane](VarNode<T>& nd) {
    Tensor<T>& g = xn->grad_buffer();
    T* base = g.data() + n * C * plane;
    for (size_t s = 0; s < pids->size(); ++s) {
      const int64_t pos = (*pids)[s];
      for (int64_t c = 0; c < C; ++c) base[c * plane + pos] += nd.grad[static_cast<int64_t>(s) * C + c];
    }
  });
}

// (N,C,P) -> (N*P, C); positions become rows so a dense layer can be applied
// per position.
template <typename T>
Variable<T> positions_to_rows(const Variable<T>& x) {
  require(x.value().ndim() == 3, ErrorKind::InternalConsistency, "positions_to_rows: input must be (N,C,P)");
  const int64_t N = x.shape()[0], C = x.shape()[1], P = x.shape()[2];
  Tensor<T> out({N * P, C});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t p = 0; p < P; ++p) out[(n * P + p) * C + c] = x.value()[(n * C + c) * P + p];
  auto xn = x.node();
  return make_node<T>(std::move(out), {x}, [xn, N, C, P](VarNode<T>& nd) {
    Tensor<T>& g = xn->grad_buffer();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t p = 0; p < P; ++p) g[(n * C + c) * P + p] += nd.grad[(n * P + p) * C + c];
  });
}

}  // namespace mcdut::ops
