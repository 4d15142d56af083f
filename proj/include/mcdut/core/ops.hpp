#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "mcdut/core/autograd.hpp"
#include "mcdut/core/tensor.hpp"

namespace mcdut::ops {

template <typename T>
void check_same_shape(const Variable<T>& a, const Variable<T>& b, const char* what) {
  require(a.value().same_shape(b.value()), ErrorKind::InternalConsistency,
          std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Variable<T> add(const Variable<T>& a, const Variable<T>& b) {
  check_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  const T* pb = b.value().data();
  T* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] += pb[i];
  auto an = a.node();
  auto bn = b.node();
  return make_node<T>(std::move(out), {a, b}, [an, bn](VarNode<T>& n) {
    if (an->requires_grad) an->accum_grad(n.grad);
    if (bn->requires_grad) bn->accum_grad(n.grad);
  });
}

template <typename T>
Variable<T> sub(const Variable<T>& a, const Variable<T>& b) {
  check_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  const T* pb = b.value().data();
  T* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] -= pb[i];
  auto an = a.node();
  auto bn = b.node();
  return make_node<T>(std::move(out), {a, b}, [an, bn](VarNode<T>& n) {
    if (an->requires_grad) an->accum_grad(n.grad);
    if (bn->requires_grad) {
      Tensor<T>& g = bn->grad_buffer();
      const T* src = n.grad.data();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= src[i];
    }
  });
}

template <typename T>
Variable<T> mul(const Variable<T>& a, const Variable<T>& b) {
  check_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  const T* pb = b.value().data();
  T* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] *= pb[i];
  auto an = a.node();
  auto bn = b.node();
  return make_node<T>(std::move(out), {a, b}, [an, bn](VarNode<T>& n) {
    if (an->requires_grad) {
      Tensor<T>& g = an->grad_buffer();
      const T* src = n.grad.data();
      const T* vb = bn->value.data();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += src[i] * vb[i];
    }
    if (bn->requires_grad) {
      Tensor<T>& g = bn->grad_buffer();
      const T* src = n.grad.data();
      const T* va = an->value.data();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += src[i] * va[i];
    }
  });
}

template <typename T>
Variable<T> mul_scalar(const Variable<T>& a, T c) {
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
  auto an = a.node();
  return make_node<T>(std::move(out), {a}, [an, c](VarNode<T>& n) {
    Tensor<T>& g = an->grad_buffer();
    const T* src = n.grad.data();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += c * src[i];
  });
}

template <typename T>
Variable<T> add_scalar(const Variable<T>& a, T c) {
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += c;
  auto an = a.node();
  return make_node<T>(std::move(out), {a},
                      [an](VarNode<T>& n) { an->accum_grad(n.grad); });
}

// c - a, elementwise.
template <typename T>
Variable<T> rsub_scalar(T c, const Variable<T>& a) {
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = c - out[i];
  auto an = a.node();
  return make_node<T>(std::move(out), {a}, [an](VarNode<T>& n) {
    Tensor<T>& g = an->grad_buffer();
    const T* src = n.grad.data();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] -= src[i];
  });
}

template <typename T>
Variable<T> neg(const Variable<T>& a) {
  return mul_scalar(a, T(-1));
}

template <typename T>
Variable<T> relu(const Variable<T>& a) {
  Tensor<T> out = a.value();
  // x * 0 keeps NaN propagating instead of flushing it to zero
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > T(0) ? out[i] : out[i] * T(0);
  auto an = a.node();
  return make_node<T>(std::move(out), {a}, [an](VarNode<T>& n) {
    Tensor<T>& g = an->grad_buffer();
    const T* src = n.grad.data();
    const T* x = an->value.data();
    for (int64_t i = 0; i < g.numel(); ++i)
      if (x[i] > T(0)) g[i] += src[i];
  });
}

template <typename T>
Variable<T> leaky_relu(const Variable<T>& a, T slope) {
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > T(0) ? out[i] : slope * out[i];
  auto an = a.node();
  return make_node<T>(std::move(out), {a}, [an, slope](VarNode<T>& n) {
    Tensor<T>& g = an->grad_buffer();
    const T* src = n.grad.data();
    const T* x = an->value.data();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += (x[i] > T(0) ? T(1) : slope) * src[i];
  });
}

template <typename T>
Variable<T> tanh_op(const Variable<T>& a) {
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  auto an = a.node();
  return make_node<T>(std::move(out), {a}, [an](VarNode<T>& n) {
    Tensor<T>& g = an->grad_buffer();
    const T* src = n.grad.data();
    const T* y = n.value.data();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += (T(1) - y[i] * y[i]) * src[i];
  });
}

template <typename T>
T sigmoid_scalar(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <typename T>
Variable<T> sigmoid(const Variable<T>& a) {
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = sigmoid_scalar(out[i]);
  auto an = a.node();
  return make_node<T>(std::move(out), {a}, [an](VarNode<T>& n) {
    Tensor<T>& g = an->grad_buffer();
    const T* src = n.grad.data();
    const T* y = n.value.data();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += y[i] * (T(1) - y[i]) * src[i];
  });
}

// log(1 + exp(x)), overflow-safe.
template <typename T>
Variable<T> softplus(const Variable<T>& a) {
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) {
    const T x = out[i];
    out[i] = std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
  }
  auto an = a.node();
  return make_node<T>(std::move(out), {a}, [an](VarNode<T>& n) {
    Tensor<T>& g = an->grad_buffer();
    const T* src = n.grad.data();
    const T* x = an->value.data();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += sigmoid_scalar(x[i]) * src[i];
  });
}

template <typename T>
Variable<T> abs_op(const Variable<T>& a) {
  Tensor<T> out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::abs(out[i]);
  auto an = a.node();
  return make_node<T>(std::move(out), {a}, [an](VarNode<T>& n) {
    Tensor<T>& g = an->grad_buffer();
    const T* src = n.grad.data();
    const T* x = an->value.data();
    for (int64_t i = 0; i < g.numel(); ++i)
      g[i] += (x[i] > T(0) ? src[i] : (x[i] < T(0) ? -src[i] : T(0)));
  });
}

// ---------------------------------------------------------------------------
// reductions / shape
// ---------------------------------------------------------------------------

template <typename T>
Variable<T> sum(const Variable<T>& a) {
  Tensor<T> out = Tensor<T>::scalar(a.value().sum());
  auto an = a.node();
  return make_node<T>(std::move(out), {a}, [an](VarNode<T>& n) {
    Tensor<T>& g = an->grad_buffer();
    const T s = n.grad[0];
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += s;
  });
}

template <typename T>
Variable<T> mean(const Variable<T>& a) {
  require(a.value().numel() > 0, ErrorKind::InvalidInput, "mean of empty tensor");
  const T inv = T(1) / static_cast<T>(a.value().numel());
  return mul_scalar(sum(a), inv);
}

template <typename T>
Variable<T> reshape(const Variable<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(shape);
  auto an = a.node();
  Shape orig = a.shape();
  return make_node<T>(std::move(out), {a}, [an, orig](VarNode<T>& n) {
    an->accum_grad(n.grad.reshaped(orig));
  });
}

// ---------------------------------------------------------------------------
// matrix ops (2-D variables)
// ---------------------------------------------------------------------------

template <typename T>
void check_matrix(const Variable<T>& a, const char* what) {
  require(a.value().ndim() == 2, ErrorKind::InternalConsistency, std::string(what) + ": expected matrix");
}

template <typename T>
Variable<T> matmul(const Variable<T>& a, const Variable<T>& b) {
  check_matrix(a, "matmul");
  check_matrix(b, "matmul");
  const int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  require(b.shape()[0] == k, ErrorKind::InternalConsistency, "matmul: inner dimension mismatch");
  Tensor<T> out({m, n});
  as_matrix(out, m, n).noalias() = as_matrix(a.value(), m, k) * as_matrix(b.value(), k, n);
  auto an = a.node();
  auto bn = b.node();
  return make_node<T>(std::move(out), {a, b}, [an, bn, m, k, n](VarNode<T>& nd) {
    auto dY = as_matrix(nd.grad, m, n);
    if (an->requires_grad)
      as_matrix(an->grad_buffer(), m, k).noalias() += dY * as_matrix(bn->value, k, n).transpose();
    if (bn->requires_grad)
      as_matrix(bn->grad_buffer(), k, n).noalias() += as_matrix(an->value, m, k).transpose() * dY;
  });
}

// a (m,k) x b (n,k)^T -> (m,n)
template <typename T>
Variable<T> matmul_nt(const Variable<T>& a, const Variable<T>& b) {
  check_matrix(a, "matmul_nt");
  check_matrix(b, "matmul_nt");
  const int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  require(b.shape()[1] == k, ErrorKind::InternalConsistency, "matmul_nt: inner dimension mismatch");
  Tensor<T> out({m, n});
  as_matrix(out, m, n).noalias() = as_matrix(a.value(), m, k) * as_matrix(b.value(), n, k).transpose();
  auto an = a.node();
  auto bn = b.node();
  return make_node<T>(std::move(out), {a, b}, [an, bn, m, k, n](VarNode<T>& nd) {
    auto dY = as_matrix(nd.grad, m, n);
    if (an->requires_grad)
      as_matrix(an->grad_buffer(), m, k).noalias() += dY * as_matrix(bn->value, n, k);
    if (bn->requires_grad)
      as_matrix(bn->grad_buffer(), n, k).noalias() += dY.transpose() * as_matrix(an->value, m, k);
  });
}

// per-row dot product: (m,k),(m,k) -> (m,1)
template <typename T>
Variable<T> rowwise_dot(const Variable<T>& a, const Variable<T>& b) {
  check_same_shape(a, b, "rowwise_dot");
  check_matrix(a, "rowwise_dot");
  const int64_t m = a.shape()[0], k = a.shape()[1];
  Tensor<T> out({m, 1});
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  for (int64_t i = 0; i < m; ++i) {
    T s = T(0);
    for (int64_t j = 0; j < k; ++j) s += pa[i * k + j] * pb[i * k + j];
    out[i] = s;
  }
  auto an = a.node();
  auto bn = b.node();
  return make_node<T>(std::move(out), {a, b}, [an, bn, m, k](VarNode<T>& nd) {
    const T* dg = nd.grad.data();
    if (an->requires_grad) {
      Tensor<T>& g = an->grad_buffer();
      const T* vb = bn->value.data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < k; ++j) g[i * k + j] += dg[i] * vb[i * k + j];
    }
    if (bn->requires_grad) {
      Tensor<T>& g = bn->grad_buffer();
      const T* va = an->value.data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < k; ++j) g[i * k + j] += dg[i] * va[i * k + j];
    }
  });
}

// y = x / ||x||_2 per row. Near-zero rows are a contract violation.
template <typename T>
Variable<T> row_l2_normalize(const Variable<T>& a, T eps = T(1e-12)) {
  check_matrix(a, "row_l2_normalize");
  const int64_t m = a.shape()[0], k = a.shape()[1];
  Tensor<T> out = a.value();
  auto norms = std::make_shared<std::vector<T>>(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) {
    T s = T(0);
    for (int64_t j = 0; j < k; ++j) s += out[i * k + j] * out[i * k + j];
    const T nrm = std::sqrt(s);
    require(nrm > eps, ErrorKind::DegenerateInput,
            "l2 normalization of a near-zero vector (row " + std::to_string(i) + ")");
    (*norms)[static_cast<size_t>(i)] = nrm;
    for (int64_t j = 0; j < k; ++j) out[i * k + j] /= nrm;
  }
  auto an = a.node();
  return make_node<T>(std::move(out), {a}, [an, norms, m, k](VarNode<T>& nd) {
    Tensor<T>& g = an->grad_buffer();
    const T* dy = nd.grad.data();
    const T* y = nd.value.data();
    for (int64_t i = 0; i < m; ++i) {
      T dot = T(0);
      for (int64_t j = 0; j < k; ++j) dot += y[i * k + j] * dy[i * k + j];
      const T inv = T(1) / (*norms)[static_cast<size_t>(i)];
      for (int64_t j = 0; j < k; ++j) g[i * k + j] += (dy[i * k + j] - y[i * k + j] * dot) * inv;
    }
  });
}

template <typename T>
Variable<T> gather_rows(const Variable<T>& a, std::vector<int64_t> idx) {
  check_matrix(a, "gather_rows");
  const int64_t m = a.shape()[0], k = a.shape()[1];
  const int64_t s = static_cast<int64_t>(idx.size());
  Tensor<T> out({s, k});
  const T* pa = a.value().data();
  for (int64_t i = 0; i < s; ++i) {
    const int64_t r = idx[static_cast<size_t>(i)];
    require(r >= 0 && r < m, ErrorKind::InternalConsistency, "gather_rows: row index out of range");
    std::copy(pa + r * k, pa + (r + 1) * k, out.data() + i * k);
  }
  auto an = a.node();
  auto ids = std::make_shared<std::vector<int64_t>>(std::move(idx));
  return make_node<T>(std::move(out), {a}, [an, ids, k](VarNode<T>& nd) {
    Tensor<T>& g = an->grad_buffer();
    const T* dy = nd.grad.data();
    for (size_t i = 0; i < ids->size(); ++i) {
      const int64_t r = (*ids)[i];
      for (int64_t j = 0; j < k; ++j) g[r * k + j] += dy[static_cast<int64_t>(i) * k + j];
    }
  });
}

// log(sum(exp(row))) per row, max-shifted: (m,n) -> (m,1)
template <typename T>
Variable<T> lse_rows(const Variable<T>& a) {
  check_matrix(a, "lse_rows");
  const int64_t m = a.shape()[0], n = a.shape()[1];
  require(n >= 1, ErrorKind::InvalidInput, "lse_rows: empty rows");
  Tensor<T> out({m, 1});
  const T* pa = a.value().data();
  for (int64_t i = 0; i < m; ++i) {
    T mx = pa[i * n];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, pa[i * n + j]);
    T s = T(0);
    for (int64_t j = 0; j < n; ++j) s += std::exp(pa[i * n + j] - mx);
    out[i] = mx + std::log(s);
  }
  auto an = a.node();
  return make_node<T>(std::move(out), {a}, [an, m, n](VarNode<T>& nd) {
    Tensor<T>& g = an->grad_buffer();
    const T* dy = nd.grad.data();
    const T* x = an->value.data();
    const T* l = nd.value.data();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) g[i * n + j] += std::exp(x[i * n + j] - l[i]) * dy[i];
  });
}

template <typename T>
Variable<T> concat_cols(const Variable<T>& a, const Variable<T>& b) {
  check_matrix(a, "concat_cols");
  check_matrix(b, "concat_cols");
  const int64_t m = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  require(b.shape()[0] == m, ErrorKind::InternalConsistency, "concat_cols: row count mismatch");
  Tensor<T> out({m, ca + cb});
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  for (int64_t i = 0; i < m; ++i) {
    std::copy(pa + i * ca, pa + (i + 1) * ca, out.data() + i * (ca + cb));
    std::copy(pb + i * cb, pb + (i + 1) * cb, out.data() + i * (ca + cb) + ca);
  }
  auto an = a.node();
  auto bn = b.node();
  return make_node<T>(std::move(out), {a, b}, [an, bn, m, ca, cb](VarNode<T>& nd) {
    const T* dy = nd.grad.data();
    if (an->requires_grad) {
      Tensor<T>& g = an->grad_buffer();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < ca; ++j) g[i * ca + j] += dy[i * (ca + cb) + j];
    }
    if (bn->requires_grad) {
      Tensor<T>& g = bn->grad_buffer();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < cb; ++j) g[i * cb + j] += dy[i * (ca + cb) + ca + j];
    }
  });
}

template <typename T>
Variable<T> concat_rows(const std::vector<Variable<T>>& parts) {
  require(!parts.empty(), ErrorKind::InternalConsistency, "concat_rows: no inputs");
  const int64_t k = parts[0].shape()[1];
  int64_t rows = 0;
  for (const auto& p : parts) {
    check_matrix(p, "concat_rows");
    require(p.shape()[1] == k, ErrorKind::InternalConsistency, "concat_rows: column count mismatch");
    rows += p.shape()[0];
  }
  Tensor<T> out({rows, k});
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().numel(), out.data() + off);
    off += p.value().numel();
  }
  std::vector<std::shared_ptr<VarNode<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_node<T>(std::move(out), parts, [nodes](VarNode<T>& nd) {
    int64_t off = 0;
    for (auto& pn : nodes) {
      const int64_t n = pn->value.numel();
      if (pn->requires_grad) {
        Tensor<T>& g = pn->grad_buffer();
        const T* src = nd.grad.data() + off;
        for (int64_t i = 0; i < n; ++i) g[i] += src[i];
      }
      off += n;
    }
  });
}

template <typename T>
Variable<T> transpose2d(const Variable<T>& a) {
  check_matrix(a, "transpose2d");
  const int64_t m = a.shape()[0], n = a.shape()[1];
  Tensor<T> out({n, m});
  as_matrix(out, n, m) = as_matrix(a.value(), m, n).transpose();
  auto an = a.node();
  return make_node<T>(std::move(out), {a}, [an, m, n](VarNode<T>& nd) {
    as_matrix(an->grad_buffer(), m, n) += as_matrix(nd.grad, n, m).transpose();
  });
}

// (N*P, C) -> (N, C): mean over each block of P consecutive rows.
template <typename T>
Variable<T> block_row_mean(const Variable<T>& a, int64_t blocks) {
  check_matrix(a, "block_row_mean");
  const int64_t rows = a.shape()[0], c = a.shape()[1];
  require(blocks > 0 && rows % blocks == 0, ErrorKind::InternalConsistency, "block_row_mean: block mismatch");
  const int64_t p = rows / blocks;
  Tensor<T> out({blocks, c});
  const T* pa = a.value().data();
  for (int64_t b = 0; b < blocks; ++b)
    for (int64_t i = 0; i < p; ++i)
      for (int64_t j = 0; j < c; ++j) out[b * c + j] += pa[(b * p + i) * c + j];
  const T inv = T(1) / static_cast<T>(p);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= inv;
  auto an = a.node();
  return make_node<T>(std::move(out), {a}, [an, blocks, p, c, inv](VarNode<T>& nd) {
    Tensor<T>& g = an->grad_buffer();
    const T* dy = nd.grad.data();
    for (int64_t b = 0; b < blocks; ++b)
      for (int64_t i = 0; i < p; ++i)
        for (int64_t j = 0; j < c; ++j) g[(b * p + i) * c + j] += dy[b * c + j] * inv;
  });
}

}  // namespace mcdut::ops
