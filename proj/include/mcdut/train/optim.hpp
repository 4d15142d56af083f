#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mcdut/core/autograd.hpp"

namespace mcdut::train {

// Adam over a fixed parameter list. Parameters that received no gradient in
// a step keep their moment state untouched.
template <typename T>
class Adam {
 public:
  Adam() = default;

  Adam(std::vector<Variable<T>> params, double beta1, double beta2, double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.push_back(Tensor<T>::zeros(p.value().shape()));
      v_.push_back(Tensor<T>::zeros(p.value().shape()));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].has_grad()) continue;
      const Tensor<T>& g = params_[i].grad();
      Tensor<T>& val = params_[i].mutable_value();
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (int64_t j = 0; j < val.numel(); ++j) {
        m[j] = T(beta1_) * m[j] + T(1.0 - beta1_) * g[j];
        v[j] = T(beta2_) * v[j] + T(1.0 - beta2_) * g[j] * g[j];
        const double mhat = static_cast<double>(m[j]) / bc1;
        const double vhat = static_cast<double>(v[j]) / bc2;
        val[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  uint64_t steps_taken() const { return t_; }
  size_t num_params() const { return params_.size(); }
  const Tensor<T>& moment1(size_t i) const { return m_[i]; }
  const Tensor<T>& moment2(size_t i) const { return v_[i]; }
  Tensor<T>& moment1(size_t i) { return m_[i]; }
  Tensor<T>& moment2(size_t i) { return v_[i]; }
  void set_steps_taken(uint64_t t) { t_ = t; }

 private:
  std::vector<Variable<T>> params_;
  std::vector<Tensor<T>> m_, v_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  uint64_t t_ = 0;
};

}  // namespace mcdut::train
