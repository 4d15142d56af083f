#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mcdut/core/autograd.hpp"
#include "mcdut/core/ops.hpp"
#include "mcdut/sampling/multicrop.hpp"

namespace mcdut::losses {

// One query against its positive and a shared negative pool, all unit-norm,
// same embedding width.
template <typename T>
struct PatchBundle {
  Tensor<T> query;      // (K)
  Tensor<T> positive;   // (K)
  Tensor<T> negatives;  // (N, K)

  void validate() const {
    require(query.ndim() == 1 && positive.ndim() == 1 && negatives.ndim() == 2,
            ErrorKind::InvalidInput, "patch bundle: expected (K),(K),(N,K)");
    const int64_t k = query.numel();
    require(positive.numel() == k && negatives.dim(1) == k, ErrorKind::InternalConsistency,
            "patch bundle: embedding width mismatch");
    auto check_unit = [k](const T* v, const std::string& who) {
      T s = T(0);
      for (int64_t i = 0; i < k; ++i) s += v[i] * v[i];
      require(std::abs(std::sqrt(static_cast<double>(s)) - 1.0) <= 1e-5, ErrorKind::InvalidInput,
              "patch bundle: " + who + " is not unit-norm");
    };
    check_unit(query.data(), "query");
    check_unit(positive.data(), "positive");
    for (int64_t n = 0; n < negatives.dim(0); ++n)
      check_unit(negatives.data() + n * k, "negative " + std::to_string(n));
  }
};

struct LossWeights {
  double lambda_gan = 1.0;
  double lambda_nce = 1.0;
  double lambda_dom = 10.0;
  double lambda_ide = 1.0;
  double tau = 0.07;

  void validate() const {
    require(lambda_gan >= 0 && lambda_nce >= 0 && lambda_dom >= 0 && lambda_ide >= 0,
            ErrorKind::InvalidConfig, "loss weights must be nonnegative");
    require(tau > 0, ErrorKind::InvalidConfig, "temperature must be positive");
  }
};

struct LossReport {
  double gan_g = 0;
  double gan_d = 0;
  double nce = 0;
  double domain = 0;
  double identity = 0;
  double total_g = 0;

  // Cross-entropy and L1 terms cannot go negative, and the total must be the
  // stated weighted sum of its parts.
  void validate(const LossWeights& w, double tol = 1e-6) const {
    require(nce >= -tol && identity >= -tol && domain >= -tol, ErrorKind::InternalConsistency,
            "loss report: negative cross-entropy or L1 term");
    const double expect =
        w.lambda_gan * gan_g + w.lambda_nce * nce + w.lambda_dom * domain + w.lambda_ide * identity;
    require(std::abs(total_g - expect) <= tol * std::max(1.0, std::abs(expect)),
            ErrorKind::InternalConsistency, "loss report: total does not match weighted sum");
  }
};

enum class GanLossKind { Hinge, Logistic };

// ---------------------------------------------------------------------------
// unit-sphere normalization
// ---------------------------------------------------------------------------

template <typename T>
Variable<T> l2_normalize(const Variable<T>& v) {
  if (v.value().ndim() == 2) return ops::row_l2_normalize(v);
  const int64_t k = v.value().numel();
  return ops::reshape(ops::row_l2_normalize(ops::reshape(v, {1, k})), {k});
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& v) {
  return l2_normalize(Variable<T>::constant(v)).value();
}

// ---------------------------------------------------------------------------
// patch-wise contrastive cross-entropy
// ---------------------------------------------------------------------------

// Per-patch losses for S queries sharing one negative pool:
// q (S,K), pos (S,K), negs (N,K) -> (S,1).
template <typename T>
Variable<T> nce_patch_losses(const Variable<T>& q, const Variable<T>& pos, const Variable<T>& negs,
                             double tau) {
  require(tau > 0, ErrorKind::InvalidConfig, "nce: temperature must be positive");
  ops::check_same_shape(q, pos, "nce queries/positives");
  require(negs.value().ndim() == 2 && negs.shape()[1] == q.shape()[1], ErrorKind::InternalConsistency,
          "nce: negative pool width mismatch");
  const T inv_tau = T(1.0 / tau);
  auto l_pos = ops::mul_scalar(ops::rowwise_dot(q, pos), inv_tau);        // (S,1)
  auto l_neg = ops::mul_scalar(ops::matmul_nt(q, negs), inv_tau);        // (S,N)
  auto logits = ops::concat_cols(l_pos, l_neg);                           // (S,1+N)
  return ops::sub(ops::lse_rows(logits), l_pos);
}

// CUT-style fallback: negatives are the other sampled patches of the same
// image, i.e. an S-way softmax with the diagonal as positive.
template <typename T>
Variable<T> internal_nce_patch_losses(const Variable<T>& q, const Variable<T>& pos, double tau) {
  require(tau > 0, ErrorKind::InvalidConfig, "nce: temperature must be positive");
  ops::check_same_shape(q, pos, "nce queries/positives");
  const T inv_tau = T(1.0 / tau);
  auto logits = ops::mul_scalar(ops::matmul_nt(q, pos), inv_tau);        // (S,S)
  auto l_pos = ops::mul_scalar(ops::rowwise_dot(q, pos), inv_tau);       // (S,1), the diagonal
  return ops::sub(ops::lse_rows(logits), l_pos);
}

template <typename T>
Variable<T> info_nce(const Variable<T>& query, const Variable<T>& positive, const Variable<T>& negatives,
                     double tau) {
  const int64_t k = query.value().numel();
  auto losses = nce_patch_losses(ops::reshape(query, {1, k}), ops::reshape(positive, {1, k}),
                                 negatives, tau);
  return ops::reshape(losses, {1});
}

template <typename T>
T info_nce(const PatchBundle<T>& bundle, double tau) {
  bundle.validate();
  return info_nce(Variable<T>::constant(bundle.query), Variable<T>::constant(bundle.positive),
                  Variable<T>::constant(bundle.negatives), tau)
      .value()[0];
}

// Mean over (layer, patch) pairs of the per-patch contrastive loss. Queries
// come from the generated image's features, positives from the input image's
// features at identical positions, negatives from the crop views.
template <typename T>
Variable<T> multicrop_nce_loss(const std::vector<Variable<T>>& gen_embeddings,
                               const std::vector<Variable<T>>& input_embeddings,
                               const std::vector<Variable<T>>& negative_sets,
                               const std::vector<multicrop::PatchIndexSet>& patch_ids, double tau) {
  const size_t L = gen_embeddings.size();
  require(L > 0, ErrorKind::InvalidInput, "multicrop nce: no layers");
  require(input_embeddings.size() == L && negative_sets.size() == L && patch_ids.size() == L,
          ErrorKind::InternalConsistency, "multicrop nce: per-layer list lengths differ");
  Variable<T> acc;
  for (size_t l = 0; l < L; ++l) {
    require(gen_embeddings[l].shape() == input_embeddings[l].shape(), ErrorKind::InternalConsistency,
            "multicrop nce: query/positive shape mismatch at layer " + std::to_string(l));
    require(gen_embeddings[l].shape()[0] == static_cast<int64_t>(patch_ids[l].indices.size()),
            ErrorKind::InternalConsistency,
            "multicrop nce: patch count does not match sampled ids at layer " + std::to_string(l));
    auto layer_mean =
        ops::mean(nce_patch_losses(gen_embeddings[l], input_embeddings[l], negative_sets[l], tau));
    acc = acc.defined() ? ops::add(acc, layer_mean) : layer_mean;
  }
  return ops::mul_scalar(acc, T(1.0 / static_cast<double>(L)));
}

template <typename T>
T multicrop_nce_loss(const std::vector<Tensor<T>>& gen_embeddings,
                     const std::vector<Tensor<T>>& input_embeddings,
                     const std::vector<Tensor<T>>& negative_sets,
                     const std::vector<multicrop::PatchIndexSet>& patch_ids, double tau) {
  auto wrap = [](const std::vector<Tensor<T>>& ts) {
    std::vector<Variable<T>> vs;
    vs.reserve(ts.size());
    for (const auto& t : ts) vs.push_back(Variable<T>::constant(t));
    return vs;
  };
  return multicrop_nce_loss(wrap(gen_embeddings), wrap(input_embeddings), wrap(negative_sets),
                            patch_ids, tau)
      .value()[0];
}

// Identity-mapping regularizer: the same contrastive objective evaluated on a
// target-domain image passed through the generator.
template <typename T>
Variable<T> identity_loss(const std::vector<Variable<T>>& gen_from_y_embeddings,
                          const std::vector<Variable<T>>& y_embeddings,
                          const std::vector<Variable<T>>& y_negative_sets,
                          const std::vector<multicrop::PatchIndexSet>& patch_ids, double tau) {
  return multicrop_nce_loss(gen_from_y_embeddings, y_embeddings, y_negative_sets, patch_ids, tau);
}

// ---------------------------------------------------------------------------
// domain consistency
// ---------------------------------------------------------------------------

// Sum over layers of the mean elementwise L1 distance between style vectors.
template <typename T>
Variable<T> domain_consistency_loss(const std::vector<Variable<T>>& real_style,
                                    const std::vector<Variable<T>>& fake_style) {
  require(!real_style.empty() && real_style.size() == fake_style.size(), ErrorKind::InternalConsistency,
          "domain loss: layer count mismatch");
  Variable<T> acc;
  for (size_t l = 0; l < real_style.size(); ++l) {
    require(real_style[l].shape() == fake_style[l].shape(), ErrorKind::InternalConsistency,
            "domain loss: style shape mismatch at layer " + std::to_string(l));
    auto term = ops::mean(ops::abs_op(ops::sub(real_style[l], fake_style[l])));
    acc = acc.defined() ? ops::add(acc, term) : term;
  }
  return acc;
}

template <typename T>
T domain_consistency_loss(const std::vector<Tensor<T>>& real_style,
                          const std::vector<Tensor<T>>& fake_style) {
  std::vector<Variable<T>> r, f;
  for (const auto& t : real_style) r.push_back(Variable<T>::constant(t));
  for (const auto& t : fake_style) f.push_back(Variable<T>::constant(t));
  return domain_consistency_loss(r, f).value()[0];
}

// ---------------------------------------------------------------------------
// adversarial terms (raw patch logits in, scalars out)
// ---------------------------------------------------------------------------

template <typename T>
Variable<T> hinge_d_loss(const Variable<T>& real_logits, const Variable<T>& fake_logits) {
  auto real_term = ops::mean(ops::relu(ops::rsub_scalar(T(1), real_logits)));
  auto fake_term = ops::mean(ops::relu(ops::add_scalar(fake_logits, T(1))));
  return ops::add(real_term, fake_term);
}

template <typename T>
Variable<T> hinge_g_loss(const Variable<T>& fake_logits) {
  return ops::neg(ops::mean(fake_logits));
}

// Saturating cross-entropy form for the discriminator, non-saturating for the
// generator, both on raw logits.
template <typename T>
Variable<T> logistic_d_loss(const Variable<T>& real_logits, const Variable<T>& fake_logits) {
  auto real_term = ops::mean(ops::softplus(ops::neg(real_logits)));
  auto fake_term = ops::mean(ops::softplus(fake_logits));
  return ops::add(real_term, fake_term);
}

template <typename T>
Variable<T> logistic_g_loss(const Variable<T>& fake_logits) {
  return ops::mean(ops::softplus(ops::neg(fake_logits)));
}

template <typename T>
Variable<T> gan_d_loss(GanLossKind kind, const Variable<T>& real_logits, const Variable<T>& fake_logits) {
  return kind == GanLossKind::Hinge ? hinge_d_loss(real_logits, fake_logits)
                                    : logistic_d_loss(real_logits, fake_logits);
}

template <typename T>
Variable<T> gan_g_loss(GanLossKind kind, const Variable<T>& fake_logits) {
  return kind == GanLossKind::Hinge ? hinge_g_loss(fake_logits) : logistic_g_loss(fake_logits);
}

template <typename T>
T hinge_d_loss(const Tensor<T>& real_logits, const Tensor<T>& fake_logits) {
  return hinge_d_loss(Variable<T>::constant(real_logits), Variable<T>::constant(fake_logits)).value()[0];
}

template <typename T>
T hinge_g_loss(const Tensor<T>& fake_logits) {
  return hinge_g_loss(Variable<T>::constant(fake_logits)).value()[0];
}

// ---------------------------------------------------------------------------
// total objective
// ---------------------------------------------------------------------------

// Weighted sum of the generator-side terms. Undefined parts contribute
// nothing (their toggle is off for this step).
template <typename T>
Variable<T> total_generator_objective(const Variable<T>& gan_g, const Variable<T>& nce,
                                      const Variable<T>& domain, const Variable<T>& identity,
                                      const LossWeights& w) {
  w.validate();
  Variable<T> acc;
  auto push = [&acc](const Variable<T>& part, double weight) {
    if (!part.defined() || weight == 0.0) return;
    auto term = ops::mul_scalar(part, T(weight));
    acc = acc.defined() ? ops::add(acc, term) : term;
  };
  push(gan_g, w.lambda_gan);
  push(nce, w.lambda_nce);
  push(domain, w.lambda_dom);
  push(identity, w.lambda_ide);
  if (!acc.defined()) acc = Variable<T>::constant(Tensor<T>::scalar(T(0)));
  return acc;
}

inline double total_generator_objective(double gan_g, double nce, double domain, double identity,
                                        const LossWeights& w) {
  w.validate();
  return w.lambda_gan * gan_g + w.lambda_nce * nce + w.lambda_dom * domain + w.lambda_ide * identity;
}

}  // namespace mcdut::losses
