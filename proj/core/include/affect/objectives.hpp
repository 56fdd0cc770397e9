#pragma once

#include <span>
#include <vector>

#include "affect/tensor.hpp"

namespace affect::objectives {

// Per-emotion loss weights, proportional to reciprocal frame counts and
// rescaled so the mean weight is 1.
struct ClassWeights {
  std::vector<double> weights;

  size_t size() const { return weights.size(); }
  double operator[](size_t i) const { return weights[i]; }
};

// w_i proportional to 1 / count_i, mean-normalized. Zero counts are a
// contract error; callers drop or floor such classes first.
ClassWeights class_weights(std::span<const std::int64_t> frame_counts);

// Weighted multi-label sigmoid cross-entropy over logits [N,K] and multi-hot
// labels [N,K]. Each row's loss is scaled by the mean weight of its active
// classes (1 if none), then averaged over N*K. Uses the log1p(exp)
// formulation, stable for any finite logit.
template <typename T>
Tensor<T> weighted_sigmoid_ce(const Tensor<T>& logits, const Tensor<T>& labels, const ClassWeights& weights);

struct CccResult {
  double rho_c = 0.0;
  double mean_pred = 0.0;
  double mean_gold = 0.0;
  double var_pred = 0.0;
  double var_gold = 0.0;
  double covariance = 0.0;
};

// Concordance correlation coefficient with population (1/N) moments by
// default; set sample_moments for 1/(N-1). Two identical constant series
// have rho_c = 1; zero covariance with a nonzero denominator gives 0.
CccResult ccc(std::span<const double> pred, std::span<const double> gold, bool sample_moments = false);

enum class CccBatching { per_sequence, concatenated };

// Differentiable 1 - rho_c over [B,T] sequences: per-sequence CCC averaged
// over the batch (default) or one CCC over the concatenated batch. The
// denominator carries a small eps so zero-variance predictions yield a
// finite gradient.
template <typename T>
Tensor<T> ccc_loss(const Tensor<T>& pred, const Tensor<T>& gold,
                   CccBatching batching = CccBatching::per_sequence);

}  // namespace affect::objectives
