#include "affect/objectives.hpp"

#include <cmath>

#include "affect/ops.hpp"

namespace affect::objectives {

ClassWeights class_weights(std::span<const std::int64_t> frame_counts) {
  if (frame_counts.empty()) throw contract_error("class_weights: empty count list");
  ClassWeights cw;
  cw.weights.reserve(frame_counts.size());
  double sum = 0.0;
  for (std::int64_t c : frame_counts) {
    if (c < 1) throw contract_error("class_weights: zero frame count (drop or floor the class first)");
    cw.weights.push_back(1.0 / static_cast<double>(c));
    sum += cw.weights.back();
  }
  const double scale = static_cast<double>(frame_counts.size()) / sum;
  for (double& w : cw.weights) w *= scale;
  return cw;
}

template <typename T>
Tensor<T> weighted_sigmoid_ce(const Tensor<T>& logits, const Tensor<T>& labels, const ClassWeights& weights) {
  if (logits.rank() != 2 || labels.rank() != 2 || logits.shape() != labels.shape())
    throw dimension_error("weighted_sigmoid_ce expects matching [N,K] logits and labels");
  const std::int64_t N = logits.dim(0), K = logits.dim(1);
  if (N < 1) throw contract_error("weighted_sigmoid_ce: at least one frame required");
  if (static_cast<std::int64_t>(weights.size()) != K)
    throw dimension_error("weighted_sigmoid_ce: weight count does not match class count");

  const T* xp = logits.ptr();
  const T* zp = labels.ptr();

  // Mean weight of the active classes per row.
  std::vector<T> row_weight(static_cast<size_t>(N));
  for (std::int64_t n = 0; n < N; ++n) {
    double wsum = 0.0;
    int active = 0;
    for (std::int64_t k = 0; k < K; ++k) {
      const T z = zp[n * K + k];
      if (z != T(0) && z != T(1))
        throw contract_error("weighted_sigmoid_ce: labels must be exactly 0 or 1");
      if (z == T(1)) {
        wsum += weights[static_cast<size_t>(k)];
        ++active;
      }
    }
    row_weight[static_cast<size_t>(n)] = active ? static_cast<T>(wsum / active) : T(1);
  }

  double total = 0.0;
  for (std::int64_t n = 0; n < N; ++n) {
    double row = 0.0;
    for (std::int64_t k = 0; k < K; ++k) {
      const double x = static_cast<double>(xp[n * K + k]);
      const double z = static_cast<double>(zp[n * K + k]);
      row += std::max(x, 0.0) - x * z + std::log1p(std::exp(-std::abs(x)));
    }
    total += static_cast<double>(row_weight[static_cast<size_t>(n)]) * row;
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(N * K)));

  Tensor<T> x = logits, z = labels;
  detail::record_op<T>("weighted_sigmoid_ce", {logits, labels}, out, [x, z, out, row_weight, N, K]() mutable {
    if (!x.requires_grad()) return;
    const T g = out.grad()[0];
    const T* xp = x.ptr();
    const T* zp = z.ptr();
    T* dx = x.grad().data();
    const T scale = g / static_cast<T>(N * K);
    for (std::int64_t n = 0; n < N; ++n) {
      const T w = row_weight[static_cast<size_t>(n)];
      for (std::int64_t k = 0; k < K; ++k) {
        const T v = xp[n * K + k];
        T s;
        if (v >= T(0))
          s = T(1) / (T(1) + std::exp(-v));
        else {
          const T e = std::exp(v);
          s = e / (T(1) + e);
        }
        dx[n * K + k] += scale * w * (s - zp[n * K + k]);
      }
    }
  });
  return out;
}

CccResult ccc(std::span<const double> pred, std::span<const double> gold, bool sample_moments) {
  if (pred.size() != gold.size()) throw contract_error("ccc: series length mismatch");
  const size_t n = pred.size();
  if (n < 2) throw contract_error("ccc: need at least 2 samples");

  CccResult r;
  for (size_t i = 0; i < n; ++i) {
    r.mean_pred += pred[i];
    r.mean_gold += gold[i];
  }
  r.mean_pred /= static_cast<double>(n);
  r.mean_gold /= static_cast<double>(n);
  for (size_t i = 0; i < n; ++i) {
    const double dx = pred[i] - r.mean_pred;
    const double dy = gold[i] - r.mean_gold;
    r.var_pred += dx * dx;
    r.var_gold += dy * dy;
    r.covariance += dx * dy;
  }
  const double denom_n = sample_moments ? static_cast<double>(n - 1) : static_cast<double>(n);
  r.var_pred /= denom_n;
  r.var_gold /= denom_n;
  r.covariance /= denom_n;

  const double gap = r.mean_pred - r.mean_gold;
  const double denominator = r.var_pred + r.var_gold + gap * gap;
  if (denominator == 0.0) {
    // Both series constant and equal: perfect concordance by convention.
    r.rho_c = 1.0;
  } else {
    r.rho_c = 2.0 * r.covariance / denominator;
  }
  return r;
}

template <typename T>
Tensor<T> ccc_loss(const Tensor<T>& pred, const Tensor<T>& gold, CccBatching batching) {
  if (pred.rank() != 2 || gold.rank() != 2 || pred.shape() != gold.shape())
    throw dimension_error("ccc_loss expects matching [B,T] tensors");
  if (pred.dim(1) < 2) throw contract_error("ccc_loss: sequences need at least 2 steps");

  Tensor<T> p = pred, y = gold;
  if (batching == CccBatching::concatenated) {
    p = reshape(pred, Shape{1, pred.numel()});
    y = reshape(gold, Shape{1, gold.numel()});
  }
  const std::int64_t t_len = p.dim(1);
  constexpr T eps = std::is_same_v<T, double> ? T(1e-12) : T(1e-8);

  Tensor<T> mx = reduce_mean(p, 1);
  Tensor<T> my = reduce_mean(y, 1);
  Tensor<T> dx = sub(p, repeat_dim(mx, 1, t_len));
  Tensor<T> dy = sub(y, repeat_dim(my, 1, t_len));
  Tensor<T> var_x = reduce_mean(mul(dx, dx), 1);
  Tensor<T> var_y = reduce_mean(mul(dy, dy), 1);
  Tensor<T> cov = reduce_mean(mul(dx, dy), 1);
  Tensor<T> gap = sub(mx, my);
  Tensor<T> denom = add_scalar(add(add(var_x, var_y), mul(gap, gap)), eps);
  Tensor<T> rho = div(mul_scalar(cov, T(2)), denom);
  return mean_all(add_scalar(mul_scalar(rho, T(-1)), T(1)));
}

template Tensor<float> weighted_sigmoid_ce<float>(const Tensor<float>&, const Tensor<float>&, const ClassWeights&);
template Tensor<double> weighted_sigmoid_ce<double>(const Tensor<double>&, const Tensor<double>&, const ClassWeights&);
template Tensor<float> ccc_loss<float>(const Tensor<float>&, const Tensor<float>&, CccBatching);
template Tensor<double> ccc_loss<double>(const Tensor<double>&, const Tensor<double>&, CccBatching);

}  // namespace affect::objectives
