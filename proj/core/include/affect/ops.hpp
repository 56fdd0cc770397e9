#pragma once

#include <memory>

#include "affect/tensor.hpp"

namespace affect {

// Tensor operations with reverse-mode derivatives. Shapes must match exactly;
// the only broadcasting is a one-element (scalar) tensor against any shape in
// the binary arithmetic ops.

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int padding);
// Bias-free variant (convolutions followed by batch norm).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, int stride, int padding);

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, int window, int stride);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);  // [B,C,H,W] -> [B,C]

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight);

enum class BatchNormMode { train, eval };

// Per-channel batch norm over dim 1 of [B,C] or [B,C,H,W]. Train mode
// normalizes with batch statistics (population 1/N) and updates the running
// buffers in place: running = momentum * running + (1 - momentum) * batch.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, BatchNormMode mode,
                     T eps = T(1e-5), T momentum = T(0.9));

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh_op(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s);
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape);

// Contiguous slice of length `length` starting at `start` along `dim`.
template <typename T>
Tensor<T> narrow(const Tensor<T>& x, size_t dim, std::int64_t start, std::int64_t length);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, size_t dim);

// Mean over one axis (shape loses that axis).
template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, size_t dim);

// Inserts an axis of size n at `dim`, repeating values (inverse of a
// reduction; backward sums over the axis).
template <typename T>
Tensor<T> repeat_dim(const Tensor<T>& x, size_t dim, std::int64_t n);

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x);
template <typename T>
Tensor<T> mean_all(const Tensor<T>& x);

namespace detail {

// Attaches a custom node to `output`. No-op when grads are disabled or no
// input requires them. Fused losses outside this file build on this.
template <typename T>
void record_op(const char* name, std::vector<Tensor<T>> inputs, Tensor<T>& output,
               std::function<void()> backward_fn);

template <typename T>
void accumulate(Tensor<T>& t, const std::vector<T>& delta);

}  // namespace detail

}  // namespace affect
