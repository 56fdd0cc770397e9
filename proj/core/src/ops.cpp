#include "affect/ops.hpp"

#include <algorithm>
#include <cmath>

#include "affect/threading.hpp"

namespace affect {

namespace detail {

template <typename T>
void record_op(const char* name, std::vector<Tensor<T>> inputs, Tensor<T>& output,
               std::function<void()> backward_fn) {
  if (!autograd::grad_enabled()) return;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return;
  auto node = std::make_shared<autograd::Node<T>>();
  node->inputs = std::move(inputs);
  node->output = output;
  node->backward_fn = std::move(backward_fn);
  node->op_name = name;
  output.set_node(std::move(node));
}

template <typename T>
void accumulate(Tensor<T>& t, const std::vector<T>& delta) {
  auto g = t.grad();
  for (size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

template void record_op<float>(const char*, std::vector<Tensor<float>>, Tensor<float>&, std::function<void()>);
template void record_op<double>(const char*, std::vector<Tensor<double>>, Tensor<double>&, std::function<void()>);
template void accumulate<float>(Tensor<float>&, const std::vector<float>&);
template void accumulate<double>(Tensor<double>&, const std::vector<double>&);

}  // namespace detail

namespace {

template <typename T>
std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, int stride, int padding) {
  return (in + 2 * padding - k) / stride + 1;
}

void check_rank(const Shape& s, size_t rank, const char* what) {
  if (s.size() != rank)
    throw dimension_error(std::string(what) + " expects rank " + std::to_string(rank) + ", got " + shape_str(s));
}

std::int64_t prod_range(const Shape& s, size_t lo, size_t hi) {
  std::int64_t p = 1;
  for (size_t i = lo; i < hi; ++i) p *= s[i];
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
static Tensor<T> conv2d_impl(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                             int stride, int padding) {
  check_rank(input.shape(), 4, "conv2d input");
  check_rank(weight.shape(), 4, "conv2d weight");
  const std::int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::int64_t F = weight.dim(0), Cw = weight.dim(1), kH = weight.dim(2), kW = weight.dim(3);
  if (Cw != C)
    throw dimension_error("conv2d channel mismatch: input has " + std::to_string(C) + ", weight expects " +
                          std::to_string(Cw));
  if (bias && (bias->rank() != 1 || bias->dim(0) != F)) throw dimension_error("conv2d bias must be [F]");
  if (stride < 1) throw dimension_error("conv2d stride must be >= 1");
  if (padding < 0) throw dimension_error("conv2d padding must be >= 0");
  if (kH > H + 2 * padding || kW > W + 2 * padding)
    throw dimension_error("conv2d kernel larger than padded input");

  const std::int64_t Ho = conv_out_dim<T>(H, kH, stride, padding);
  const std::int64_t Wo = conv_out_dim<T>(W, kW, stride, padding);
  Tensor<T> out(Shape{B, F, Ho, Wo});

  const T* xp = input.ptr();
  const T* wp = weight.ptr();
  const T* bp = bias ? bias->ptr() : nullptr;
  T* op = out.ptr();

  parallel_for(B * F, [&](std::int64_t p0, std::int64_t p1) {
    for (std::int64_t p = p0; p < p1; ++p) {
      const std::int64_t b = p / F;
      const std::int64_t f = p % F;
      for (std::int64_t oh = 0; oh < Ho; ++oh) {
        for (std::int64_t ow = 0; ow < Wo; ++ow) {
          T acc = bp ? bp[f] : T(0);
          for (std::int64_t c = 0; c < C; ++c) {
            const T* xplane = xp + ((b * C + c) * H) * W;
            const T* wplane = wp + ((f * C + c) * kH) * kW;
            for (std::int64_t kh = 0; kh < kH; ++kh) {
              const std::int64_t ih = oh * stride - padding + kh;
              if (ih < 0 || ih >= H) continue;
              for (std::int64_t kw = 0; kw < kW; ++kw) {
                const std::int64_t iw = ow * stride - padding + kw;
                if (iw < 0 || iw >= W) continue;
                acc += xplane[ih * W + iw] * wplane[kh * kW + kw];
              }
            }
          }
          op[((b * F + f) * Ho + oh) * Wo + ow] = acc;
        }
      }
    }
  });

  std::vector<Tensor<T>> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  Tensor<T> x = input, w = weight;
  Tensor<T> bcopy = bias ? *bias : Tensor<T>();
  const bool has_bias = bias != nullptr;
  detail::record_op<T>(
      "conv2d", inputs, out,
      [x, w, bcopy, has_bias, out, stride, padding, B, C, H, W, F, kH, kW, Ho, Wo]() mutable {
        auto og = out.grad();
        const T* gp = og.data();
        const T* xp = x.ptr();
        const T* wp = w.ptr();
        if (x.requires_grad()) {
          T* dx = x.grad().data();
          parallel_for(B, [&](std::int64_t b0, std::int64_t b1) {
            for (std::int64_t b = b0; b < b1; ++b)
              for (std::int64_t f = 0; f < F; ++f)
                for (std::int64_t oh = 0; oh < Ho; ++oh)
                  for (std::int64_t ow = 0; ow < Wo; ++ow) {
                    const T g = gp[((b * F + f) * Ho + oh) * Wo + ow];
                    if (g == T(0)) continue;
                    for (std::int64_t c = 0; c < C; ++c) {
                      T* dxplane = dx + ((b * C + c) * H) * W;
                      const T* wplane = wp + ((f * C + c) * kH) * kW;
                      for (std::int64_t kh = 0; kh < kH; ++kh) {
                        const std::int64_t ih = oh * stride - padding + kh;
                        if (ih < 0 || ih >= H) continue;
                        for (std::int64_t kw = 0; kw < kW; ++kw) {
                          const std::int64_t iw = ow * stride - padding + kw;
                          if (iw < 0 || iw >= W) continue;
                          dxplane[ih * W + iw] += g * wplane[kh * kW + kw];
                        }
                      }
                    }
                  }
          });
        }
        if (w.requires_grad()) {
          T* dw = w.grad().data();
          parallel_for(F, [&](std::int64_t f0, std::int64_t f1) {
            for (std::int64_t f = f0; f < f1; ++f)
              for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t oh = 0; oh < Ho; ++oh)
                  for (std::int64_t ow = 0; ow < Wo; ++ow) {
                    const T g = gp[((b * F + f) * Ho + oh) * Wo + ow];
                    if (g == T(0)) continue;
                    for (std::int64_t c = 0; c < C; ++c) {
                      const T* xplane = xp + ((b * C + c) * H) * W;
                      T* dwplane = dw + ((f * C + c) * kH) * kW;
                      for (std::int64_t kh = 0; kh < kH; ++kh) {
                        const std::int64_t ih = oh * stride - padding + kh;
                        if (ih < 0 || ih >= H) continue;
                        for (std::int64_t kw = 0; kw < kW; ++kw) {
                          const std::int64_t iw = ow * stride - padding + kw;
                          if (iw < 0 || iw >= W) continue;
                          dwplane[kh * kW + kw] += g * xplane[ih * W + iw];
                        }
                      }
                    }
                  }
          });
        }
        if (has_bias && bcopy.requires_grad()) {
          T* db = bcopy.grad().data();
          for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t f = 0; f < F; ++f) {
              T s = T(0);
              const T* row = gp + ((b * F + f) * Ho) * Wo;
              for (std::int64_t i = 0; i < Ho * Wo; ++i) s += row[i];
              db[f] += s;
            }
        }
      });
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int padding) {
  return conv2d_impl(input, weight, &bias, stride, padding);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, int stride, int padding) {
  return conv2d_impl<T>(input, weight, nullptr, stride, padding);
}

// ---------------------------------------------------------------------------
// pooling

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, int window, int stride) {
  check_rank(input.shape(), 4, "max_pool2d input");
  const std::int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (window < 1 || stride < 1) throw dimension_error("max_pool2d window and stride must be >= 1");
  if (window > H || window > W) throw dimension_error("max_pool2d window larger than input");
  const std::int64_t Ho = (H - window) / stride + 1;
  const std::int64_t Wo = (W - window) / stride + 1;

  Tensor<T> out(Shape{B, C, Ho, Wo});
  // Flat spatial index of each window's max; first row-major element wins ties.
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<size_t>(B * C * Ho * Wo));
  const T* xp = input.ptr();
  T* op = out.ptr();

  parallel_for(B * C, [&](std::int64_t p0, std::int64_t p1) {
    for (std::int64_t p = p0; p < p1; ++p) {
      const T* plane = xp + p * H * W;
      for (std::int64_t oh = 0; oh < Ho; ++oh)
        for (std::int64_t ow = 0; ow < Wo; ++ow) {
          T best = plane[(oh * stride) * W + ow * stride];
          std::int64_t best_idx = (oh * stride) * W + ow * stride;
          for (std::int64_t kh = 0; kh < window; ++kh)
            for (std::int64_t kw = 0; kw < window; ++kw) {
              const std::int64_t idx = (oh * stride + kh) * W + (ow * stride + kw);
              if (plane[idx] > best) {
                best = plane[idx];
                best_idx = idx;
              }
            }
          op[(p * Ho + oh) * Wo + ow] = best;
          (*argmax)[static_cast<size_t>((p * Ho + oh) * Wo + ow)] = best_idx;
        }
    }
  });

  Tensor<T> x = input;
  detail::record_op<T>("max_pool2d", {input}, out, [x, out, argmax, B, C, H, W, Ho, Wo]() mutable {
    if (!x.requires_grad()) return;
    auto og = out.grad();
    T* dx = x.grad().data();
    parallel_for(B * C, [&](std::int64_t p0, std::int64_t p1) {
      for (std::int64_t p = p0; p < p1; ++p)
        for (std::int64_t i = 0; i < Ho * Wo; ++i)
          dx[p * H * W + (*argmax)[static_cast<size_t>(p * Ho * Wo + i)]] += og[static_cast<size_t>(p * Ho * Wo + i)];
    });
  });
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  check_rank(input.shape(), 4, "global_avg_pool input");
  const std::int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  Tensor<T> out(Shape{B, C});
  const T* xp = input.ptr();
  T* op = out.ptr();
  const T inv = T(1) / static_cast<T>(H * W);
  for (std::int64_t p = 0; p < B * C; ++p) {
    T s = T(0);
    for (std::int64_t i = 0; i < H * W; ++i) s += xp[p * H * W + i];
    op[p] = s * inv;
  }
  Tensor<T> x = input;
  detail::record_op<T>("global_avg_pool", {input}, out, [x, out, B, C, H, W, inv]() mutable {
    if (!x.requires_grad()) return;
    auto og = out.grad();
    T* dx = x.grad().data();
    for (std::int64_t p = 0; p < B * C; ++p) {
      const T g = og[static_cast<size_t>(p)] * inv;
      for (std::int64_t i = 0; i < H * W; ++i) dx[p * H * W + i] += g;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// linear

template <typename T>
static Tensor<T> linear_impl(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias) {
  check_rank(input.shape(), 2, "linear input");
  check_rank(weight.shape(), 2, "linear weight");
  const std::int64_t N = input.dim(0), D = input.dim(1), Dw = weight.dim(0), K = weight.dim(1);
  if (D != Dw)
    throw dimension_error("linear inner dimensions disagree: input " + shape_str(input.shape()) + " weight " +
                          shape_str(weight.shape()));
  if (bias && (bias->rank() != 1 || bias->dim(0) != K)) throw dimension_error("linear bias must be [K]");

  Tensor<T> out(Shape{N, K});
  const T* xp = input.ptr();
  const T* wp = weight.ptr();
  const T* bp = bias ? bias->ptr() : nullptr;
  T* op = out.ptr();
  parallel_for(N, [&](std::int64_t n0, std::int64_t n1) {
    for (std::int64_t n = n0; n < n1; ++n) {
      T* row = op + n * K;
      if (bp)
        std::copy(bp, bp + K, row);
      else
        std::fill(row, row + K, T(0));
      for (std::int64_t d = 0; d < D; ++d) {
        const T xv = xp[n * D + d];
        if (xv == T(0)) continue;
        const T* wrow = wp + d * K;
        for (std::int64_t k = 0; k < K; ++k) row[k] += xv * wrow[k];
      }
    }
  });

  std::vector<Tensor<T>> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  Tensor<T> x = input, w = weight;
  Tensor<T> bcopy = bias ? *bias : Tensor<T>();
  const bool has_bias = bias != nullptr;
  detail::record_op<T>("linear", inputs, out, [x, w, bcopy, has_bias, out, N, D, K]() mutable {
    auto og = out.grad();
    const T* gp = og.data();
    if (x.requires_grad()) {
      T* dx = x.grad().data();
      const T* wp = w.ptr();
      parallel_for(N, [&](std::int64_t n0, std::int64_t n1) {
        for (std::int64_t n = n0; n < n1; ++n)
          for (std::int64_t d = 0; d < D; ++d) {
            T s = T(0);
            const T* wrow = wp + d * K;
            const T* grow = gp + n * K;
            for (std::int64_t k = 0; k < K; ++k) s += grow[k] * wrow[k];
            dx[n * D + d] += s;
          }
      });
    }
    if (w.requires_grad()) {
      T* dw = w.grad().data();
      const T* xp = x.ptr();
      parallel_for(D, [&](std::int64_t d0, std::int64_t d1) {
        for (std::int64_t d = d0; d < d1; ++d)
          for (std::int64_t n = 0; n < N; ++n) {
            const T xv = xp[n * D + d];
            if (xv == T(0)) continue;
            const T* grow = gp + n * K;
            T* dwrow = dw + d * K;
            for (std::int64_t k = 0; k < K; ++k) dwrow[k] += xv * grow[k];
          }
      });
    }
    if (has_bias && bcopy.requires_grad()) {
      T* db = bcopy.grad().data();
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t k = 0; k < K; ++k) db[k] += gp[n * K + k];
    }
  });
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  return linear_impl(input, weight, &bias);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight) {
  return linear_impl<T>(input, weight, nullptr);
}

// ---------------------------------------------------------------------------
// batch norm

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, BatchNormMode mode, T eps, T momentum) {
  if (input.rank() != 2 && input.rank() != 4)
    throw dimension_error("batch_norm expects [B,C] or [B,C,H,W], got " + shape_str(input.shape()));
  const std::int64_t B = input.dim(0), C = input.dim(1);
  const std::int64_t spatial = input.rank() == 4 ? input.dim(2) * input.dim(3) : 1;
  const std::int64_t N = B * spatial;
  for (const Tensor<T>* t : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var})
    if (t->rank() != 1 || t->dim(0) != C) throw dimension_error("batch_norm parameter shape must be [C]");
  if (mode == BatchNormMode::train && N <= 1)
    throw contract_error("batch_norm train mode needs more than one element per channel (degenerate variance)");

  std::vector<T> mean(static_cast<size_t>(C)), invstd(static_cast<size_t>(C));
  const T* xp = input.ptr();

  auto channel_sum = [&](std::int64_t c, auto&& fn) {
    // Iterates all N elements of channel c.
    for (std::int64_t b = 0; b < B; ++b) {
      const T* plane = xp + (b * C + c) * spatial;
      for (std::int64_t i = 0; i < spatial; ++i) fn(plane[i]);
    }
  };

  if (mode == BatchNormMode::train) {
    T* rm = running_mean.ptr();
    T* rv = running_var.ptr();
    for (std::int64_t c = 0; c < C; ++c) {
      T s = T(0);
      channel_sum(c, [&](T v) { s += v; });
      const T mu = s / static_cast<T>(N);
      T sq = T(0);
      channel_sum(c, [&](T v) { sq += (v - mu) * (v - mu); });
      const T var = sq / static_cast<T>(N);
      mean[static_cast<size_t>(c)] = mu;
      invstd[static_cast<size_t>(c)] = T(1) / std::sqrt(var + eps);
      rm[c] = momentum * rm[c] + (T(1) - momentum) * mu;
      rv[c] = momentum * rv[c] + (T(1) - momentum) * var;
    }
  } else {
    const T* rm = running_mean.ptr();
    const T* rv = running_var.ptr();
    for (std::int64_t c = 0; c < C; ++c) {
      mean[static_cast<size_t>(c)] = rm[c];
      invstd[static_cast<size_t>(c)] = T(1) / std::sqrt(rv[c] + eps);
    }
  }

  Tensor<T> out(input.shape());
  T* op = out.ptr();
  const T* gp = gamma.ptr();
  const T* bp = beta.ptr();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      const T mu = mean[static_cast<size_t>(c)], is = invstd[static_cast<size_t>(c)];
      const T g = gp[c], bt = bp[c];
      const T* xplane = xp + (b * C + c) * spatial;
      T* oplane = op + (b * C + c) * spatial;
      for (std::int64_t i = 0; i < spatial; ++i) oplane[i] = g * (xplane[i] - mu) * is + bt;
    }

  Tensor<T> x = input, gm = gamma, bt = beta;
  const bool train = mode == BatchNormMode::train;
  detail::record_op<T>("batch_norm", {input, gamma, beta}, out,
                       [x, gm, bt, out, mean, invstd, train, B, C, spatial, N]() mutable {
    auto og = out.grad();
    const T* gp = og.data();
    const T* xp = x.ptr();
    const T* gmp = gm.ptr();
    for (std::int64_t c = 0; c < C; ++c) {
      const T mu = mean[static_cast<size_t>(c)], is = invstd[static_cast<size_t>(c)];
      T sum_dy = T(0), sum_dy_xhat = T(0);
      for (std::int64_t b = 0; b < B; ++b) {
        const T* xplane = xp + (b * C + c) * spatial;
        const T* gplane = gp + (b * C + c) * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) {
          sum_dy += gplane[i];
          sum_dy_xhat += gplane[i] * (xplane[i] - mu) * is;
        }
      }
      if (bt.requires_grad()) bt.grad()[static_cast<size_t>(c)] += sum_dy;
      if (gm.requires_grad()) gm.grad()[static_cast<size_t>(c)] += sum_dy_xhat;
      if (x.requires_grad()) {
        T* dx = x.grad().data();
        const T k = gmp[c] * is;
        for (std::int64_t b = 0; b < B; ++b) {
          const T* xplane = xp + (b * C + c) * spatial;
          const T* gplane = gp + (b * C + c) * spatial;
          T* dxplane = dx + (b * C + c) * spatial;
          for (std::int64_t i = 0; i < spatial; ++i) {
            if (train) {
              const T xhat = (xplane[i] - mu) * is;
              dxplane[i] += k * (gplane[i] - sum_dy / static_cast<T>(N) - xhat * sum_dy_xhat / static_cast<T>(N));
            } else {
              dxplane[i] += k * gplane[i];
            }
          }
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// elementwise

template <typename T, typename FwdFn, typename BwdFn>
static Tensor<T> unary_op(const char* name, const Tensor<T>& x, FwdFn fwd, BwdFn bwd_factor) {
  Tensor<T> out(x.shape());
  const T* xp = x.ptr();
  T* op = out.ptr();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) op[i] = fwd(xp[i]);
  Tensor<T> xc = x;
  detail::record_op<T>(name, {x}, out, [xc, out, bwd_factor, n]() mutable {
    if (!xc.requires_grad()) return;
    auto og = out.grad();
    T* dx = xc.grad().data();
    const T* xp = xc.ptr();
    const T* yp = out.ptr();
    for (std::int64_t i = 0; i < n; ++i) dx[i] += og[static_cast<size_t>(i)] * bwd_factor(xp[i], yp[i]);
  });
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary_op<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  auto stable = [](T v) {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    const T e = std::exp(v);
    return e / (T(1) + e);
  };
  return unary_op<T>("sigmoid", x, stable, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh_op(const Tensor<T>& x) {
  return unary_op<T>(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

// Binary elementwise with scalar (1-element) broadcast on either side.
template <typename T, typename FwdFn, typename DaFn, typename DbFn>
static Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, FwdFn fwd, DaFn da,
                           DbFn db) {
  const bool a_scalar = a.numel() == 1, b_scalar = b.numel() == 1;
  if (!(a.shape() == b.shape() || a_scalar || b_scalar))
    throw dimension_error(std::string(name) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  const Shape& out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
  Tensor<T> out(out_shape);
  const std::int64_t n = out.numel();
  const T* ap = a.ptr();
  const T* bp = b.ptr();
  T* op = out.ptr();
  for (std::int64_t i = 0; i < n; ++i) op[i] = fwd(ap[a_scalar ? 0 : i], bp[b_scalar ? 0 : i]);

  Tensor<T> ac = a, bc = b;
  detail::record_op<T>(name, {a, b}, out, [ac, bc, out, da, db, n, a_scalar, b_scalar]() mutable {
    auto og = out.grad();
    const T* ap = ac.ptr();
    const T* bp = bc.ptr();
    if (ac.requires_grad()) {
      T* dag = ac.grad().data();
      for (std::int64_t i = 0; i < n; ++i)
        dag[a_scalar ? 0 : i] += og[static_cast<size_t>(i)] * da(ap[a_scalar ? 0 : i], bp[b_scalar ? 0 : i]);
    }
    if (bc.requires_grad()) {
      T* dbg = bc.grad().data();
      for (std::int64_t i = 0; i < n; ++i)
        dbg[b_scalar ? 0 : i] += og[static_cast<size_t>(i)] * db(ap[a_scalar ? 0 : i], bp[b_scalar ? 0 : i]);
    }
  });
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return unary_op<T>(
      "add_scalar", x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
  return unary_op<T>(
      "mul_scalar", x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

// ---------------------------------------------------------------------------
// shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw dimension_error("reshape element count mismatch: " + shape_str(x.shape()) + " -> " +
                          shape_str(new_shape));
  Tensor<T> out(new_shape, std::vector<T>(x.data().begin(), x.data().end()));
  Tensor<T> xc = x;
  detail::record_op<T>("reshape", {x}, out, [xc, out]() mutable {
    if (!xc.requires_grad()) return;
    auto og = out.grad();
    T* dx = xc.grad().data();
    for (size_t i = 0; i < og.size(); ++i) dx[i] += og[i];
  });
  return out;
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, size_t dim, std::int64_t start, std::int64_t length) {
  if (dim >= x.rank()) throw dimension_error("narrow dim out of range");
  if (start < 0 || length < 1 || start + length > x.dim(dim)) throw dimension_error("narrow slice out of range");
  const std::int64_t outer = prod_range(x.shape(), 0, dim);
  const std::int64_t n = x.dim(dim);
  const std::int64_t inner = prod_range(x.shape(), dim + 1, x.rank());

  Shape out_shape = x.shape();
  out_shape[dim] = length;
  Tensor<T> out(out_shape);
  const T* xp = x.ptr();
  T* op = out.ptr();
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy(xp + (o * n + start) * inner, xp + (o * n + start + length) * inner, op + o * length * inner);

  Tensor<T> xc = x;
  detail::record_op<T>("narrow", {x}, out, [xc, out, outer, n, inner, start, length]() mutable {
    if (!xc.requires_grad()) return;
    auto og = out.grad();
    T* dx = xc.grad().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      const T* gsrc = og.data() + o * length * inner;
      T* ddst = dx + (o * n + start) * inner;
      for (std::int64_t i = 0; i < length * inner; ++i) ddst[i] += gsrc[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, size_t dim) {
  if (parts.empty()) throw contract_error("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (dim >= first.size()) throw dimension_error("concat dim out of range");
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw dimension_error("concat rank mismatch");
    for (size_t d = 0; d < first.size(); ++d)
      if (d != dim && p.shape()[d] != first[d]) throw dimension_error("concat non-dim shape mismatch");
    total += p.dim(dim);
  }
  Shape out_shape = first;
  out_shape[dim] = total;
  Tensor<T> out(out_shape);
  const std::int64_t outer = prod_range(out_shape, 0, dim);
  const std::int64_t inner = prod_range(out_shape, dim + 1, out_shape.size());
  T* op = out.ptr();
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const std::int64_t len = p.dim(dim);
    const T* pp = p.ptr();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy(pp + o * len * inner, pp + (o + 1) * len * inner, op + (o * total + offset) * inner);
    offset += len;
  }

  std::vector<Tensor<T>> parts_copy = parts;
  detail::record_op<T>("concat", parts, out, [parts_copy, out, outer, inner, total, dim]() mutable {
    auto og = out.grad();
    std::int64_t offset = 0;
    for (auto& p : parts_copy) {
      const std::int64_t len = p.dim(dim);
      if (p.requires_grad()) {
        T* dp = p.grad().data();
        for (std::int64_t o = 0; o < outer; ++o) {
          const T* gsrc = og.data() + (o * total + offset) * inner;
          T* ddst = dp + o * len * inner;
          for (std::int64_t i = 0; i < len * inner; ++i) ddst[i] += gsrc[i];
        }
      }
      offset += len;
    }
  });
  return out;
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, size_t dim) {
  if (dim >= x.rank()) throw dimension_error("reduce_mean dim out of range");
  const std::int64_t outer = prod_range(x.shape(), 0, dim);
  const std::int64_t n = x.dim(dim);
  const std::int64_t inner = prod_range(x.shape(), dim + 1, x.rank());
  Shape out_shape;
  for (size_t d = 0; d < x.rank(); ++d)
    if (d != dim) out_shape.push_back(x.shape()[d]);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor<T> out(out_shape);
  const T* xp = x.ptr();
  T* op = out.ptr();
  const T inv = T(1) / static_cast<T>(n);
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      T s = T(0);
      for (std::int64_t j = 0; j < n; ++j) s += xp[(o * n + j) * inner + i];
      op[o * inner + i] = s * inv;
    }
  Tensor<T> xc = x;
  detail::record_op<T>("reduce_mean", {x}, out, [xc, out, outer, n, inner, inv]() mutable {
    if (!xc.requires_grad()) return;
    auto og = out.grad();
    T* dx = xc.grad().data();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t j = 0; j < n; ++j)
        for (std::int64_t i = 0; i < inner; ++i) dx[(o * n + j) * inner + i] += og[static_cast<size_t>(o * inner + i)] * inv;
  });
  return out;
}

template <typename T>
Tensor<T> repeat_dim(const Tensor<T>& x, size_t dim, std::int64_t n) {
  if (dim > x.rank()) throw dimension_error("repeat_dim position out of range");
  if (n < 1) throw dimension_error("repeat_dim count must be >= 1");
  const std::int64_t outer = prod_range(x.shape(), 0, dim);
  const std::int64_t inner = prod_range(x.shape(), dim, x.rank());
  Shape out_shape(x.shape());
  out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(dim), n);
  Tensor<T> out(out_shape);
  const T* xp = x.ptr();
  T* op = out.ptr();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t j = 0; j < n; ++j)
      std::copy(xp + o * inner, xp + (o + 1) * inner, op + (o * n + j) * inner);
  Tensor<T> xc = x;
  detail::record_op<T>("repeat_dim", {x}, out, [xc, out, outer, n, inner]() mutable {
    if (!xc.requires_grad()) return;
    auto og = out.grad();
    T* dx = xc.grad().data();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t j = 0; j < n; ++j)
        for (std::int64_t i = 0; i < inner; ++i) dx[o * inner + i] += og[static_cast<size_t>((o * n + j) * inner + i)];
  });
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  Tensor<T> out(Shape{1});
  T s = T(0);
  const T* xp = x.ptr();
  for (std::int64_t i = 0; i < x.numel(); ++i) s += xp[i];
  out.ptr()[0] = s;
  Tensor<T> xc = x;
  detail::record_op<T>("sum_all", {x}, out, [xc, out]() mutable {
    if (!xc.requires_grad()) return;
    const T g = out.grad()[0];
    T* dx = xc.grad().data();
    for (std::int64_t i = 0; i < xc.numel(); ++i) dx[i] += g;
  });
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  Tensor<T> out(Shape{1});
  T s = T(0);
  const T* xp = x.ptr();
  for (std::int64_t i = 0; i < x.numel(); ++i) s += xp[i];
  const T inv = T(1) / static_cast<T>(x.numel());
  out.ptr()[0] = s * inv;
  Tensor<T> xc = x;
  detail::record_op<T>("mean_all", {x}, out, [xc, out, inv]() mutable {
    if (!xc.requires_grad()) return;
    const T g = out.grad()[0] * inv;
    T* dx = xc.grad().data();
    for (std::int64_t i = 0; i < xc.numel(); ++i) dx[i] += g;
  });
  return out;
}

// ---------------------------------------------------------------------------
// explicit instantiations

#define AFFECT_INSTANTIATE_OPS(T)                                                                       \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);        \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, int, int);                          \
  template Tensor<T> max_pool2d<T>(const Tensor<T>&, int, int);                                        \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                             \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> batch_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&,   \
                                   Tensor<T>&, BatchNormMode, T, T);                                   \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                        \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                     \
  template Tensor<T> tanh_op<T>(const Tensor<T>&);                                                     \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                               \
  template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                                               \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                              \
  template Tensor<T> narrow<T>(const Tensor<T>&, size_t, std::int64_t, std::int64_t);                  \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, size_t);                                 \
  template Tensor<T> reduce_mean<T>(const Tensor<T>&, size_t);                                         \
  template Tensor<T> repeat_dim<T>(const Tensor<T>&, size_t, std::int64_t);                            \
  template Tensor<T> sum_all<T>(const Tensor<T>&);                                                     \
  template Tensor<T> mean_all<T>(const Tensor<T>&);

AFFECT_INSTANTIATE_OPS(float)
AFFECT_INSTANTIATE_OPS(double)

}  // namespace affect
