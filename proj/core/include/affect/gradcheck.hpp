#pragma once

#include <functional>

#include "affect/random.hpp"
#include "affect/tensor.hpp"

namespace affect {

// Central finite-difference check of reverse-mode gradients, float64 only.
// `fn` maps the inputs to a scalar loss; every input with requires_grad set
// is checked. Returns the max over elements of
//   |analytic - numeric| / max(1, |analytic|, |numeric|).
// When `sample_per_input` > 0, at most that many randomly chosen elements are
// perturbed per input (rng required), otherwise every element is.
double grad_check(const std::function<Tensor<double>(std::vector<Tensor<double>>&)>& fn,
                  std::vector<Tensor<double>> inputs, double h = 1e-5, int sample_per_input = -1,
                  Rng* rng = nullptr);

struct OpGradReport {
  std::string op;
  double max_rel_err = 0.0;
};

// Seeded finite-difference sweep over every differentiable operation the
// models use, including the LSTM cell, both losses and the full small-preset
// model. One entry per op with the max relative error over all seeds.
std::vector<OpGradReport> gradient_suite(int seeds);

}  // namespace affect
