#include "affect/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "affect/models.hpp"
#include "affect/objectives.hpp"
#include "affect/ops.hpp"

namespace affect {

double grad_check(const std::function<Tensor<double>(std::vector<Tensor<double>>&)>& fn,
                  std::vector<Tensor<double>> inputs, double h, int sample_per_input, Rng* rng) {
  Tensor<double> loss = fn(inputs);
  if (loss.numel() != 1) throw contract_error("grad_check function must return a scalar");
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) {
    if (in.requires_grad())
      analytic.emplace_back(in.grad().begin(), in.grad().end());
    else
      analytic.emplace_back();
  }

  auto eval = [&]() {
    autograd::NoGradGuard guard;
    return fn(inputs).item();
  };

  double max_rel = 0.0;
  for (size_t t = 0; t < inputs.size(); ++t) {
    if (!inputs[t].requires_grad()) continue;
    const std::int64_t n = inputs[t].numel();
    std::vector<std::int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    if (sample_per_input > 0 && n > sample_per_input) {
      if (!rng) throw contract_error("grad_check sampling requires an rng");
      // Partial Fisher-Yates for the first sample_per_input slots.
      for (int i = 0; i < sample_per_input; ++i) {
        const auto j = static_cast<size_t>(rng->uniform_int(static_cast<std::int64_t>(i),
                                                            static_cast<std::int64_t>(n - 1)));
        std::swap(idx[static_cast<size_t>(i)], idx[j]);
      }
      idx.resize(static_cast<size_t>(sample_per_input));
    }
    double* xp = inputs[t].ptr();
    for (std::int64_t i : idx) {
      const double orig = xp[i];
      xp[i] = orig + h;
      const double plus = eval();
      xp[i] = orig - h;
      const double minus = eval();
      xp[i] = orig;
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic[t][static_cast<size_t>(i)];
      const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

namespace {

Tensor<double> rand_t(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

std::vector<OpGradReport> gradient_suite(int seeds) {
  std::vector<OpGradReport> reports;
  auto run = [&](const std::string& name, auto&& fn) {
    OpGradReport r{name};
    for (int s = 1; s <= seeds; ++s) r.max_rel_err = std::max(r.max_rel_err, fn(static_cast<std::uint64_t>(s)));
    reports.push_back(std::move(r));
  };

  run("conv2d", [&](std::uint64_t seed) {
    Rng rng(seed);
    auto x = rand_t(Shape{1, 2, 6, 6}, rng);
    auto w = rand_t(Shape{3, 2, 3, 3}, rng);
    auto b = rand_t(Shape{3}, rng);
    for (auto* t : {&x, &w, &b}) t->set_requires_grad(true);
    return grad_check(
        [](std::vector<Tensor<double>>& in) {
          auto y = conv2d(in[0], in[1], in[2], 2, 1);
          return mean_all(mul(y, y));
        },
        {x, w, b});
  });

  run("max_pool2d", [&](std::uint64_t seed) {
    Rng rng(seed);
    auto x = rand_t(Shape{1, 2, 6, 6}, rng);
    x.set_requires_grad(true);
    return grad_check(
        [](std::vector<Tensor<double>>& in) {
          auto y = max_pool2d(in[0], 3, 2);
          return mean_all(mul(y, y));
        },
        {x});
  });

  run("global_avg_pool", [&](std::uint64_t seed) {
    Rng rng(seed);
    auto x = rand_t(Shape{2, 3, 4, 4}, rng);
    x.set_requires_grad(true);
    return grad_check(
        [](std::vector<Tensor<double>>& in) {
          auto y = global_avg_pool(in[0]);
          return mean_all(mul(y, y));
        },
        {x});
  });

  run("linear", [&](std::uint64_t seed) {
    Rng rng(seed);
    auto x = rand_t(Shape{3, 5}, rng);
    auto w = rand_t(Shape{5, 4}, rng);
    auto b = rand_t(Shape{4}, rng);
    for (auto* t : {&x, &w, &b}) t->set_requires_grad(true);
    return grad_check(
        [](std::vector<Tensor<double>>& in) {
          auto y = linear(in[0], in[1], in[2]);
          return mean_all(mul(y, y));
        },
        {x, w, b});
  });

  run("batch_norm", [&](std::uint64_t seed) {
    Rng rng(seed);
    auto x = rand_t(Shape{2, 3, 4, 4}, rng);
    auto g = rand_t(Shape{3}, rng, 0.5, 1.5);
    auto b = rand_t(Shape{3}, rng);
    for (auto* t : {&x, &g, &b}) t->set_requires_grad(true);
    return grad_check(
        [](std::vector<Tensor<double>>& in) {
          Tensor<double> rm(Shape{3});
          Tensor<double> rv(Shape{3}, 1.0);
          auto y = batch_norm(in[0], in[1], in[2], rm, rv, BatchNormMode::train);
          return mean_all(mul(y, y));
        },
        {x, g, b});
  });

  run("elementwise", [&](std::uint64_t seed) {
    Rng rng(seed);
    auto a = rand_t(Shape{4, 4}, rng);
    auto b = rand_t(Shape{4, 4}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    return grad_check(
        [](std::vector<Tensor<double>>& in) {
          auto y = mul(tanh_op(in[0]), sigmoid(in[1]));
          y = add(y, relu(sub(in[0], in[1])));
          return mean_all(div(y, add_scalar(mul(in[1], in[1]), 2.0)));
        },
        {a, b});
  });

  run("lstm_cell", [&](std::uint64_t seed) {
    Rng rng(seed);
    models::LstmConfig lc{1, 3, 2};
    models::ModelParams<double> params;
    auto mk = [&](Shape s, std::int64_t fi, std::int64_t fo) {
      Tensor<double> t(std::move(s));
      const double bound = models::xavier_bound(fi, fo);
      for (auto& v : t.data()) v = rng.uniform(-bound, bound);
      return t;
    };
    params.add("lstm.layer0.w_ih", mk(Shape{2, 12}, 2, 12), true);
    params.add("lstm.layer0.w_hh", mk(Shape{3, 12}, 3, 12), true);
    params.add("lstm.layer0.bias", Tensor<double>(Shape{12}), true);
    auto x = rand_t(Shape{1, 3, 2}, rng);
    x.set_requires_grad(true);
    auto w = params.get("lstm.layer0.w_ih");
    return grad_check(
        [&params, &lc](std::vector<Tensor<double>>& in) {
          auto h = models::lstm_forward(params, lc, in[0]);
          return mean_all(mul(h, h));
        },
        {x, w});
  });

  run("weighted_sigmoid_ce", [&](std::uint64_t seed) {
    Rng rng(seed);
    objectives::ClassWeights w{{2.0, 0.5, 1.0, 0.25, 1.5, 0.75, 1.25, 1.0}};
    auto x = rand_t(Shape{3, 8}, rng, -3.0, 3.0);
    x.set_requires_grad(true);
    Tensor<double> z(Shape{3, 8});
    for (auto& v : z.data()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    return grad_check(
        [&w, z](std::vector<Tensor<double>>& in) { return objectives::weighted_sigmoid_ce(in[0], z, w); },
        {x});
  });

  run("ccc_loss", [&](std::uint64_t seed) {
    Rng rng(seed);
    auto p = rand_t(Shape{2, 8}, rng);
    p.set_requires_grad(true);
    auto g = rand_t(Shape{2, 8}, rng);
    return grad_check(
        [g](std::vector<Tensor<double>>& in) { return objectives::ccc_loss(in[0], g); }, {p});
  });

  run("desk_model", [&](std::uint64_t seed) {
    Rng rng(seed);
    models::ModelConfig cfg = models::ModelConfig::desk(models::HeadKind::dimensional);
    auto params = models::build_model<double>(cfg, models::InitStrategy::random(), seed);
    auto clip = rand_t(Shape{1, 2, 1, 32, 32}, rng, 0.0, 1.0);
    Tensor<double> gold(Shape{1, 2}, std::vector<double>{0.4, -0.1});
    std::vector<Tensor<double>> probes{params.get("stem.conv.weight"),
                                       params.get("stage3.block0.conv2.weight"),
                                       params.get("lstm.layer1.w_hh"), params.get("head.weight")};
    Rng srng(seed ^ 0xbeefull);
    return grad_check(
        [&](std::vector<Tensor<double>>&) {
          auto out = models::model_forward(params, cfg, clip, models::Mode::train);
          auto pred = reshape(narrow(out, 2, 0, 1), Shape{1, 2});
          return objectives::ccc_loss(pred, gold);
        },
        probes, 1e-5, 2, &srng);
  });

  return reports;
}

}  // namespace affect
