#include <doctest.h>

#include <cmath>

#include "affect/dataset.hpp"
#include "affect/gradcheck.hpp"
#include "affect/objectives.hpp"
#include "affect/ops.hpp"
#include "affect/random.hpp"

using namespace affect;
using namespace affect::objectives;

namespace {

// Independent one-pass CCC oracle via raw moments (different algebraic route
// from the two-pass implementation).
double ccc_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  const double mx = sx / n, my = sy / n;
  const double vx = sxx / n - mx * mx;
  const double vy = syy / n - my * my;
  const double cov = sxy / n - mx * my;
  const double denom = vx + vy + (mx - my) * (mx - my);
  if (denom == 0.0) return 1.0;
  return 2.0 * cov / denom;
}

// Direct binary cross-entropy oracle in float64 (naive formula, safe for
// moderate logits).
double bce_oracle(double x, double z) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return -(z * std::log(s) + (1.0 - z) * std::log(1.0 - s));
}

}  // namespace

TEST_CASE("class_weights examples") {
  // reduced 2-class case: reciprocals 0.1 and 0.025, rescaled to mean 1
  std::vector<std::int64_t> two{10, 40};
  auto w2 = class_weights(two);
  CHECK(w2[0] == doctest::Approx(1.6).epsilon(1e-12));
  CHECK(w2[1] == doctest::Approx(0.4).epsilon(1e-12));

  std::vector<std::int64_t> equal{7, 7, 7};
  auto we = class_weights(equal);
  for (size_t i = 0; i < 3; ++i) CHECK(we[i] == doctest::Approx(1.0));

  // published counts: contempt gets the max weight, neutral the min
  std::vector<std::int64_t> table(data::kReferenceEmotionCounts.begin(), data::kReferenceEmotionCounts.end());
  auto wt = class_weights(table);
  size_t argmax = 0, argmin = 0;
  for (size_t i = 1; i < wt.size(); ++i) {
    if (wt[i] > wt[argmax]) argmax = i;
    if (wt[i] < wt[argmin]) argmin = i;
  }
  CHECK(argmax == static_cast<size_t>(data::Emotion::contempt));
  CHECK(argmin == static_cast<size_t>(data::Emotion::neutral));
  double mean = 0;
  for (size_t i = 0; i < wt.size(); ++i) mean += wt[i];
  CHECK(mean / 8.0 == doctest::Approx(1.0).epsilon(1e-12));

  // weight ordering is the reverse of the count ordering
  for (size_t i = 0; i < wt.size(); ++i)
    for (size_t j = 0; j < wt.size(); ++j)
      if (data::kReferenceEmotionCounts[i] < data::kReferenceEmotionCounts[j]) CHECK(wt[i] > wt[j]);

  std::vector<std::int64_t> zero{1, 0};
  CHECK_THROWS_AS(class_weights(zero), contract_error);
}

TEST_CASE("weighted_sigmoid_ce examples") {
  ClassWeights unit{{1.0}};

  // logit 0, label 1 -> ln 2
  Tensor<double> x0(Shape{1, 1}, std::vector<double>{0.0});
  Tensor<double> z1(Shape{1, 1}, std::vector<double>{1.0});
  CHECK(weighted_sigmoid_ce(x0, z1, unit).item() == doctest::Approx(std::log(2.0)).epsilon(1e-9));

  // saturated logit: effectively zero loss, never NaN
  Tensor<double> x20(Shape{1, 1}, std::vector<double>{20.0});
  CHECK(weighted_sigmoid_ce(x20, z1, unit).item() == doctest::Approx(2.06e-9).epsilon(0.01));

  // x=1, z=0, weight 2 -> 2 * (-log(1 - sigmoid(1)))
  ClassWeights two{{2.0}};
  Tensor<double> x1(Shape{1, 1}, std::vector<double>{1.0});
  Tensor<double> z0(Shape{1, 1}, std::vector<double>{0.0});
  const double expected = 2.0 * bce_oracle(1.0, 0.0);
  CHECK(expected == doctest::Approx(2.6266).epsilon(1e-4));
  CHECK(weighted_sigmoid_ce(x1, z0, two).item() == doctest::Approx(expected).epsilon(1e-12));

  // labels outside {0,1} rejected
  Tensor<double> zbad(Shape{1, 1}, std::vector<double>{0.5});
  CHECK_THROWS_AS(weighted_sigmoid_ce(x1, zbad, unit), contract_error);
}

TEST_CASE("weighted_sigmoid_ce with unit weights equals the unweighted BCE oracle") {
  Rng rng(42);
  ClassWeights unit{std::vector<double>(8, 1.0)};
  for (int it = 0; it < 20; ++it) {
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.uniform_int(6));
    Tensor<double> x(Shape{n, 8});
    Tensor<double> z(Shape{n, 8});
    double expected = 0.0;
    for (std::int64_t i = 0; i < n * 8; ++i) {
      x.data()[static_cast<size_t>(i)] = rng.uniform(-8.0, 8.0);
      z.data()[static_cast<size_t>(i)] = rng.uniform() < 0.3 ? 1.0 : 0.0;
      expected += bce_oracle(x.data()[static_cast<size_t>(i)], z.data()[static_cast<size_t>(i)]);
    }
    expected /= static_cast<double>(n * 8);
    CHECK(weighted_sigmoid_ce(x, z, unit).item() == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("weighted_sigmoid_ce stays finite across the full logit range") {
  ClassWeights unit{{1.0, 1.0}};
  for (double logit : {-50.0, -20.0, -1.0, 0.0, 1.0, 20.0, 50.0}) {
    Tensor<double> x(Shape{1, 2}, std::vector<double>{logit, -logit});
    Tensor<double> z(Shape{1, 2}, std::vector<double>{1.0, 0.0});
    x.set_requires_grad(true);
    auto loss = weighted_sigmoid_ce(x, z, unit);
    CHECK(std::isfinite(loss.item()));
    CHECK(loss.item() >= 0.0);
    backward(loss);
    for (double g : x.grad()) CHECK(std::isfinite(g));
  }
}

TEST_CASE("weighted_sigmoid_ce scales rows by the mean active-class weight") {
  ClassWeights w{{3.0, 1.0}};
  Tensor<double> x(Shape{1, 2}, std::vector<double>{0.7, -0.2});
  Tensor<double> z(Shape{1, 2}, std::vector<double>{1.0, 1.0});
  // multi-hot row: mean of the two active weights = 2
  const double expected = 2.0 * (bce_oracle(0.7, 1.0) + bce_oracle(-0.2, 1.0)) / 2.0;
  CHECK(weighted_sigmoid_ce(x, z, w).item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("weighted_sigmoid_ce gradient matches finite differences") {
  Rng rng(7);
  ClassWeights w{{2.0, 0.5, 1.0, 0.25, 1.5, 0.75, 1.25, 1.0}};
  auto fn = [&w](std::vector<Tensor<double>>& in) {
    Tensor<double> z(Shape{3, 8});
    Rng zr(99);
    for (auto& v : z.data()) v = zr.uniform() < 0.4 ? 1.0 : 0.0;
    return weighted_sigmoid_ce(in[0], z, w);
  };
  Tensor<double> x(Shape{3, 8});
  for (auto& v : x.data()) v = rng.uniform(-3.0, 3.0);
  x.set_requires_grad(true);
  CHECK(grad_check(fn, {x}) < 1e-8);
}

TEST_CASE("ccc examples and edge rules") {
  std::vector<double> a{1.0, 2.0, 3.0};

  auto perfect = ccc(a, a);
  CHECK(perfect.rho_c == 1.0);

  std::vector<double> constant{2.0, 2.0, 2.0};
  CHECK(ccc(constant, a).rho_c == 0.0);

  std::vector<double> b{2.0, 4.0, 6.0};
  auto r = ccc(a, b);
  CHECK(r.rho_c == doctest::Approx(4.0 / 11.0).epsilon(1e-12));
  CHECK(r.mean_pred == doctest::Approx(2.0));
  CHECK(r.mean_gold == doctest::Approx(4.0));
  CHECK(r.var_pred == doctest::Approx(2.0 / 3.0));
  CHECK(r.var_gold == doctest::Approx(8.0 / 3.0));
  CHECK(r.covariance == doctest::Approx(4.0 / 3.0));
  // components identity
  CHECK(r.rho_c ==
        doctest::Approx(2.0 * r.covariance /
                        (r.var_pred + r.var_gold + (r.mean_pred - r.mean_gold) * (r.mean_pred - r.mean_gold))));

  // identical constants: concordant by convention
  CHECK(ccc(constant, constant).rho_c == 1.0);

  std::vector<double> one{1.0};
  CHECK_THROWS_AS(ccc(one, one), contract_error);
  CHECK_THROWS_AS(ccc(a, one), contract_error);
}

TEST_CASE("ccc matches the one-pass oracle on 100 random series") {
  Rng rng(2024);
  for (int it = 0; it < 100; ++it) {
    const size_t n = 2 + rng.uniform_int(200);
    std::vector<double> x(n), y(n);
    for (size_t i = 0; i < n; ++i) {
      x[i] = rng.uniform(-2.0, 2.0);
      y[i] = 0.5 * x[i] + rng.uniform(-1.0, 1.0);
    }
    CHECK(ccc(x, y).rho_c == doctest::Approx(ccc_oracle(x, y)).epsilon(1e-10));
  }
}

TEST_CASE("ccc properties: symmetry, affine sensitivity, shared-shift invariance") {
  Rng rng(31);
  for (int it = 0; it < 25; ++it) {
    const size_t n = 3 + rng.uniform_int(50);
    std::vector<double> a(n), b(n);
    for (size_t i = 0; i < n; ++i) {
      a[i] = rng.uniform(-1.0, 1.0);
      b[i] = rng.uniform(-1.0, 1.0);
    }
    // exact symmetry
    CHECK(ccc(a, b).rho_c == ccc(b, a).rho_c);

    // scale or bias on one side strictly reduces self-concordance
    std::vector<double> scaled(n), biased(n);
    for (size_t i = 0; i < n; ++i) {
      scaled[i] = 1.7 * a[i];
      biased[i] = a[i] + 0.4;
    }
    CHECK(ccc(a, scaled).rho_c < 1.0);
    CHECK(ccc(a, biased).rho_c < 1.0);

    // the same constant added to BOTH series leaves ccc unchanged
    const double c = rng.uniform(-3.0, 3.0);
    std::vector<double> ac(n), bc(n);
    for (size_t i = 0; i < n; ++i) {
      ac[i] = a[i] + c;
      bc[i] = b[i] + c;
    }
    CHECK(ccc(ac, bc).rho_c == doctest::Approx(ccc(a, b).rho_c).epsilon(1e-9));
  }
}

TEST_CASE("ccc sample-moment flag") {
  std::vector<double> a{1.0, 2.0, 3.0, 5.0};
  std::vector<double> b{1.5, 2.5, 2.0, 4.0};
  auto pop = ccc(a, b, false);
  auto sam = ccc(a, b, true);
  CHECK(sam.var_pred == doctest::Approx(pop.var_pred * 4.0 / 3.0));
  CHECK(sam.covariance == doctest::Approx(pop.covariance * 4.0 / 3.0));
  // the mean gap term makes the two conventions differ
  CHECK(pop.rho_c != sam.rho_c);
}

TEST_CASE("ccc_loss examples") {
  Tensor<float> p(Shape{1, 3}, std::vector<float>{1, 2, 3});
  Tensor<float> g(Shape{1, 3}, std::vector<float>{2, 4, 6});
  CHECK(ccc_loss(p, g).item() == doctest::Approx(7.0 / 11.0).epsilon(1e-5));
  CHECK(ccc_loss(p, p).item() == doctest::Approx(0.0).epsilon(1e-5));

  // constant prediction with varying gold: loss 1, finite gradients
  Tensor<double> pc(Shape{1, 4}, std::vector<double>{0.5, 0.5, 0.5, 0.5});
  Tensor<double> gv(Shape{1, 4}, std::vector<double>{-1, 0, 1, 2});
  pc.set_requires_grad(true);
  auto loss = objectives::ccc_loss(pc, gv);
  CHECK(loss.item() == doctest::Approx(1.0).epsilon(1e-9));
  backward(loss);
  for (double gr : pc.grad()) CHECK(std::isfinite(gr));

  Tensor<float> short_seq(Shape{2, 1});
  CHECK_THROWS_AS(objectives::ccc_loss(short_seq, short_seq), contract_error);
}

TEST_CASE("ccc_loss per-sequence batching averages sequence CCCs") {
  // two sequences with known per-sequence CCC: [1,2,3]/[2,4,6] -> 4/11 and a
  // perfectly matched pair -> 1
  Tensor<double> p(Shape{2, 3}, std::vector<double>{1, 2, 3, -1, 0, 1});
  Tensor<double> g(Shape{2, 3}, std::vector<double>{2, 4, 6, -1, 0, 1});
  const double expected = 1.0 - 0.5 * (4.0 / 11.0 + 1.0);
  CHECK(objectives::ccc_loss(p, g, CccBatching::per_sequence).item() ==
        doctest::Approx(expected).epsilon(1e-9));

  // concatenated batching computes one CCC over the joined series
  std::vector<double> pall{1, 2, 3, -1, 0, 1};
  std::vector<double> gall{2, 4, 6, -1, 0, 1};
  CHECK(objectives::ccc_loss(p, g, CccBatching::concatenated).item() ==
        doctest::Approx(1.0 - ccc_oracle(pall, gall)).epsilon(1e-9));
}

TEST_CASE("ccc_loss gradient matches finite differences on random 8-step sequences") {
  Rng rng(555);
  for (int it = 0; it < 10; ++it) {
    Tensor<double> p(Shape{2, 8});
    Tensor<double> g(Shape{2, 8});
    for (auto& v : p.data()) v = rng.uniform(-1.0, 1.0);
    for (auto& v : g.data()) v = rng.uniform(-1.0, 1.0);
    p.set_requires_grad(true);
    auto fn = [&g](std::vector<Tensor<double>>& in) { return objectives::ccc_loss(in[0], g); };
    CHECK(grad_check(fn, {p}) < 1e-5);
  }
}
