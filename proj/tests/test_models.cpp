#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "affect/checkpoint.hpp"
#include "affect/gradcheck.hpp"
#include "affect/models.hpp"
#include "affect/objectives.hpp"
#include "affect/ops.hpp"
#include "affect/threading.hpp"

using namespace affect;
using namespace affect::models;

namespace {

// Independent layer-by-layer learnable-parameter formula for the bottleneck
// feature extractor (bias-free convs + batch-norm gamma/beta).
std::int64_t resnet_param_formula(const ResNetConfig& c) {
  auto conv = [&](std::int64_t out, std::int64_t in, std::int64_t k) {
    return out * in * k * k + (c.use_batch_norm ? 2 * out : out);  // BN affine or conv bias
  };
  std::int64_t total = conv(c.stem_channels, c.in_channels, c.stem_kernel);
  int c_in = c.stem_channels;
  for (int s = 0; s < 4; ++s) {
    const auto [w1, w2, w3] = c.block_widths[static_cast<size_t>(s)];
    for (int b = 0; b < c.block_replications[static_cast<size_t>(s)]; ++b) {
      total += conv(w1, c_in, 1) + conv(w2, w1, 3) + conv(w3, w2, 1);
      const bool proj = b == 0 && (c_in != w3 || ResNetConfig::stage_stride(s) != 1);
      if (proj) total += conv(w3, c_in, 1);
      c_in = w3;
    }
  }
  return total;
}

std::int64_t lstm_head_param_formula(const LstmConfig& l, int head_k) {
  std::int64_t total = 0;
  for (int layer = 0; layer < l.layers; ++layer) {
    const int d = layer == 0 ? l.input_dim : l.hidden;
    total += static_cast<std::int64_t>(d) * 4 * l.hidden + static_cast<std::int64_t>(l.hidden) * 4 * l.hidden +
             4 * l.hidden;
  }
  return total + static_cast<std::int64_t>(l.hidden) * head_k + head_k;
}

std::int64_t count_prefix(const ModelParams<float>& p, const std::string& excluded1,
                          const std::string& excluded2) {
  std::int64_t n = 0;
  for (const auto& name : p.names()) {
    if (name.starts_with(excluded1) || name.starts_with(excluded2)) continue;
    if (p.learnable(name)) n += p.get(name).numel();
  }
  return n;
}

}  // namespace

TEST_CASE("config invariants") {
  ResNetConfig paper = ResNetConfig::paper();
  CHECK(paper.block_replications == std::array<int, 4>{3, 4, 6, 3});
  CHECK(paper.block_widths[0] == std::array<int, 3>{64, 64, 256});
  CHECK(paper.block_widths[3] == std::array<int, 3>{512, 512, 2048});
  CHECK(paper.stem_kernel == 7);
  CHECK(paper.stem_channels == 64);
  CHECK_NOTHROW(paper.validate());

  ResNetConfig bad = paper;
  bad.block_widths[1] = {128, 64, 512};  // w1 != w2
  CHECK_THROWS_AS(bad.validate(), contract_error);
  bad = paper;
  bad.block_widths[2] = {256, 256, 512};  // not 4x expansion
  CHECK_THROWS_AS(bad.validate(), contract_error);

  CHECK_NOTHROW(ModelConfig::desk(HeadKind::categorical).validate());
  ModelConfig mismatched = ModelConfig::desk(HeadKind::categorical);
  mismatched.lstm.input_dim = 999;
  CHECK_THROWS_AS(mismatched.validate(), contract_error);

  CHECK(head_width(HeadKind::categorical) == 8);
  CHECK(head_width(HeadKind::dimensional) == 2);
}

TEST_CASE("paper-preset parameter count matches the layer-by-layer formula exactly") {
  ModelConfig cfg = ModelConfig::paper(HeadKind::dimensional);
  auto params = build_model<float>(cfg, InitStrategy::random(), 1);

  const std::int64_t feature_params = count_prefix(params, "lstm.", "head.");
  CHECK(feature_params == resnet_param_formula(cfg.resnet));
  // the standard published 50-layer bottleneck extractor size
  CHECK(feature_params == 23508032);

  CHECK(params.count_elements(true) ==
        resnet_param_formula(cfg.resnet) + lstm_head_param_formula(cfg.lstm, head_width(cfg.head)));
}

TEST_CASE("desk-preset parameter count matches the formula") {
  ModelConfig cfg = ModelConfig::desk(HeadKind::categorical);
  auto params = build_model<float>(cfg, InitStrategy::random(), 3);
  CHECK(count_prefix(params, "lstm.", "head.") == resnet_param_formula(cfg.resnet));
  CHECK(params.count_elements(true) ==
        resnet_param_formula(cfg.resnet) + lstm_head_param_formula(cfg.lstm, 8));
}

TEST_CASE("xavier bound and init determinism") {
  CHECK(xavier_bound(100, 100) == doctest::Approx(std::sqrt(6.0 / 200.0)).epsilon(1e-12));
  CHECK(xavier_bound(100, 100) == doctest::Approx(0.17320508).epsilon(1e-6));

  ModelConfig cfg = ModelConfig::desk(HeadKind::dimensional);
  auto a = build_model<float>(cfg, InitStrategy::random(), 7);
  auto b = build_model<float>(cfg, InitStrategy::random(), 7);
  REQUIRE(a.names() == b.names());
  for (const auto& name : a.names()) {
    const auto& ta = a.get(name);
    const auto& tb = b.get(name);
    REQUIRE(ta.shape() == tb.shape());
    for (std::int64_t i = 0; i < ta.numel(); ++i)
      CHECK(ta.data()[static_cast<size_t>(i)] == tb.data()[static_cast<size_t>(i)]);
  }

  // weights live inside the Xavier bound
  const auto& w = a.get("head.weight");
  const double bound = xavier_bound(cfg.lstm.hidden, 2);
  for (auto v : w.data()) {
    CHECK(v <= bound);
    CHECK(v >= -bound);
  }
}

TEST_CASE("checkpoint round trip: non-head parameters byte-equal, head fresh") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "affect_ckpt_test";
  fs::remove_all(dir);

  ModelConfig cfg = ModelConfig::desk(HeadKind::categorical);
  auto saved = build_model<float>(cfg, InitStrategy::random(), 11);
  save_checkpoint(dir, cfg, saved, {{"note", "unit"}});

  // full reload is bit-exact
  auto loaded = load_checkpoint(dir);
  REQUIRE(loaded.params.names() == saved.names());
  for (const auto& name : saved.names())
    for (std::int64_t i = 0; i < saved.get(name).numel(); ++i)
      CHECK(loaded.params.get(name).data()[static_cast<size_t>(i)] ==
            saved.get(name).data()[static_cast<size_t>(i)]);

  // init-from-checkpoint: non-head equal, head freshly drawn
  std::vector<std::string> loaded_names;
  auto restored = build_model<float>(cfg, InitStrategy::pretrained(dir), 12, &loaded_names);
  CHECK(!loaded_names.empty());
  bool head_differs = false;
  for (const auto& name : restored.names()) {
    if (name.starts_with("head.")) {
      for (std::int64_t i = 0; i < restored.get(name).numel(); ++i)
        head_differs = head_differs || restored.get(name).data()[static_cast<size_t>(i)] !=
                                           saved.get(name).data()[static_cast<size_t>(i)];
    } else {
      for (std::int64_t i = 0; i < restored.get(name).numel(); ++i)
        CHECK(restored.get(name).data()[static_cast<size_t>(i)] ==
              saved.get(name).data()[static_cast<size_t>(i)]);
    }
  }
  CHECK(head_differs);

  // a dimensional head (2 units) loads the same trunk even though the saved
  // head had 8 units
  ModelConfig dim_cfg = cfg;
  dim_cfg.head = HeadKind::dimensional;
  CHECK_NOTHROW(build_model<float>(dim_cfg, InitStrategy::pretrained(dir), 13));

  // mismatched trunk shapes are rejected with the offending name
  ModelConfig other = cfg;
  other.resnet.stem_channels = 16;
  try {
    build_model<float>(other, InitStrategy::pretrained(dir), 13);
    FAIL("expected incompatible-checkpoint error");
  } catch (const contract_error& e) {
    CHECK(std::string(e.what()).find("stem.conv.weight") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("bottleneck: zero residual branch with identity shortcut is relu(x)") {
  // two blocks in stage 1 so block 1 has an identity shortcut; no batch norm
  // so zeroing conv weights and biases nulls the residual branch
  ModelConfig cfg = ModelConfig::desk(HeadKind::dimensional);
  cfg.resnet.use_batch_norm = false;
  cfg.resnet.block_replications = {2, 1, 1, 1};
  auto params = build_model<float>(cfg, InitStrategy::random(), 5);
  for (const auto& suffix : {".conv1", ".conv2", ".conv3"}) {
    auto& w = params.get(std::string("stage1.block1") + suffix + ".weight");
    std::fill(w.data().begin(), w.data().end(), 0.0f);
    auto& b = params.get(std::string("stage1.block1") + suffix + ".bias");
    std::fill(b.data().begin(), b.data().end(), 0.0f);
  }
  Rng rng(17);
  Tensor<float> x(Shape{1, 16, 5, 5});
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  auto y = bottleneck_forward(params, cfg.resnet, 0, 1, x, Mode::eval);
  REQUIRE(y.shape() == x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const float expect = std::max(x.data()[static_cast<size_t>(i)], 0.0f);
    CHECK(y.data()[static_cast<size_t>(i)] == expect);
  }

  // zero input with zero biases stays zero (block 0 has a projection)
  Tensor<float> zero(Shape{1, 8, 5, 5});
  auto& pw = params.get("stage1.block0.proj.bias");
  std::fill(pw.data().begin(), pw.data().end(), 0.0f);
  for (const auto& suffix : {".conv1", ".conv2", ".conv3"}) {
    auto& b = params.get(std::string("stage1.block0") + suffix + ".bias");
    std::fill(b.data().begin(), b.data().end(), 0.0f);
  }
  auto y0 = bottleneck_forward(params, cfg.resnet, 0, 0, zero, Mode::eval);
  for (auto v : y0.data()) CHECK(v == 0.0f);
}

TEST_CASE("bottleneck matches a straight-line composition of primitives") {
  ModelConfig cfg = ModelConfig::desk(HeadKind::dimensional);
  auto params = build_model<float>(cfg, InitStrategy::random(), 23);
  Rng rng(29);
  Tensor<float> x(Shape{2, 8, 7, 7});
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform(0.0, 1.0));

  auto via_block = bottleneck_forward(params, cfg.resnet, 0, 0, x, Mode::eval);

  auto bn = [&](const std::string& p, const Tensor<float>& t) {
    return batch_norm(t, params.get(p + ".gamma"), params.get(p + ".beta"), params.get(p + ".running_mean"),
                      params.get(p + ".running_var"), BatchNormMode::eval);
  };
  auto manual = relu(bn("stage1.block0.bn1", conv2d(x, params.get("stage1.block0.conv1.weight"), 1, 0)));
  manual = relu(bn("stage1.block0.bn2", conv2d(manual, params.get("stage1.block0.conv2.weight"), 1, 1)));
  manual = bn("stage1.block0.bn3", conv2d(manual, params.get("stage1.block0.conv3.weight"), 1, 0));
  auto shortcut = bn("stage1.block0.proj_bn", conv2d(x, params.get("stage1.block0.proj.weight"), 1, 0));
  manual = relu(add(manual, shortcut));

  REQUIRE(via_block.shape() == manual.shape());
  for (std::int64_t i = 0; i < manual.numel(); ++i)
    CHECK(via_block.data()[static_cast<size_t>(i)] == manual.data()[static_cast<size_t>(i)]);
}

TEST_CASE("extract_features widths for both presets") {
  set_num_threads(4);
  {
    ModelConfig cfg = ModelConfig::desk(HeadKind::dimensional);
    auto params = build_model<float>(cfg, InitStrategy::random(), 2);
    autograd::NoGradGuard guard;
    Tensor<float> frames(Shape{3, 1, 32, 32}, 0.25f);
    auto f = extract_features(params, cfg.resnet, frames, Mode::eval);
    CHECK(f.shape() == Shape{3, 64});

    // identical frames give identical feature rows
    for (std::int64_t d = 0; d < f.dim(1); ++d) {
      CHECK(f.at({0, d}) == f.at({1, d}));
      CHECK(f.at({1, d}) == f.at({2, d}));
    }

    Tensor<float> wrong(Shape{1, 1, 16, 16});
    CHECK_THROWS_AS(extract_features(params, cfg.resnet, wrong, Mode::eval), dimension_error);
  }
  {
    ModelConfig cfg = ModelConfig::paper(HeadKind::dimensional);
    auto params = build_model<float>(cfg, InitStrategy::random(), 2);
    autograd::NoGradGuard guard;
    Tensor<float> frame(Shape{1, 3, 150, 150}, 0.5f);
    auto f = extract_features(params, cfg.resnet, frame, Mode::eval);
    CHECK(f.shape() == Shape{1, 2048});
  }
  set_num_threads(1);
}

TEST_CASE("lstm matches a hand-written scalar cell oracle") {
  LstmConfig lc{1, 1, 1};
  ModelConfig cfg = ModelConfig::desk(HeadKind::dimensional);
  cfg.lstm = lc;
  // build a standalone parameter set holding just this lstm
  ModelParams<float> params;
  // gate order (i, f, g, o)
  params.add("lstm.layer0.w_ih", Tensor<float>(Shape{1, 4}, std::vector<float>{0.5f, -0.3f, 0.8f, 0.2f}), true);
  params.add("lstm.layer0.w_hh", Tensor<float>(Shape{1, 4}, std::vector<float>{0.1f, 0.4f, -0.6f, 0.7f}), true);
  params.add("lstm.layer0.bias", Tensor<float>(Shape{4}, std::vector<float>{0.05f, -0.1f, 0.2f, 0.0f}), true);

  Tensor<float> input(Shape{1, 2, 1}, std::vector<float>{0.9f, -0.4f});
  auto out = lstm_forward(params, lc, input);
  REQUIRE(out.shape() == Shape{1, 2, 1});

  // scalar recurrence oracle
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  double h = 0.0, c = 0.0;
  std::vector<double> expected;
  for (double x : {0.9, -0.4}) {
    const double i_g = sig(0.5 * x + 0.1 * h + 0.05);
    const double f_g = sig(-0.3 * x + 0.4 * h - 0.1);
    const double g_g = std::tanh(0.8 * x - 0.6 * h + 0.2);
    const double o_g = sig(0.2 * x + 0.7 * h + 0.0);
    c = f_g * c + i_g * g_g;
    h = o_g * std::tanh(c);
    expected.push_back(h);
  }
  CHECK(out.at({0, 0, 0}) == doctest::Approx(expected[0]).epsilon(1e-6));
  CHECK(out.at({0, 1, 0}) == doctest::Approx(expected[1]).epsilon(1e-6));

  // T=1 equals a single cell step
  Tensor<float> one(Shape{1, 1, 1}, std::vector<float>{0.9f});
  auto out1 = lstm_forward(params, lc, one);
  CHECK(out1.at({0, 0, 0}) == out.at({0, 0, 0}));
}

TEST_CASE("lstm zero weights give zero outputs") {
  LstmConfig lc{2, 3, 4};
  ModelParams<float> params;
  for (int l = 0; l < 2; ++l) {
    const std::string p = "lstm.layer" + std::to_string(l);
    const int d = l == 0 ? 4 : 3;
    params.add(p + ".w_ih", Tensor<float>(Shape{d, 12}), true);
    params.add(p + ".w_hh", Tensor<float>(Shape{3, 12}), true);
    params.add(p + ".bias", Tensor<float>(Shape{12}), true);
  }
  Rng rng(3);
  Tensor<float> input(Shape{2, 5, 4});
  for (auto& v : input.data()) v = static_cast<float>(rng.uniform(-2.0, 2.0));
  auto out = lstm_forward(params, lc, input);
  for (auto v : out.data()) CHECK(v == 0.0f);
}

TEST_CASE("model_forward shapes and batch behaviour") {
  ModelConfig cfg = ModelConfig::desk(HeadKind::categorical);
  auto params = build_model<float>(cfg, InitStrategy::random(), 9);
  autograd::NoGradGuard guard;

  // the training framework's 150-frame windows
  Tensor<float> clip(Shape{2, 150, 1, 32, 32}, 0.3f);
  auto out = model_forward(params, cfg, clip, Mode::eval);
  CHECK(out.shape() == Shape{2, 150, 8});

  Tensor<float> single(Shape{1, 1, 1, 32, 32}, 0.3f);
  ModelConfig dim_cfg = ModelConfig::desk(HeadKind::dimensional);
  auto dim_params = build_model<float>(dim_cfg, InitStrategy::random(), 9);
  auto one = model_forward(dim_params, dim_cfg, single, Mode::eval);
  CHECK(one.shape() == Shape{1, 1, 2});
}

TEST_CASE("permuting the batch permutes outputs identically in eval mode") {
  ModelConfig cfg = ModelConfig::desk(HeadKind::dimensional);
  auto params = build_model<float>(cfg, InitStrategy::random(), 21);
  autograd::NoGradGuard guard;
  Rng rng(77);
  Tensor<float> a(Shape{1, 3, 1, 32, 32});
  Tensor<float> b(Shape{1, 3, 1, 32, 32});
  for (auto& v : a.data()) v = static_cast<float>(rng.uniform(0.0, 1.0));
  for (auto& v : b.data()) v = static_cast<float>(rng.uniform(0.0, 1.0));

  auto cat = [&](const Tensor<float>& x, const Tensor<float>& y) {
    return concat(std::vector<Tensor<float>>{x, y}, 0);
  };
  auto ab = model_forward(params, cfg, cat(a, b), Mode::eval);
  auto ba = model_forward(params, cfg, cat(b, a), Mode::eval);
  for (std::int64_t t = 0; t < 3; ++t)
    for (std::int64_t k = 0; k < 2; ++k) {
      CHECK(ab.at({0, t, k}) == ba.at({1, t, k}));
      CHECK(ab.at({1, t, k}) == ba.at({0, t, k}));
    }
}

TEST_CASE("with batch norm disabled, per-sample outputs are independent of batch mates") {
  ModelConfig cfg = ModelConfig::desk(HeadKind::dimensional);
  cfg.resnet.use_batch_norm = false;
  auto params = build_model<float>(cfg, InitStrategy::random(), 31);
  autograd::NoGradGuard guard;
  Rng rng(78);
  Tensor<float> a(Shape{1, 2, 1, 32, 32});
  Tensor<float> b(Shape{1, 2, 1, 32, 32});
  for (auto& v : a.data()) v = static_cast<float>(rng.uniform(0.0, 1.0));
  for (auto& v : b.data()) v = static_cast<float>(rng.uniform(0.0, 1.0));

  auto alone = model_forward(params, cfg, a, Mode::eval);
  auto batched = model_forward(params, cfg, concat(std::vector<Tensor<float>>{a, b}, 0), Mode::eval);
  for (std::int64_t t = 0; t < 2; ++t)
    for (std::int64_t k = 0; k < 2; ++k) CHECK(alone.at({0, t, k}) == batched.at({0, t, k}));
}

TEST_CASE("eval-mode model_forward is a pure function of params and input") {
  ModelConfig cfg = ModelConfig::desk(HeadKind::dimensional);
  auto params = build_model<float>(cfg, InitStrategy::random(), 41);
  autograd::NoGradGuard guard;
  Tensor<float> clip(Shape{1, 2, 1, 32, 32}, 0.4f);
  auto before_rm = params.get("stem.bn.running_mean").clone();
  auto y1 = model_forward(params, cfg, clip, Mode::eval);
  auto y2 = model_forward(params, cfg, clip, Mode::eval);
  for (std::int64_t i = 0; i < y1.numel(); ++i)
    CHECK(y1.data()[static_cast<size_t>(i)] == y2.data()[static_cast<size_t>(i)]);
  // eval mode leaves running stats untouched
  for (std::int64_t i = 0; i < before_rm.numel(); ++i)
    CHECK(params.get("stem.bn.running_mean").data()[static_cast<size_t>(i)] ==
          before_rm.data()[static_cast<size_t>(i)]);
}

TEST_CASE("full desk model gradient passes finite differences on sampled parameters") {
  ModelConfig cfg = ModelConfig::desk(HeadKind::dimensional);
  auto params = build_model<double>(cfg, InitStrategy::random(), 55);

  Rng rng(56);
  Tensor<double> clip(Shape{1, 2, 1, 32, 32});
  for (auto& v : clip.data()) v = rng.uniform(0.0, 1.0);
  Tensor<double> gold(Shape{1, 2}, std::vector<double>{0.3, -0.2});

  auto fn = [&](std::vector<Tensor<double>>&) {
    auto out = model_forward(params, cfg, clip, Mode::train);
    auto pred = reshape(narrow(out, 2, 0, 1), Shape{1, 2});
    return objectives::ccc_loss(pred, gold);
  };

  // five parameters spanning the stem, stages, lstm and head
  std::vector<Tensor<double>> probes;
  for (const auto& name : {"stem.conv.weight", "stage2.block0.conv2.weight", "stage4.block0.conv3.weight",
                           "lstm.layer0.w_ih", "head.weight"})
    probes.push_back(params.get(name));
  Rng sample_rng(57);
  CHECK(grad_check(fn, probes, 1e-5, 4, &sample_rng) < 1e-3);
}
