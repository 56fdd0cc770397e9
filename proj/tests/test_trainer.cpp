#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "affect/ops.hpp"
#include "affect/trainer.hpp"

using namespace affect;
using namespace affect::train;

namespace fs = std::filesystem;

namespace {

data::Dataset make_dimensional(int subjects = 3, int frames = 48, std::uint64_t seed = 11) {
  data::SynthConfig cfg = data::SynthConfig::dimensional_desk();
  cfg.subjects = subjects;
  cfg.videos_per_subject = 1;
  cfg.frames_per_video = frames;
  cfg.seed = seed;
  return data::synth_generate(cfg);
}

data::Dataset make_categorical(int subjects = 3, int frames = 64, std::uint64_t seed = 19) {
  data::SynthConfig cfg = data::SynthConfig::categorical_desk();
  cfg.subjects = subjects;
  cfg.videos_per_subject = 1;
  cfg.frames_per_video = frames;
  cfg.seed = seed;
  return data::synth_generate(cfg);
}

HyperParams tiny_hp(int max_epochs = 3, int patience = 2) {
  HyperParams hp = HyperParams::desk();
  hp.max_epochs = max_epochs;
  hp.patience = patience;
  hp.seed = 5;
  hp.train_fraction = 0.7;
  return hp;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged while moments decay") {
  models::ModelParams<float> params;
  params.add("w", Tensor<float>(Shape{3}, std::vector<float>{1.0f, -2.0f, 0.5f}), true);
  params.get("w").zero_grad();

  HyperParams hp = tiny_hp();
  Adam adam(hp);
  adam.step(params);
  CHECK(params.get("w").data()[0] == 1.0f);
  CHECK(params.get("w").data()[1] == -2.0f);
  CHECK(params.get("w").data()[2] == 0.5f);
  CHECK(adam.steps_taken() == 1);
}

TEST_CASE("adam: first step with constant gradient moves by about the learning rate") {
  models::ModelParams<float> params;
  params.add("w", Tensor<float>(Shape{2}, std::vector<float>{0.0f, 0.0f}), true);
  params.get("w").zero_grad();
  params.get("w").grad()[0] = 0.25f;   // positive gradient
  params.get("w").grad()[1] = -3.0f;   // negative gradient

  HyperParams hp = tiny_hp();
  hp.learning_rate = 1e-2;
  Adam adam(hp);
  adam.step(params);
  // bias-corrected m_hat / sqrt(v_hat) = sign(g)
  CHECK(params.get("w").data()[0] == doctest::Approx(-1e-2).epsilon(1e-4));
  CHECK(params.get("w").data()[1] == doctest::Approx(1e-2).epsilon(1e-4));
}

TEST_CASE("adam: frozen prefixes and non-learnable buffers are untouched") {
  models::ModelParams<float> params;
  params.add("stem.w", Tensor<float>(Shape{1}, std::vector<float>{1.0f}), true);
  params.add("head.w", Tensor<float>(Shape{1}, std::vector<float>{1.0f}), true);
  params.add("bn.running_mean", Tensor<float>(Shape{1}, std::vector<float>{1.0f}), false);
  for (const auto& n : params.names())
    if (params.learnable(n)) {
      params.get(n).zero_grad();
      params.get(n).grad()[0] = 1.0f;
    }

  HyperParams hp = tiny_hp();
  hp.freeze = {"stem."};
  Adam adam(hp);
  adam.step(params);
  CHECK(params.get("stem.w").data()[0] == 1.0f);       // frozen
  CHECK(params.get("head.w").data()[0] != 1.0f);       // updated
  CHECK(params.get("bn.running_mean").data()[0] == 1.0f);
}

TEST_CASE("adam aborts on a non-finite gradient naming the parameter") {
  models::ModelParams<float> params;
  params.add("lstm.w_ih", Tensor<float>(Shape{2}, std::vector<float>{0.0f, 0.0f}), true);
  params.get("lstm.w_ih").zero_grad();
  params.get("lstm.w_ih").grad()[1] = std::numeric_limits<float>::quiet_NaN();
  Adam adam(tiny_hp());
  try {
    adam.step(params);
    FAIL("expected numeric_error");
  } catch (const numeric_error& e) {
    CHECK(std::string(e.what()).find("lstm.w_ih") != std::string::npos);
  }
}

TEST_CASE("one optimizer step changes every layer group") {
  auto ds = make_dimensional(3, 48);
  models::ModelConfig cfg = models::ModelConfig::desk(models::HeadKind::dimensional);
  auto params = models::build_model<float>(cfg, models::InitStrategy::random(), 7);
  auto before = params.clone();

  // one training batch straight from the first video
  Tensor<float> clip(Shape{1, 16, 1, 32, 32});
  const auto& frames = ds.videos[0].frames;
  std::copy(frames.data().begin(), frames.data().begin() + clip.numel(), clip.ptr());
  Tensor<float> gold_a(Shape{1, 16});
  Tensor<float> gold_v(Shape{1, 16});
  for (int f = 0; f < 16; ++f) {
    gold_a.at({0, f}) = static_cast<float>(ds.videos[0].traces[0].values[static_cast<size_t>(f)].arousal);
    gold_v.at({0, f}) = static_cast<float>(ds.videos[0].traces[0].values[static_cast<size_t>(f)].valence);
  }

  auto out = models::model_forward(params, cfg, clip, models::Mode::train);
  auto pred_a = reshape(narrow(out, 2, 0, 1), Shape{1, 16});
  auto pred_v = reshape(narrow(out, 2, 1, 1), Shape{1, 16});
  auto loss = mul_scalar(add(objectives::ccc_loss(pred_a, gold_a), objectives::ccc_loss(pred_v, gold_v)), 0.5f);
  REQUIRE(loss.item() > 0.0f);
  backward(loss);
  Adam adam(tiny_hp());
  adam.step(params);

  auto group_changed = [&](const std::string& prefix) {
    for (const auto& name : params.names()) {
      if (!name.starts_with(prefix) || !params.learnable(name)) continue;
      for (std::int64_t i = 0; i < params.get(name).numel(); ++i)
        if (params.get(name).data()[static_cast<size_t>(i)] !=
            before.get(name).data()[static_cast<size_t>(i)])
          return true;
    }
    return false;
  };
  CHECK(group_changed("stem."));
  CHECK(group_changed("stage1."));
  CHECK(group_changed("stage2."));
  CHECK(group_changed("stage3."));
  CHECK(group_changed("stage4."));
  CHECK(group_changed("lstm."));
  CHECK(group_changed("head."));
}

TEST_CASE("finetune: deterministic reports and exact best-checkpoint replay") {
  auto ds = make_dimensional();
  HyperParams hp = tiny_hp(3, 2);
  models::ModelConfig cfg = models::ModelConfig::desk(models::HeadKind::dimensional);

  const auto out1 = temp_dir("affect_ft_a");
  const auto out2 = temp_dir("affect_ft_b");
  auto r1 = finetune_dimensional(ds, hp, cfg, models::InitStrategy::random(), out1, false);
  auto r2 = finetune_dimensional(ds, hp, cfg, models::InitStrategy::random(), out2, false);

  // bit-identical reports (wall time excluded)
  CHECK(r1.report.deterministic_json() == r2.report.deterministic_json());

  // the saved checkpoint reproduces the recorded best validation metric
  const auto split = data::subject_split(ds.videos, hp.train_fraction, hp.seed);
  auto metrics = evaluate_checkpoint(r1.checkpoint_dir, ds, split.val_videos, hp);
  CHECK(metrics.mean_raw() == r1.report.best_val_metric);

  // evaluating twice gives identical numbers
  auto metrics2 = evaluate_checkpoint(r1.checkpoint_dir, ds, split.val_videos, hp);
  CHECK(metrics.arousal_raw == metrics2.arousal_raw);
  CHECK(metrics.valence_raw == metrics2.valence_raw);

  // empty chain: "after" equals "before"
  post::ChainConfig empty_chain;
  auto with_chain = evaluate_checkpoint(r1.checkpoint_dir, ds, split.val_videos, hp, &empty_chain);
  CHECK(with_chain.arousal_post == with_chain.arousal_raw);
  CHECK(with_chain.valence_post == with_chain.valence_raw);

  fs::remove_all(out1);
  fs::remove_all(out2);
}

TEST_CASE("early stopping fires exactly patience epochs after the best epoch") {
  auto ds = make_dimensional();
  HyperParams hp = tiny_hp(12, 3);
  // a vanishing learning rate freezes the model, so epoch 1 stays the best
  hp.learning_rate = 1e-30;
  models::ModelConfig cfg = models::ModelConfig::desk(models::HeadKind::dimensional);
  const auto out = temp_dir("affect_ft_plateau");
  auto r = finetune_dimensional(ds, hp, cfg, models::InitStrategy::random(), out, false);
  CHECK(r.report.stop_reason == "patience");
  CHECK(r.report.best_epoch == 1);
  CHECK(static_cast<int>(r.report.epochs.size()) == r.report.best_epoch + hp.patience);
  fs::remove_all(out);
}

TEST_CASE("finetune stops at max_epochs when improvement keeps coming or patience never fires") {
  auto ds = make_dimensional();
  HyperParams hp = tiny_hp(2, 1);
  models::ModelConfig cfg = models::ModelConfig::desk(models::HeadKind::dimensional);
  const auto out = temp_dir("affect_ft_short");
  auto r = finetune_dimensional(ds, hp, cfg, models::InitStrategy::random(), out, false);
  CHECK((r.report.stop_reason == "max_epochs" || r.report.stop_reason == "patience"));
  CHECK(static_cast<int>(r.report.epochs.size()) <= hp.max_epochs);
  // best metric is the max over epoch metrics
  double best = -1e9;
  for (const auto& e : r.report.epochs) best = std::max(best, e.val_metric);
  CHECK(r.report.best_val_metric == best);
  fs::remove_all(out);
}

TEST_CASE("pretrain: class weights, oversampling report and training progress") {
  auto ds = make_categorical(4, 96, 21);
  HyperParams hp = tiny_hp(3, 2);
  models::ModelConfig cfg = models::ModelConfig::desk(models::HeadKind::categorical);
  const auto out = temp_dir("affect_pt");
  auto r = pretrain_categorical(ds, hp, cfg, models::InitStrategy::random(), out);

  // neutral dominates the synthetic corpus, so its weight is the smallest
  const auto neutral = static_cast<size_t>(data::Emotion::neutral);
  for (size_t e = 0; e < 8; ++e)
    if (e != neutral && r.train_counts_before[e] > 0)
      CHECK(r.class_weights[neutral] < r.class_weights[e]);

  // oversampling never removes windows
  CHECK(r.oversampling.windows.size() >= static_cast<size_t>(0));
  CHECK(r.report.epochs.size() >= 1);
  CHECK(fs::exists(r.checkpoint_dir / "manifest.json"));

  // reloading the checkpoint round-trips the categorical head size
  auto ck = load_checkpoint(r.checkpoint_dir);
  CHECK(ck.config.head == models::HeadKind::categorical);
  CHECK(ck.params.get("head.weight").dim(1) == 8);
  fs::remove_all(out);
}

TEST_CASE("pretrain rejects dimensional data and vice versa") {
  auto cat = make_categorical();
  auto dim = make_dimensional();
  HyperParams hp = tiny_hp();
  const auto out = temp_dir("affect_reject");
  CHECK_THROWS_AS(pretrain_categorical(dim, hp, models::ModelConfig::desk(models::HeadKind::categorical),
                                       models::InitStrategy::random(), out),
                  contract_error);
  CHECK_THROWS_AS(finetune_dimensional(cat, hp, models::ModelConfig::desk(models::HeadKind::dimensional),
                                       models::InitStrategy::random(), out),
                  contract_error);
  fs::remove_all(out);
}

TEST_CASE("pretrain runs are reproducible and resumable deterministically") {
  auto ds = make_categorical(3, 64, 23);
  HyperParams hp = tiny_hp(2, 1);
  models::ModelConfig cfg = models::ModelConfig::desk(models::HeadKind::categorical);
  const auto out1 = temp_dir("affect_pt_a");
  const auto out2 = temp_dir("affect_pt_b");
  auto r1 = pretrain_categorical(ds, hp, cfg, models::InitStrategy::random(), out1);
  auto r2 = pretrain_categorical(ds, hp, cfg, models::InitStrategy::random(), out2);
  CHECK(r1.report.deterministic_json() == r2.report.deterministic_json());

  // two runs initialised from the same checkpoint agree on the first-epoch loss
  const auto out3 = temp_dir("affect_pt_c");
  const auto out4 = temp_dir("affect_pt_d");
  auto resume1 = pretrain_categorical(ds, hp, cfg, models::InitStrategy::pretrained(r1.checkpoint_dir), out3);
  auto resume2 = pretrain_categorical(ds, hp, cfg, models::InitStrategy::pretrained(r1.checkpoint_dir), out4);
  CHECK(resume1.report.epochs[0].train_loss == resume2.report.epochs[0].train_loss);
  for (const auto& d : {out1, out2, out3, out4}) fs::remove_all(d);
}

TEST_CASE("compare_initialisations: identical strategies give identical rows") {
  auto ds = make_dimensional(3, 48, 31);
  HyperParams hp = tiny_hp(2, 1);
  models::ModelConfig cfg = models::ModelConfig::desk(models::HeadKind::dimensional);
  const auto out = temp_dir("affect_cmp");
  auto rows = compare_initialisations(ds, hp, cfg,
                                      {models::InitStrategy::random(), models::InitStrategy::random()}, out);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].val_arousal == rows[1].val_arousal);
  CHECK(rows[0].val_valence == rows[1].val_valence);
  CHECK(rows[0].epochs_to_best == rows[1].epochs_to_best);

  // table carries one line per strategy and mirrors the published layout
  auto table = comparison_table(rows);
  CHECK(table.find("Initialisation Strategy") != std::string::npos);
  CHECK(table.find("Arousal") != std::string::npos);
  CHECK(table.find("Valence") != std::string::npos);
  CHECK(table.find("random") != std::string::npos);
  fs::remove_all(out);
}

TEST_CASE("hyperparams validate and serialise") {
  HyperParams hp;
  CHECK(hp.learning_rate == 4e-5);
  CHECK(hp.batch_size == 2);
  CHECK(hp.sequence_length == 150);
  CHECK(hp.max_epochs == 300);
  CHECK(hp.patience == 20);
  CHECK_NOTHROW(hp.validate());

  HyperParams bad = hp;
  bad.patience = 400;
  CHECK_THROWS_AS(bad.validate(), contract_error);

  nlohmann::json j = hp;
  HyperParams back = j.get<HyperParams>();
  CHECK(back.learning_rate == hp.learning_rate);
  CHECK(back.sequence_length == hp.sequence_length);
  CHECK(back.augmentation == hp.augmentation);
}
