#include "affect/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

#include "affect/ops.hpp"

namespace affect::train {

namespace fs = std::filesystem;
using models::ModelConfig;
using models::ModelParams;

void HyperParams::validate() const {
  if (learning_rate <= 0.0) throw contract_error("hyperparams: learning rate must be positive");
  if (batch_size < 1) throw contract_error("hyperparams: batch size must be >= 1");
  if (sequence_length < 2) throw contract_error("hyperparams: sequence length must be >= 2");
  if (max_epochs < 1) throw contract_error("hyperparams: max epochs must be >= 1");
  if (patience < 1 || patience >= max_epochs)
    throw contract_error("hyperparams: patience must be in [1, max_epochs)");
  if (train_fraction <= 0.0 || train_fraction >= 1.0)
    throw contract_error("hyperparams: train fraction must be in (0,1)");
}

HyperParams HyperParams::desk() {
  HyperParams hp;
  hp.learning_rate = 4e-4;  // 4e-5 scaled x10 for the small preset
  hp.sequence_length = 16;
  hp.max_epochs = 30;
  hp.patience = 8;
  return hp;
}

void to_json(nlohmann::json& j, const HyperParams& h) {
  j = nlohmann::json{{"learning_rate", h.learning_rate},
                     {"batch_size", h.batch_size},
                     {"sequence_length", h.sequence_length},
                     {"max_epochs", h.max_epochs},
                     {"patience", h.patience},
                     {"adam_beta1", h.adam_beta1},
                     {"adam_beta2", h.adam_beta2},
                     {"adam_eps", h.adam_eps},
                     {"augmentation", h.augmentation},
                     {"seed", h.seed},
                     {"train_fraction", h.train_fraction},
                     {"oversample_multiplier", h.oversample_multiplier},
                     {"gold_mode", h.gold_mode == data::GoldMode::mean ? "mean" : "agreement"},
                     {"ccc_batching",
                      h.ccc_batching == objectives::CccBatching::per_sequence ? "per_sequence" : "concatenated"},
                     {"freeze", h.freeze}};
}

void from_json(const nlohmann::json& j, HyperParams& h) {
  h = HyperParams{};
  h.learning_rate = j.value("learning_rate", h.learning_rate);
  h.batch_size = j.value("batch_size", h.batch_size);
  h.sequence_length = j.value("sequence_length", h.sequence_length);
  h.max_epochs = j.value("max_epochs", h.max_epochs);
  h.patience = j.value("patience", h.patience);
  h.adam_beta1 = j.value("adam_beta1", h.adam_beta1);
  h.adam_beta2 = j.value("adam_beta2", h.adam_beta2);
  h.adam_eps = j.value("adam_eps", h.adam_eps);
  h.augmentation = j.value("augmentation", h.augmentation);
  h.seed = j.value("seed", h.seed);
  h.train_fraction = j.value("train_fraction", h.train_fraction);
  h.oversample_multiplier = j.value("oversample_multiplier", h.oversample_multiplier);
  h.gold_mode = j.value("gold_mode", "mean") == std::string("agreement") ? data::GoldMode::agreement_weighted
                                                                         : data::GoldMode::mean;
  h.ccc_batching = j.value("ccc_batching", "per_sequence") == std::string("concatenated")
                       ? objectives::CccBatching::concatenated
                       : objectives::CccBatching::per_sequence;
  h.freeze = j.value("freeze", std::vector<std::string>{});
}

nlohmann::json TrainReport::deterministic_json() const {
  nlohmann::json j;
  j["best_epoch"] = best_epoch;
  j["best_val_metric"] = best_val_metric;
  j["stop_reason"] = stop_reason;
  nlohmann::json es = nlohmann::json::array();
  for (const auto& e : epochs) es.push_back({{"train_loss", e.train_loss}, {"val_metric", e.val_metric}});
  j["epochs"] = es;
  return j;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json j = deterministic_json();
  j["wall_time_seconds"] = wall_time_seconds;
  return j;
}

// ---------------------------------------------------------------------------
// Adam

void Adam::step(ModelParams<float>& params) {
  ++t_;
  const auto b1 = static_cast<float>(hp_.adam_beta1);
  const auto b2 = static_cast<float>(hp_.adam_beta2);
  const auto lr = static_cast<float>(hp_.learning_rate);
  const auto eps = static_cast<float>(hp_.adam_eps);
  const float bc1 = 1.0f - std::pow(b1, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(b2, static_cast<float>(t_));

  for (const auto& name : params.names()) {
    if (!params.learnable(name)) continue;
    bool frozen = false;
    for (const auto& prefix : hp_.freeze) frozen = frozen || name.starts_with(prefix);
    if (frozen) continue;

    Tensor<float>& p = params.get(name);
    const auto n = static_cast<size_t>(p.numel());
    auto& mom = moments_[name];
    if (mom.m.empty()) {
      mom.m.assign(n, 0.0f);
      mom.v.assign(n, 0.0f);
    }
    const bool has_grad = p.has_grad();
    const float* g = has_grad ? p.grad().data() : nullptr;
    float* pd = p.ptr();
    for (size_t i = 0; i < n; ++i) {
      const float gi = g ? g[i] : 0.0f;
      if (!std::isfinite(gi))
        throw numeric_error("non-finite gradient in parameter " + name + " at optimizer step " +
                            std::to_string(t_));
      mom.m[i] = b1 * mom.m[i] + (1.0f - b1) * gi;
      mom.v[i] = b2 * mom.v[i] + (1.0f - b2) * gi * gi;
      const float m_hat = mom.m[i] / bc1;
      const float v_hat = mom.v[i] / bc2;
      pd[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// batch assembly

namespace {

// Copies frame [start, start+len) of a video into a clip row, optionally
// augmented with one parameter draw for the whole window.
void fill_clip_row(Tensor<float>& clip, std::int64_t row, const data::VideoRecord& video, std::int64_t start,
                   int len, const data::AugmentParams* aug) {
  const Shape& fs = video.frames.shape();  // [T,C,H,W]
  const std::int64_t frame_elems = fs[1] * fs[2] * fs[3];
  for (int f = 0; f < len; ++f) {
    const float* src = video.frames.ptr() + (start + f) * frame_elems;
    float* dst = clip.ptr() + (row * len + f) * frame_elems;
    if (aug) {
      Tensor<float> frame(Shape{fs[1], fs[2], fs[3]}, std::vector<float>(src, src + frame_elems));
      Tensor<float> out = data::augment(frame, *aug);
      std::copy(out.data().begin(), out.data().end(), dst);
    } else {
      std::copy(src, src + frame_elems, dst);
    }
  }
}

Tensor<float> make_clip(const data::Dataset& ds, std::span<const data::Window> batch,
                        const std::vector<data::AugmentParams>* aug) {
  const Shape& fs = ds.videos.front().frames.shape();
  const auto b = static_cast<std::int64_t>(batch.size());
  const int len = batch.front().length;
  Tensor<float> clip(Shape{b, len, fs[1], fs[2], fs[3]});
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& w = batch[static_cast<size_t>(i)];
    fill_clip_row(clip, i, ds.videos[static_cast<size_t>(w.video)], w.start, w.length,
                  aug ? &(*aug)[static_cast<size_t>(i)] : nullptr);
  }
  return clip;
}

Tensor<float> make_label_matrix(std::span<const data::Window> batch,
                                const std::vector<std::vector<data::EmotionLabel>>& labels) {
  const auto b = static_cast<std::int64_t>(batch.size());
  const int len = batch.front().length;
  Tensor<float> z(Shape{b * len, data::kEmotionCount});
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& w = batch[static_cast<size_t>(i)];
    for (int f = 0; f < len; ++f)
      for (int e = 0; e < data::kEmotionCount; ++e)
        z.at({i * len + f, e}) = static_cast<float>(
            labels[static_cast<size_t>(w.video)][static_cast<size_t>(w.start + f)].active[static_cast<size_t>(e)]);
  }
  return z;
}

// gold tensors [B,T] for one affect dimension
Tensor<float> make_gold(std::span<const data::Window> batch,
                        const std::vector<std::vector<data::AffectSample>>& gold, int dim) {
  const auto b = static_cast<std::int64_t>(batch.size());
  const int len = batch.front().length;
  Tensor<float> g(Shape{b, len});
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& w = batch[static_cast<size_t>(i)];
    for (int f = 0; f < len; ++f) {
      const auto& s = gold[static_cast<size_t>(w.video)][static_cast<size_t>(w.start + f)];
      g.at({i, f}) = static_cast<float>(dim == 0 ? s.arousal : s.valence);
    }
  }
  return g;
}

std::vector<data::Window> windows_for(const data::Dataset& ds, const std::vector<int>& video_indices,
                                      int length, std::int64_t limit_per_video = -1) {
  std::vector<data::Window> out;
  for (int v : video_indices) {
    const std::int64_t frames = ds.videos[static_cast<size_t>(v)].frame_count();
    std::int64_t count = 0;
    for (std::int64_t start = 0; start + length <= frames; start += length) {
      out.push_back({v, start, length, data::Provenance::original});
      if (limit_per_video > 0 && ++count >= limit_per_video) break;
    }
  }
  return out;
}

void shuffle_windows(std::vector<data::Window>& windows, Rng& rng) {
  for (size_t i = windows.size(); i > 1; --i) {
    const auto j = static_cast<size_t>(rng.uniform_int(static_cast<std::uint64_t>(i)));
    std::swap(windows[i - 1], windows[j]);
  }
}

// Per-video gold series resampled to the frame period, truncated to the
// frame count.
std::vector<std::vector<data::AffectSample>> gold_by_video(const data::Dataset& ds, data::GoldMode mode) {
  std::vector<std::vector<data::AffectSample>> gold(ds.videos.size());
  for (size_t v = 0; v < ds.videos.size(); ++v) {
    const auto& video = ds.videos[v];
    if (!video.has_traces()) throw contract_error("dimensional training needs trace annotations");
    data::AffectTrace fused = data::gold_standard(video.traces, mode);
    fused = data::resample_trace(fused, video.frame_period);
    const auto usable = std::min<size_t>(fused.values.size(), static_cast<size_t>(video.frame_count()));
    gold[v].assign(fused.values.begin(), fused.values.begin() + static_cast<std::ptrdiff_t>(usable));
  }
  return gold;
}

struct SeriesPair {
  post::Series pred_a, pred_v, gold_a, gold_v;
};

// Eval-mode window-tiled predictions per video (trailing remainder dropped).
std::vector<SeriesPair> predict_series(ModelParams<float>& params, const ModelConfig& cfg,
                                       const data::Dataset& ds,
                                       const std::vector<std::vector<data::AffectSample>>& gold,
                                       const std::vector<int>& videos, int seq_len) {
  autograd::NoGradGuard guard;
  std::vector<SeriesPair> out;
  for (int v : videos) {
    SeriesPair sp;
    const auto frames = static_cast<std::int64_t>(gold[static_cast<size_t>(v)].size());
    for (std::int64_t start = 0; start + seq_len <= frames; start += seq_len) {
      data::Window w{v, start, seq_len, data::Provenance::original};
      Tensor<float> clip = make_clip(ds, std::span(&w, 1), nullptr);
      Tensor<float> pred = models::model_forward(params, cfg, clip, models::Mode::eval);
      for (int f = 0; f < seq_len; ++f) {
        sp.pred_a.push_back(static_cast<double>(pred.at({0, f, 0})));
        sp.pred_v.push_back(static_cast<double>(pred.at({0, f, 1})));
        const auto& g = gold[static_cast<size_t>(v)][static_cast<size_t>(start + f)];
        sp.gold_a.push_back(g.arousal);
        sp.gold_v.push_back(g.valence);
      }
    }
    if (!sp.pred_a.empty()) out.push_back(std::move(sp));
  }
  return out;
}

double concat_dim_ccc(const std::vector<SeriesPair>& series, int dim) {
  post::Series p, g;
  for (const auto& sp : series) {
    const auto& ps = dim == 0 ? sp.pred_a : sp.pred_v;
    const auto& gs = dim == 0 ? sp.gold_a : sp.gold_v;
    p.insert(p.end(), ps.begin(), ps.end());
    g.insert(g.end(), gs.begin(), gs.end());
  }
  return objectives::ccc(p, g).rho_c;
}

nlohmann::json training_meta(const HyperParams& hp, const data::Dataset& ds, const TrainReport& report,
                             const models::InitStrategy& init) {
  nlohmann::json j;
  j["hyperparams"] = hp;
  j["dataset_kind"] = ds.kind;
  j["init"] = init.str();
  j["best_epoch"] = report.best_epoch;
  j["best_val_metric"] = report.best_val_metric;
  j["stop_reason"] = report.stop_reason;
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// categorical pretraining

PretrainResult pretrain_categorical(const data::Dataset& dataset, const HyperParams& hp,
                                    const ModelConfig& model, const models::InitStrategy& init,
                                    const fs::path& out_dir) {
  hp.validate();
  if (!dataset.categorical()) throw contract_error("pretrain_categorical needs a categorical dataset");
  if (model.head != models::HeadKind::categorical)
    throw contract_error("pretrain_categorical needs a categorical head");
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<std::vector<data::EmotionLabel>> labels;
  labels.reserve(dataset.videos.size());
  for (const auto& v : dataset.videos) labels.push_back(data::fuse_video_labels(v));

  const auto split = data::subject_split(dataset.videos, hp.train_fraction, hp.seed);
  auto train_windows = windows_for(dataset, split.train_videos, hp.sequence_length);
  auto val_windows = windows_for(dataset, split.val_videos, hp.sequence_length);
  if (train_windows.empty() || val_windows.empty())
    throw contract_error("pretrain_categorical: not enough frames for training/validation windows");

  PretrainResult result;

  // class weights from pre-oversampling training counts (floored at 1)
  {
    std::array<std::int64_t, data::kEmotionCount> counts{};
    for (const auto& w : train_windows)
      for (std::int64_t f = w.start; f < w.start + w.length; ++f)
        for (int e = 0; e < data::kEmotionCount; ++e)
          counts[static_cast<size_t>(e)] +=
              labels[static_cast<size_t>(w.video)][static_cast<size_t>(f)].active[static_cast<size_t>(e)];
    result.train_counts_before = counts;
    for (auto& c : counts) c = std::max<std::int64_t>(c, 1);
    result.class_weights = objectives::class_weights(counts);
  }
  for (const auto& w : val_windows)
    for (std::int64_t f = w.start; f < w.start + w.length; ++f)
      for (int e = 0; e < data::kEmotionCount; ++e)
        result.val_counts[static_cast<size_t>(e)] +=
            labels[static_cast<size_t>(w.video)][static_cast<size_t>(f)].active[static_cast<size_t>(e)];

  data::OversampleConfig oc;
  oc.multiplier = hp.oversample_multiplier;
  result.oversampling = data::oversample(train_windows, labels, oc);

  ModelParams<float> params = models::build_model<float>(model, init, hp.seed);
  Adam adam(hp);
  TrainReport report;
  ModelParams<float> best_params = params.clone();

  const fs::path ckpt_dir = out_dir / "checkpoint";
  Rng base_rng(hp.seed * 2654435761ull + 1ull);

  for (int epoch = 1; epoch <= hp.max_epochs; ++epoch) {
    Rng epoch_rng = base_rng.fork(static_cast<std::uint64_t>(epoch));
    auto order = result.oversampling.windows;
    shuffle_windows(order, epoch_rng);

    double loss_sum = 0.0;
    int batches = 0;
    for (size_t off = 0; off < order.size(); off += static_cast<size_t>(hp.batch_size)) {
      const auto count = std::min<size_t>(static_cast<size_t>(hp.batch_size), order.size() - off);
      std::span<const data::Window> batch(order.data() + off, count);
      std::vector<data::AugmentParams> aug;
      if (hp.augmentation)
        for (size_t i = 0; i < count; ++i) aug.push_back(data::draw_augment_params(epoch_rng));
      Tensor<float> clip = make_clip(dataset, batch, hp.augmentation ? &aug : nullptr);
      Tensor<float> z = make_label_matrix(batch, labels);

      Tensor<float> logits = models::model_forward(params, model, clip, models::Mode::train);
      logits = reshape(logits, Shape{logits.dim(0) * logits.dim(1), data::kEmotionCount});
      Tensor<float> loss = objectives::weighted_sigmoid_ce(logits, z, result.class_weights);
      if (!std::isfinite(static_cast<double>(loss.item())))
        throw numeric_error("non-finite training loss in epoch " + std::to_string(epoch));
      backward(loss);
      adam.step(params);
      loss_sum += static_cast<double>(loss.item());
      ++batches;
    }

    // validation: mean per-class balanced accuracy at threshold 0.5
    double val_metric;
    {
      autograd::NoGradGuard guard;
      std::array<std::int64_t, data::kEmotionCount> tp{}, fp{}, tn{}, fn{};
      for (const auto& w : val_windows) {
        Tensor<float> clip = make_clip(dataset, std::span(&w, 1), nullptr);
        Tensor<float> logits = models::model_forward(params, model, clip, models::Mode::eval);
        for (int f = 0; f < w.length; ++f)
          for (int e = 0; e < data::kEmotionCount; ++e) {
            const bool pred = logits.at({0, f, e}) >= 0.0f;  // sigmoid >= 0.5
            const bool truth =
                labels[static_cast<size_t>(w.video)][static_cast<size_t>(w.start + f)].is_active(e);
            if (pred && truth) ++tp[static_cast<size_t>(e)];
            else if (pred) ++fp[static_cast<size_t>(e)];
            else if (truth) ++fn[static_cast<size_t>(e)];
            else ++tn[static_cast<size_t>(e)];
          }
      }
      double acc_sum = 0.0;
      int defined = 0;
      for (int e = 0; e < data::kEmotionCount; ++e) {
        const auto pos = tp[static_cast<size_t>(e)] + fn[static_cast<size_t>(e)];
        const auto neg = tn[static_cast<size_t>(e)] + fp[static_cast<size_t>(e)];
        if (pos == 0 || neg == 0) continue;
        const double tpr = static_cast<double>(tp[static_cast<size_t>(e)]) / static_cast<double>(pos);
        const double tnr = static_cast<double>(tn[static_cast<size_t>(e)]) / static_cast<double>(neg);
        acc_sum += 0.5 * (tpr + tnr);
        ++defined;
      }
      val_metric = defined ? acc_sum / defined : 0.0;
    }

    report.epochs.push_back({loss_sum / std::max(batches, 1), val_metric});
    if (report.epochs.size() == 1 || val_metric > report.best_val_metric) {
      report.best_val_metric = val_metric;
      report.best_epoch = epoch;
      best_params = params.clone();
    }
    if (epoch - report.best_epoch >= hp.patience) {
      report.stop_reason = "patience";
      break;
    }
  }
  if (report.stop_reason.empty()) report.stop_reason = "max_epochs";
  report.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  save_checkpoint(ckpt_dir, model, best_params, training_meta(hp, dataset, report, init));
  result.checkpoint_dir = ckpt_dir;
  result.report = report;
  return result;
}

// ---------------------------------------------------------------------------
// dimensional fine-tuning

FinetuneResult finetune_dimensional(const data::Dataset& dataset, const HyperParams& hp,
                                    const ModelConfig& model, const models::InitStrategy& init,
                                    const fs::path& out_dir, bool run_postprocess) {
  hp.validate();
  if (dataset.categorical()) throw contract_error("finetune_dimensional needs a dimensional dataset");
  if (model.head != models::HeadKind::dimensional)
    throw contract_error("finetune_dimensional needs a dimensional head");
  const auto t0 = std::chrono::steady_clock::now();

  const auto gold = gold_by_video(dataset, hp.gold_mode);
  const auto split = data::subject_split(dataset.videos, hp.train_fraction, hp.seed);

  auto usable_windows = [&](const std::vector<int>& vids) {
    std::vector<data::Window> ws;
    for (int v : vids) {
      const auto frames = static_cast<std::int64_t>(gold[static_cast<size_t>(v)].size());
      for (std::int64_t start = 0; start + hp.sequence_length <= frames; start += hp.sequence_length)
        ws.push_back({v, start, hp.sequence_length, data::Provenance::original});
    }
    return ws;
  };
  auto train_windows = usable_windows(split.train_videos);
  auto val_windows = usable_windows(split.val_videos);
  if (train_windows.empty() || val_windows.empty())
    throw contract_error("finetune_dimensional: not enough frames for training/validation windows");

  ModelParams<float> params = models::build_model<float>(model, init, hp.seed);
  Adam adam(hp);
  TrainReport report;
  ModelParams<float> best_params = params.clone();
  std::vector<SeriesPair> best_val_series;

  Rng base_rng(hp.seed * 2654435761ull + 2ull);

  for (int epoch = 1; epoch <= hp.max_epochs; ++epoch) {
    Rng epoch_rng = base_rng.fork(static_cast<std::uint64_t>(epoch));
    auto order = train_windows;
    shuffle_windows(order, epoch_rng);

    double loss_sum = 0.0;
    int batches = 0;
    for (size_t off = 0; off < order.size(); off += static_cast<size_t>(hp.batch_size)) {
      const auto count = std::min<size_t>(static_cast<size_t>(hp.batch_size), order.size() - off);
      std::span<const data::Window> batch(order.data() + off, count);
      // no augmentation in the fine-tuning phase
      Tensor<float> clip = make_clip(dataset, batch, nullptr);
      Tensor<float> gold_a = make_gold(batch, gold, 0);
      Tensor<float> gold_v = make_gold(batch, gold, 1);

      Tensor<float> pred = models::model_forward(params, model, clip, models::Mode::train);
      const std::int64_t b = pred.dim(0), t_len = pred.dim(1);
      Tensor<float> pred_a = reshape(narrow(pred, 2, 0, 1), Shape{b, t_len});
      Tensor<float> pred_v = reshape(narrow(pred, 2, 1, 1), Shape{b, t_len});
      Tensor<float> loss = mul_scalar(
          add(objectives::ccc_loss(pred_a, gold_a, hp.ccc_batching),
              objectives::ccc_loss(pred_v, gold_v, hp.ccc_batching)),
          0.5f);
      if (!std::isfinite(static_cast<double>(loss.item())))
        throw numeric_error("non-finite training loss in epoch " + std::to_string(epoch));
      backward(loss);
      adam.step(params);
      loss_sum += static_cast<double>(loss.item());
      ++batches;
    }

    auto val_series = predict_series(params, model, dataset, gold, split.val_videos, hp.sequence_length);
    const double val_metric = 0.5 * (concat_dim_ccc(val_series, 0) + concat_dim_ccc(val_series, 1));

    report.epochs.push_back({loss_sum / std::max(batches, 1), val_metric});
    if (report.epochs.size() == 1 || val_metric > report.best_val_metric) {
      report.best_val_metric = val_metric;
      report.best_epoch = epoch;
      best_params = params.clone();
      best_val_series = val_series;
    }
    if (epoch - report.best_epoch >= hp.patience) {
      report.stop_reason = "patience";
      break;
    }
  }
  if (report.stop_reason.empty()) report.stop_reason = "max_epochs";
  report.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  FinetuneResult result;
  const fs::path ckpt_dir = out_dir / "checkpoint";
  save_checkpoint(ckpt_dir, model, best_params, training_meta(hp, dataset, report, init));
  result.checkpoint_dir = ckpt_dir;
  result.report = report;

  // persist best-epoch validation predictions for replay and chain search
  {
    fs::create_directories(ckpt_dir / "predictions");
    for (size_t i = 0; i < best_val_series.size(); ++i) {
      const auto& sp = best_val_series[i];
      const auto t_len = static_cast<std::int64_t>(sp.pred_a.size());
      Tensor<float> t(Shape{t_len, 2});
      for (std::int64_t f = 0; f < t_len; ++f) {
        t.at({f, 0}) = static_cast<float>(sp.pred_a[static_cast<size_t>(f)]);
        t.at({f, 1}) = static_cast<float>(sp.pred_v[static_cast<size_t>(f)]);
      }
      save_tensor(ckpt_dir / "predictions" / ("val" + std::to_string(i) + ".tnsr"), t);
    }
  }

  if (run_postprocess) {
    std::vector<post::Series> pa, pv, ga, gv;
    for (const auto& sp : best_val_series) {
      pa.push_back(sp.pred_a);
      pv.push_back(sp.pred_v);
      ga.push_back(sp.gold_a);
      gv.push_back(sp.gold_v);
    }
    post::ChainConfig chain;
    chain.frame_period = dataset.frame_period;
    chain.arousal = post::chain_search(pa, ga, dataset.frame_period);
    chain.valence = post::chain_search(pv, gv, dataset.frame_period);
    post::save_chain(ckpt_dir / "chain.json", chain);
    result.chain = chain;
  }
  return result;
}

// ---------------------------------------------------------------------------
// evaluation

EvalMetrics evaluate(ModelParams<float>& params, const ModelConfig& config, const data::Dataset& dataset,
                     const std::vector<int>& video_indices, const HyperParams& hp,
                     const post::ChainConfig* chain) {
  const auto gold = gold_by_video(dataset, hp.gold_mode);
  auto series = predict_series(params, config, dataset, gold, video_indices, hp.sequence_length);
  if (series.empty()) throw contract_error("evaluate: no usable windows in the selected videos");

  EvalMetrics m;
  m.arousal_raw = concat_dim_ccc(series, 0);
  m.valence_raw = concat_dim_ccc(series, 1);
  if (chain) {
    auto post_series = series;
    for (auto& sp : post_series) {
      sp.pred_a = post::apply_chain(chain->arousal, sp.pred_a);
      sp.pred_v = post::apply_chain(chain->valence, sp.pred_v);
    }
    m.arousal_post = concat_dim_ccc(post_series, 0);
    m.valence_post = concat_dim_ccc(post_series, 1);
  } else {
    m.arousal_post = m.arousal_raw;
    m.valence_post = m.valence_raw;
  }
  return m;
}

EvalMetrics evaluate_checkpoint(const fs::path& checkpoint_dir, const data::Dataset& dataset,
                                const std::vector<int>& video_indices, const HyperParams& hp,
                                const post::ChainConfig* chain) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint_dir);
  return evaluate(ck.params, ck.config, dataset, video_indices, hp, chain);
}

post::ChainConfig search_chain_for(ModelParams<float>& params, const ModelConfig& config,
                                   const data::Dataset& dataset, const std::vector<int>& video_indices,
                                   const HyperParams& hp) {
  const auto gold = gold_by_video(dataset, hp.gold_mode);
  auto series = predict_series(params, config, dataset, gold, video_indices, hp.sequence_length);
  if (series.empty()) throw contract_error("search_chain_for: no usable windows in the selected videos");
  std::vector<post::Series> pa, pv, ga, gv;
  for (const auto& sp : series) {
    pa.push_back(sp.pred_a);
    pv.push_back(sp.pred_v);
    ga.push_back(sp.gold_a);
    gv.push_back(sp.gold_v);
  }
  post::ChainConfig chain;
  chain.frame_period = dataset.frame_period;
  chain.arousal = post::chain_search(pa, ga, dataset.frame_period);
  chain.valence = post::chain_search(pv, gv, dataset.frame_period);
  return chain;
}

// ---------------------------------------------------------------------------
// initialisation comparison

std::vector<CompareRow> compare_initialisations(const data::Dataset& dataset, const HyperParams& hp,
                                                const ModelConfig& model,
                                                const std::vector<models::InitStrategy>& strategies,
                                                const fs::path& out_dir, const data::Dataset* test_dataset) {
  if (strategies.size() < 2) throw contract_error("compare_initialisations needs at least 2 strategies");
  std::vector<CompareRow> rows;
  int idx = 0;
  for (const auto& strategy : strategies) {
    const fs::path run_dir = out_dir / ("strategy" + std::to_string(idx++));
    FinetuneResult fr = finetune_dimensional(dataset, hp, model, strategy, run_dir, true);

    CompareRow row;
    row.strategy = strategy.str();
    row.epochs_to_best = fr.report.best_epoch;
    row.best_val_metric = fr.report.best_val_metric;

    const auto split = data::subject_split(dataset.videos, hp.train_fraction, hp.seed);
    EvalMetrics val = evaluate_checkpoint(fr.checkpoint_dir, dataset, split.val_videos, hp, nullptr);
    row.val_arousal = val.arousal_raw;
    row.val_valence = val.valence_raw;

    if (test_dataset) {
      std::vector<int> all(test_dataset->videos.size());
      for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
      const post::ChainConfig* chain = fr.chain ? &*fr.chain : nullptr;
      EvalMetrics test = evaluate_checkpoint(fr.checkpoint_dir, *test_dataset, all, hp, chain);
      row.test_arousal = test.arousal_post;
      row.test_valence = test.valence_post;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string comparison_table(const std::vector<CompareRow>& rows) {
  auto fmt = [](double v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    std::string s(buf);
    if (s.starts_with("0.")) s.erase(0, 1);
    else if (s.starts_with("-0.")) s.erase(1, 1);
    return s;
  };
  auto cell = [&](const std::optional<double>& test, double val) {
    return (test ? fmt(*test) : std::string("--")) + " (" + fmt(val) + ")";
  };

  std::string out = "Initialisation Strategy        | Arousal        | Valence        | Epochs to best\n";
  out += "-------------------------------+----------------+----------------+---------------\n";
  for (const auto& r : rows) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-30s | %-14s | %-14s | %d\n", r.strategy.c_str(),
                  cell(r.test_arousal, r.val_arousal).c_str(), cell(r.test_valence, r.val_valence).c_str(),
                  r.epochs_to_best);
    out += line;
  }
  return out;
}

}  // namespace affect::train
