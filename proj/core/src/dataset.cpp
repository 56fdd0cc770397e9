#include "affect/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "affect/objectives.hpp"

namespace affect::data {

namespace fs = std::filesystem;

const char* emotion_name(int e) {
  static const char* names[kEmotionCount] = {"neutral",  "happy",     "surprise", "disgust",
                                             "contempt", "confusion", "empathy",  "other"};
  if (e < 0 || e >= kEmotionCount) throw contract_error("emotion index out of range");
  return names[e];
}

std::array<double, kEmotionCount> reference_emotion_mixture() {
  std::array<double, kEmotionCount> mix{};
  double total = 0;
  for (auto c : kReferenceEmotionCounts) total += static_cast<double>(c);
  for (int e = 0; e < kEmotionCount; ++e)
    mix[static_cast<size_t>(e)] = static_cast<double>(kReferenceEmotionCounts[static_cast<size_t>(e)]) / total;
  return mix;
}

int EmotionLabel::count() const {
  int n = 0;
  for (auto v : active) n += v != 0;
  return n;
}

// ---------------------------------------------------------------------------
// fusion

EmotionLabel fuse_annotations(std::span<const std::array<std::uint8_t, kEmotionCount>> votes) {
  if (votes.empty()) throw contract_error("fuse_annotations: no annotators");
  std::array<int, kEmotionCount> sums{};
  for (const auto& row : votes) {
    int row_sum = 0;
    for (int e = 0; e < kEmotionCount; ++e) {
      const auto v = row[static_cast<size_t>(e)];
      if (v != 0 && v != 1) throw contract_error("fuse_annotations: votes must be 0/1");
      row_sum += v;
      sums[static_cast<size_t>(e)] += v;
    }
    if (row_sum != 1) throw contract_error("fuse_annotations: each annotator casts exactly one vote");
  }
  const int best = *std::max_element(sums.begin(), sums.end());
  EmotionLabel label;
  for (int e = 0; e < kEmotionCount; ++e)
    if (sums[static_cast<size_t>(e)] == best) label.active[static_cast<size_t>(e)] = 1;
  return label;
}

EmotionLabel fuse_vote_indices(std::span<const std::uint8_t> annotator_choices) {
  std::vector<std::array<std::uint8_t, kEmotionCount>> rows;
  rows.reserve(annotator_choices.size());
  for (auto idx : annotator_choices) {
    if (idx >= kEmotionCount) throw contract_error("fuse_vote_indices: emotion index out of range");
    std::array<std::uint8_t, kEmotionCount> row{};
    row[idx] = 1;
    rows.push_back(row);
  }
  return fuse_annotations(rows);
}

std::vector<EmotionLabel> fuse_video_labels(const VideoRecord& video) {
  if (!video.has_votes()) throw contract_error("fuse_video_labels: video has no annotator votes");
  std::vector<EmotionLabel> labels;
  labels.reserve(video.votes.size());
  for (const auto& frame_votes : video.votes) labels.push_back(fuse_vote_indices(frame_votes));
  return labels;
}

// ---------------------------------------------------------------------------
// gold standard

AffectTrace gold_standard(const std::vector<AffectTrace>& traces, GoldMode mode,
                          std::vector<std::array<double, 2>>* rater_weights) {
  if (traces.empty()) throw contract_error("gold_standard: no traces");
  const size_t n = traces.front().values.size();
  const double period = traces.front().period;
  for (const auto& t : traces) {
    if (t.values.size() != n) throw contract_error("gold_standard: trace length mismatch");
    if (t.period != period) throw contract_error("gold_standard: trace period mismatch");
  }
  const size_t R = traces.size();

  // Per-dimension rater weights, uniform in mean mode.
  std::array<std::vector<double>, 2> weights;
  weights[0].assign(R, 1.0 / static_cast<double>(R));
  weights[1] = weights[0];

  if (mode == GoldMode::agreement_weighted && R >= 2 && n >= 2) {
    for (int d = 0; d < 2; ++d) {
      auto series = [&](size_t r) {
        std::vector<double> s(n);
        for (size_t i = 0; i < n; ++i)
          s[i] = d == 0 ? traces[r].values[i].arousal : traces[r].values[i].valence;
        return s;
      };
      std::vector<double> agreement(R, 0.0);
      double mass = 0.0;
      for (size_t r = 0; r < R; ++r) {
        const auto sr = series(r);
        double acc = 0.0;
        for (size_t s = 0; s < R; ++s) {
          if (s == r) continue;
          acc += objectives::ccc(sr, series(s)).rho_c;
        }
        agreement[r] = acc / static_cast<double>(R - 1);
        mass += agreement[r];
      }
      if (mass > 0.0)
        for (size_t r = 0; r < R; ++r) weights[static_cast<size_t>(d)][r] = agreement[r] / mass;
      // non-positive total agreement: keep the uniform fallback
    }
  }

  if (rater_weights) {
    rater_weights->resize(R);
    for (size_t r = 0; r < R; ++r) (*rater_weights)[r] = {weights[0][r], weights[1][r]};
  }

  AffectTrace gold;
  gold.period = period;
  gold.values.resize(n);
  for (size_t i = 0; i < n; ++i) {
    double a = 0.0, v = 0.0;
    for (size_t r = 0; r < R; ++r) {
      a += weights[0][r] * traces[r].values[i].arousal;
      v += weights[1][r] * traces[r].values[i].valence;
    }
    gold.values[i] = {a, v};
  }
  return gold;
}

AffectTrace resample_trace(const AffectTrace& trace, double target_period) {
  if (trace.values.empty()) throw contract_error("resample_trace: empty trace");
  if (target_period <= 0.0) throw contract_error("resample_trace: target period must be positive");
  const auto n = static_cast<std::int64_t>(trace.values.size());
  const double duration = static_cast<double>(n - 1) * trace.period;
  const auto out_len = static_cast<std::int64_t>(std::floor(duration / target_period + 1e-9)) + 1;

  AffectTrace out;
  out.period = target_period;
  out.values.resize(static_cast<size_t>(out_len));
  for (std::int64_t k = 0; k < out_len; ++k) {
    auto idx = static_cast<std::int64_t>(std::llround(static_cast<double>(k) * target_period / trace.period));
    idx = std::clamp<std::int64_t>(idx, 0, n - 1);
    out.values[static_cast<size_t>(k)] = trace.values[static_cast<size_t>(idx)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// windowing and oversampling

std::vector<Window> window_dataset(const std::vector<VideoRecord>& videos, int length, int stride) {
  if (length < 1) throw contract_error("window_dataset: length must be >= 1");
  if (stride < 1) throw contract_error("window_dataset: stride must be >= 1");
  std::vector<Window> windows;
  for (size_t v = 0; v < videos.size(); ++v) {
    const std::int64_t frames = videos[v].frame_count();
    for (std::int64_t start = 0; start + length <= frames; start += stride)
      windows.push_back({static_cast<int>(v), start, length, Provenance::original});
  }
  return windows;
}

namespace {

std::array<std::int64_t, kEmotionCount> window_emotion_counts(
    const Window& w, const std::vector<std::vector<EmotionLabel>>& labels_by_video) {
  std::array<std::int64_t, kEmotionCount> counts{};
  const auto& labels = labels_by_video.at(static_cast<size_t>(w.video));
  for (std::int64_t f = w.start; f < w.start + w.length; ++f) {
    const auto& l = labels.at(static_cast<size_t>(f));
    for (int e = 0; e < kEmotionCount; ++e)
      counts[static_cast<size_t>(e)] += l.active[static_cast<size_t>(e)];
  }
  return counts;
}

}  // namespace

OversampleResult oversample(const std::vector<Window>& windows,
                            const std::vector<std::vector<EmotionLabel>>& labels_by_video,
                            const OversampleConfig& config) {
  for (int e : config.rare)
    for (int f : config.frequent)
      if (e == f) throw contract_error("oversample: rare and frequent sets must be disjoint");
  if (config.multiplier < 1.0) throw contract_error("oversample: multiplier must be >= 1");

  OversampleResult result;
  result.windows = windows;

  std::vector<std::array<std::int64_t, kEmotionCount>> per_window;
  per_window.reserve(windows.size());
  for (const auto& w : windows) {
    per_window.push_back(window_emotion_counts(w, labels_by_video));
    for (int e = 0; e < kEmotionCount; ++e)
      result.before_counts[static_cast<size_t>(e)] += per_window.back()[static_cast<size_t>(e)];
  }
  result.after_counts = result.before_counts;

  // Eligible: at least one rare-emotion frame, zero frequent-emotion frames.
  auto eligible = [&](size_t i) {
    bool has_rare = false;
    for (int e : config.rare) has_rare = has_rare || per_window[i][static_cast<size_t>(e)] > 0;
    if (!has_rare) return false;
    for (int f : config.frequent)
      if (per_window[i][static_cast<size_t>(f)] > 0) return false;
    return true;
  };
  std::vector<size_t> eligible_idx;
  for (size_t i = 0; i < windows.size(); ++i)
    if (eligible(i)) eligible_idx.push_back(i);

  for (int e : config.rare) {
    if (result.before_counts[static_cast<size_t>(e)] == 0) continue;
    const auto target = static_cast<std::int64_t>(
        std::ceil(config.multiplier * static_cast<double>(result.before_counts[static_cast<size_t>(e)])));

    std::vector<size_t> pool;
    for (size_t i : eligible_idx)
      if (per_window[i][static_cast<size_t>(e)] > 0) pool.push_back(i);
    if (pool.empty()) {
      if (result.after_counts[static_cast<size_t>(e)] < target) result.unsatisfied.push_back(e);
      continue;
    }
    size_t cursor = 0;
    while (result.after_counts[static_cast<size_t>(e)] < target) {
      const size_t i = pool[cursor % pool.size()];
      ++cursor;
      Window dup = windows[i];
      dup.provenance = Provenance::resampled;
      result.windows.push_back(dup);
      for (int k = 0; k < kEmotionCount; ++k)
        result.after_counts[static_cast<size_t>(k)] += per_window[i][static_cast<size_t>(k)];
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// subject split

SubjectSplit subject_split(const std::vector<VideoRecord>& videos, double train_fraction, std::uint64_t seed) {
  if (train_fraction <= 0.0 || train_fraction >= 1.0)
    throw contract_error("subject_split: train fraction must be in (0,1)");
  std::set<std::string> unique;
  for (const auto& v : videos) unique.insert(v.subject_id);
  if (unique.size() < 2) throw contract_error("subject_split: need at least 2 subjects");

  std::vector<std::string> subjects(unique.begin(), unique.end());
  Rng rng(seed);
  for (size_t i = subjects.size() - 1; i > 0; --i) {
    const auto j = static_cast<size_t>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
    std::swap(subjects[i], subjects[j]);
  }

  const auto n = static_cast<std::int64_t>(subjects.size());
  auto n_val =
      static_cast<std::int64_t>(std::floor(static_cast<double>(n) * (1.0 - train_fraction) + 1e-9));
  n_val = std::clamp<std::int64_t>(n_val, 1, n - 1);

  SubjectSplit split;
  std::set<std::string> val_set(subjects.begin(), subjects.begin() + n_val);
  split.val_subjects.assign(val_set.begin(), val_set.end());
  for (const auto& s : subjects)
    if (!val_set.count(s)) split.train_subjects.push_back(s);
  std::sort(split.train_subjects.begin(), split.train_subjects.end());

  for (size_t i = 0; i < videos.size(); ++i) {
    if (val_set.count(videos[i].subject_id))
      split.val_videos.push_back(static_cast<int>(i));
    else
      split.train_videos.push_back(static_cast<int>(i));
  }
  return split;
}

// ---------------------------------------------------------------------------
// augmentation

AugmentParams draw_augment_params(Rng& rng) {
  AugmentParams p;
  p.crop_y = rng.uniform();
  p.crop_x = rng.uniform();
  p.brightness = rng.uniform(-kBrightnessRange, kBrightnessRange);
  p.saturation = rng.uniform(kSaturationLo, kSaturationHi);
  return p;
}

Tensor<float> bilinear_resize(const Tensor<float>& chw, std::int64_t out_h, std::int64_t out_w) {
  if (chw.rank() != 3) throw dimension_error("bilinear_resize expects [C,H,W]");
  const std::int64_t C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
  Tensor<float> out(Shape{C, out_h, out_w});
  const double sy = static_cast<double>(H) / static_cast<double>(out_h);
  const double sx = static_cast<double>(W) / static_cast<double>(out_w);
  const float* src = chw.ptr();
  float* dst = out.ptr();
  for (std::int64_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
    const auto y0 = static_cast<std::int64_t>(std::floor(fy));
    const std::int64_t y1 = std::min(y0 + 1, H - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::int64_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
      const auto x0 = static_cast<std::int64_t>(std::floor(fx));
      const std::int64_t x1 = std::min(x0 + 1, W - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::int64_t c = 0; c < C; ++c) {
        const float* plane = src + c * H * W;
        const double v = (1 - wy) * ((1 - wx) * plane[y0 * W + x0] + wx * plane[y0 * W + x1]) +
                         wy * ((1 - wx) * plane[y1 * W + x0] + wx * plane[y1 * W + x1]);
        dst[(c * out_h + y) * out_w + x] = static_cast<float>(v);
      }
    }
  }
  return out;
}

Tensor<float> augment(const Tensor<float>& frame, const AugmentParams& params) {
  if (frame.rank() != 3) throw dimension_error("augment expects [C,H,W]");
  const std::int64_t C = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
  const auto up_h = static_cast<std::int64_t>(std::llround(static_cast<double>(H) * kAugmentResizeFactor));
  const auto up_w = static_cast<std::int64_t>(std::llround(static_cast<double>(W) * kAugmentResizeFactor));
  Tensor<float> big = bilinear_resize(frame, up_h, up_w);

  const auto oy = static_cast<std::int64_t>(std::llround(params.crop_y * static_cast<double>(up_h - H)));
  const auto ox = static_cast<std::int64_t>(std::llround(params.crop_x * static_cast<double>(up_w - W)));

  Tensor<float> out(Shape{C, H, W});
  const float* src = big.ptr();
  float* dst = out.ptr();
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x)
        dst[(c * H + y) * W + x] = src[(c * up_h + (y + oy)) * up_w + (x + ox)];

  // saturation about the grey value, then brightness, then clamp
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      double grey;
      if (C == 3) {
        grey = 0.299 * dst[(0 * H + y) * W + x] + 0.587 * dst[(1 * H + y) * W + x] +
               0.114 * dst[(2 * H + y) * W + x];
      } else {
        double s = 0;
        for (std::int64_t c = 0; c < C; ++c) s += dst[(c * H + y) * W + x];
        grey = s / static_cast<double>(C);
      }
      for (std::int64_t c = 0; c < C; ++c) {
        auto& v = dst[(c * H + y) * W + x];
        const double sat = grey + params.saturation * (static_cast<double>(v) - grey);
        v = static_cast<float>(std::clamp(sat + params.brightness, 0.0, 1.0));
      }
    }
  return out;
}

Tensor<float> augment(const Tensor<float>& frame, Rng& rng) {
  AugmentParams p = draw_augment_params(rng);
  return augment(frame, p);
}

// ---------------------------------------------------------------------------
// on-disk format

void save_dataset(const fs::path& dir, const Dataset& dataset, const nlohmann::json& generator_meta) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "affect-dataset-v1";
  manifest["kind"] = dataset.kind;
  manifest["frame_period"] = dataset.frame_period;
  manifest["frame_shape"] = dataset.frame_shape;
  manifest["annotators"] = kAnnotators;
  if (!generator_meta.is_null() && !generator_meta.empty()) manifest["generator"] = generator_meta;

  nlohmann::json videos = nlohmann::json::array();
  for (const auto& v : dataset.videos) {
    nlohmann::json jv{{"id", v.video_id},
                      {"subject", v.subject_id},
                      {"frames", v.frame_count()},
                      {"frame_period", v.frame_period},
                      {"frames_file", v.video_id + ".frames.tnsr"}};
    if (v.has_votes()) jv["votes_file"] = v.video_id + ".votes.u8";
    if (v.has_traces()) {
      jv["traces_file"] = v.video_id + ".traces.tnsr";
      jv["raters"] = v.traces.size();
      jv["trace_period"] = v.traces.front().period;
    }
    videos.push_back(jv);
  }
  manifest["videos"] = videos;

  {
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
    out << manifest.dump(2) << "\n";
  }

  for (const auto& v : dataset.videos) {
    save_tensor(dir / (v.video_id + ".frames.tnsr"), v.frames);
    if (v.has_votes()) {
      std::vector<std::uint8_t> bytes;
      bytes.reserve(v.votes.size() * kAnnotators);
      for (const auto& frame : v.votes)
        for (auto idx : frame) bytes.push_back(idx);
      save_bytes(dir / (v.video_id + ".votes.u8"), bytes);
    }
    if (v.has_traces()) {
      const auto R = static_cast<std::int64_t>(v.traces.size());
      const auto T_len = static_cast<std::int64_t>(v.traces.front().values.size());
      Tensor<float> t(Shape{R, T_len, 2});
      for (std::int64_t r = 0; r < R; ++r)
        for (std::int64_t i = 0; i < T_len; ++i) {
          t.at({r, i, 0}) =
              static_cast<float>(v.traces[static_cast<size_t>(r)].values[static_cast<size_t>(i)].arousal);
          t.at({r, i, 1}) =
              static_cast<float>(v.traces[static_cast<size_t>(r)].values[static_cast<size_t>(i)].valence);
        }
      save_tensor(dir / (v.video_id + ".traces.tnsr"), t);
    }
  }
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("cannot open dataset manifest in " + dir.string());
  const nlohmann::json manifest = nlohmann::json::parse(in);
  if (manifest.at("format").get<std::string>() != "affect-dataset-v1")
    throw std::runtime_error("unsupported dataset format in " + dir.string());

  Dataset ds;
  ds.kind = manifest.at("kind").get<std::string>();
  ds.frame_period = manifest.at("frame_period").get<double>();
  ds.frame_shape = manifest.at("frame_shape").get<Shape>();

  for (const auto& jv : manifest.at("videos")) {
    VideoRecord v;
    v.video_id = jv.at("id").get<std::string>();
    v.subject_id = jv.at("subject").get<std::string>();
    v.frame_period = jv.at("frame_period").get<double>();
    v.frames = load_tensor<float>(dir / jv.at("frames_file").get<std::string>());
    const auto frames = v.frame_count();
    if (jv.contains("votes_file")) {
      const auto bytes = load_bytes(dir / jv.at("votes_file").get<std::string>());
      if (bytes.size() != static_cast<size_t>(frames) * kAnnotators)
        throw std::runtime_error("votes file size mismatch for video " + v.video_id);
      v.votes.resize(static_cast<size_t>(frames));
      for (std::int64_t f = 0; f < frames; ++f)
        for (int a = 0; a < kAnnotators; ++a)
          v.votes[static_cast<size_t>(f)][static_cast<size_t>(a)] = bytes[static_cast<size_t>(f * kAnnotators + a)];
    }
    if (jv.contains("traces_file")) {
      auto t = load_tensor<float>(dir / jv.at("traces_file").get<std::string>());
      if (t.rank() != 3 || t.dim(2) != 2)
        throw std::runtime_error("traces tensor must be [R,T,2] for video " + v.video_id);
      const double period = jv.value("trace_period", v.frame_period);
      for (std::int64_t r = 0; r < t.dim(0); ++r) {
        AffectTrace trace;
        trace.period = period;
        trace.values.resize(static_cast<size_t>(t.dim(1)));
        for (std::int64_t i = 0; i < t.dim(1); ++i)
          trace.values[static_cast<size_t>(i)] = {static_cast<double>(t.at({r, i, 0})),
                                                  static_cast<double>(t.at({r, i, 1}))};
        v.traces.push_back(std::move(trace));
      }
    }
    if (!v.has_votes() && !v.has_traces())
      throw std::runtime_error("video " + v.video_id + " carries neither votes nor traces");
    ds.videos.push_back(std::move(v));
  }
  return ds;
}

}  // namespace affect::data
