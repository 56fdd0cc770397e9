#include <algorithm>
#include <cmath>
#include <numbers>

#include "affect/dataset.hpp"

namespace affect::data {

SynthConfig SynthConfig::categorical_desk() {
  SynthConfig c;
  c.kind = "categorical";
  c.subjects = 8;
  c.videos_per_subject = 2;
  c.frames_per_video = 240;
  return c;
}

SynthConfig SynthConfig::dimensional_desk() {
  SynthConfig c;
  c.kind = "dimensional";
  c.subjects = 6;
  c.videos_per_subject = 1;
  c.frames_per_video = 192;
  return c;
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"kind", c.kind},
                     {"subjects", c.subjects},
                     {"videos_per_subject", c.videos_per_subject},
                     {"frames_per_video", c.frames_per_video},
                     {"resolution", c.resolution},
                     {"channels", c.channels},
                     {"frame_period", c.frame_period},
                     {"mixture", c.mixture},
                     {"annotator_fidelity", c.annotator_fidelity},
                     {"raters", c.raters},
                     {"rater_noise", c.rater_noise},
                     {"rater_max_lag", c.rater_max_lag},
                     {"frame_noise", c.frame_noise},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  j.at("kind").get_to(c.kind);
  j.at("subjects").get_to(c.subjects);
  j.at("videos_per_subject").get_to(c.videos_per_subject);
  j.at("frames_per_video").get_to(c.frames_per_video);
  j.at("resolution").get_to(c.resolution);
  j.at("channels").get_to(c.channels);
  j.at("frame_period").get_to(c.frame_period);
  j.at("mixture").get_to(c.mixture);
  j.at("annotator_fidelity").get_to(c.annotator_fidelity);
  j.at("raters").get_to(c.raters);
  j.at("rater_noise").get_to(c.rater_noise);
  j.at("rater_max_lag").get_to(c.rater_max_lag);
  j.at("frame_noise").get_to(c.frame_noise);
  j.at("seed").get_to(c.seed);
}

AffectSample emotion_prototype(int emotion) {
  static constexpr AffectSample protos[kEmotionCount] = {
      {0.0, 0.0},    // neutral
      {0.5, 0.8},    // happy
      {0.9, 0.3},    // surprise
      {0.4, -0.7},   // disgust
      {-0.2, -0.5},  // contempt
      {0.3, -0.2},   // confusion
      {-0.1, 0.6},   // empathy
      {-0.6, -0.3},  // other
  };
  if (emotion < 0 || emotion >= kEmotionCount) throw contract_error("emotion index out of range");
  return protos[emotion];
}

Tensor<float> render_frame(const AffectSample& av, int channels, int resolution, double background,
                           double noise_sigma, Rng& rng) {
  const int H = resolution, W = resolution;
  Tensor<float> frame(Shape{channels, H, W});
  // arousal moves the blob vertically, valence scales its brightness
  const double cy = (static_cast<double>(H) - 1.0) * (0.5 - 0.3 * av.arousal);
  const double cx = (static_cast<double>(W) - 1.0) * 0.5;
  const double amplitude = 0.25 + 0.3 * (av.valence + 1.0) / 2.0;
  const double sigma = static_cast<double>(H) / 8.0;
  float* p = frame.ptr();
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double dy = static_cast<double>(y) - cy;
        const double dx = static_cast<double>(x) - cx;
        double v = background + amplitude * std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
        v += rng.normal(0.0, noise_sigma);
        p[(c * H + y) * W + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return frame;
}

namespace {

// Latent categorical emotion sequence: long neutral dwells separated by
// bouts of 2-4 consecutive non-neutral episodes, so that short windows free
// of the frequent emotion exist for the oversampler. Episode emotions follow
// the configured mixture restricted to non-neutral mass; the neutral dwell
// length is solved from the target neutral share.
std::vector<int> categorical_latent(const SynthConfig& cfg, int frames, Rng& rng) {
  const int neutral = static_cast<int>(Emotion::neutral);
  double nonneutral_mass = 0.0;
  for (int e = 0; e < kEmotionCount; ++e)
    if (e != neutral) nonneutral_mass += cfg.mixture[static_cast<size_t>(e)];

  const double episode_mean = 16.0;  // frames, uniform [8, 24]
  const double bout_mean = 3.0 * episode_mean;
  const double p_neutral = cfg.mixture[static_cast<size_t>(neutral)];
  const double neutral_mean = p_neutral >= 1.0 ? 1e9 : bout_mean * p_neutral / (1.0 - p_neutral);

  auto pick_emotion = [&]() {
    double u = rng.uniform() * nonneutral_mass;
    for (int e = 0; e < kEmotionCount; ++e) {
      if (e == neutral) continue;
      u -= cfg.mixture[static_cast<size_t>(e)];
      if (u <= 0.0) return e;
    }
    return static_cast<int>(Emotion::other);
  };

  std::vector<int> latent;
  latent.reserve(static_cast<size_t>(frames));
  bool in_neutral = rng.uniform() < p_neutral;
  while (static_cast<int>(latent.size()) < frames) {
    if (in_neutral && nonneutral_mass > 0.0) {
      const auto dwell =
          static_cast<std::int64_t>(rng.uniform_int(static_cast<std::int64_t>(neutral_mean * 2.0 / 3.0),
                                                    static_cast<std::int64_t>(neutral_mean * 4.0 / 3.0)));
      for (std::int64_t i = 0; i < std::max<std::int64_t>(dwell, 1); ++i) latent.push_back(neutral);
    } else {
      const auto episodes = rng.uniform_int(2, 4);
      for (std::int64_t b = 0; b < episodes; ++b) {
        const int e = pick_emotion();
        const auto dur = rng.uniform_int(8, 24);
        for (std::int64_t i = 0; i < dur; ++i) latent.push_back(e);
      }
    }
    in_neutral = !in_neutral;
  }
  latent.resize(static_cast<size_t>(frames));
  return latent;
}

// Smooth latent process: normalized sum of three low-frequency sinusoids.
std::vector<double> smooth_latent(int frames, double period, Rng& rng) {
  std::array<double, 3> amp{}, freq{}, phase{};
  double amp_sum = 0.0;
  for (int k = 0; k < 3; ++k) {
    amp[static_cast<size_t>(k)] = rng.uniform(0.5, 1.0);
    freq[static_cast<size_t>(k)] = rng.uniform(0.05, 0.30);  // Hz
    phase[static_cast<size_t>(k)] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    amp_sum += amp[static_cast<size_t>(k)];
  }
  std::vector<double> out(static_cast<size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    double v = 0.0;
    for (int k = 0; k < 3; ++k)
      v += amp[static_cast<size_t>(k)] *
           std::sin(2.0 * std::numbers::pi * freq[static_cast<size_t>(k)] * period * t +
                    phase[static_cast<size_t>(k)]);
    out[static_cast<size_t>(t)] = 0.75 * v / amp_sum;
  }
  return out;
}

}  // namespace

Dataset synth_generate(const SynthConfig& cfg) {
  if (cfg.kind != "categorical" && cfg.kind != "dimensional")
    throw contract_error("synth_generate: kind must be categorical or dimensional");
  if (cfg.subjects < 1 || cfg.videos_per_subject < 1 || cfg.frames_per_video < 1)
    throw contract_error("synth_generate: counts must be positive");
  if (cfg.kind == "dimensional" && cfg.raters < 1)
    throw contract_error("synth_generate: dimensional corpus needs at least one rater");

  Dataset ds;
  ds.kind = cfg.kind;
  ds.frame_period = cfg.frame_period;
  ds.frame_shape = {cfg.channels, cfg.resolution, cfg.resolution};

  Rng master(cfg.seed ^ 0xA0FFEC7ull);
  int video_counter = 0;
  for (int s = 0; s < cfg.subjects; ++s) {
    Rng subject_rng = master.fork(static_cast<std::uint64_t>(s) * 1000003ull + 17ull);
    const double subject_bg = 0.15 + subject_rng.uniform(-0.05, 0.05);
    for (int vi = 0; vi < cfg.videos_per_subject; ++vi, ++video_counter) {
      Rng rng = master.fork(static_cast<std::uint64_t>(video_counter) * 7919ull + 101ull);
      VideoRecord v;
      char id[32];
      std::snprintf(id, sizeof(id), "v%04d", video_counter);
      char sid[32];
      std::snprintf(sid, sizeof(sid), "s%03d", s);
      v.video_id = id;
      v.subject_id = sid;
      v.frame_period = cfg.frame_period;

      const int T_len = cfg.frames_per_video;
      Tensor<float> frames(Shape{T_len, cfg.channels, cfg.resolution, cfg.resolution});

      if (cfg.kind == "categorical") {
        const auto latent = categorical_latent(cfg, T_len, rng);
        v.votes.resize(static_cast<size_t>(T_len));
        for (int t = 0; t < T_len; ++t) {
          const int e = latent[static_cast<size_t>(t)];
          Tensor<float> f = render_frame(emotion_prototype(e), cfg.channels, cfg.resolution, subject_bg,
                                         cfg.frame_noise, rng);
          std::copy(f.data().begin(), f.data().end(), frames.ptr() + static_cast<std::int64_t>(t) * f.numel());
          for (int a = 0; a < kAnnotators; ++a) {
            const bool faithful = rng.uniform() < cfg.annotator_fidelity;
            v.votes[static_cast<size_t>(t)][static_cast<size_t>(a)] =
                faithful ? static_cast<std::uint8_t>(e)
                         : static_cast<std::uint8_t>(rng.uniform_int(kEmotionCount));
          }
        }
      } else {
        const auto arousal = smooth_latent(T_len, cfg.frame_period, rng);
        const auto valence = smooth_latent(T_len, cfg.frame_period, rng);
        for (int t = 0; t < T_len; ++t) {
          Tensor<float> f =
              render_frame({arousal[static_cast<size_t>(t)], valence[static_cast<size_t>(t)]}, cfg.channels,
                           cfg.resolution, subject_bg, cfg.frame_noise, rng);
          std::copy(f.data().begin(), f.data().end(), frames.ptr() + static_cast<std::int64_t>(t) * f.numel());
        }
        for (int r = 0; r < cfg.raters; ++r) {
          const int lag = cfg.rater_max_lag > 0 ? r % (cfg.rater_max_lag + 1) : 0;
          AffectTrace trace;
          trace.period = cfg.frame_period;
          trace.values.resize(static_cast<size_t>(T_len));
          for (int t = 0; t < T_len; ++t) {
            const int src = std::max(0, t - lag);
            trace.values[static_cast<size_t>(t)] = {
                std::clamp(arousal[static_cast<size_t>(src)] + rng.normal(0.0, cfg.rater_noise), -1.0, 1.0),
                std::clamp(valence[static_cast<size_t>(src)] + rng.normal(0.0, cfg.rater_noise), -1.0, 1.0)};
          }
          v.traces.push_back(std::move(trace));
        }
      }
      v.frames = std::move(frames);
      ds.videos.push_back(std::move(v));
    }
  }
  return ds;
}

void synth_generate_to(const std::filesystem::path& dir, const SynthConfig& cfg) {
  Dataset ds = synth_generate(cfg);
  nlohmann::json meta;
  meta["config"] = cfg;
  // Subject metadata follows the source description's subject-level gender
  // split (1,517 females of 2,616 subjects).
  nlohmann::json subjects = nlohmann::json::array();
  Rng grng(cfg.seed ^ 0x6E4D3Bull);
  for (int s = 0; s < cfg.subjects; ++s) {
    char sid[32];
    std::snprintf(sid, sizeof(sid), "s%03d", s);
    subjects.push_back({{"id", sid}, {"gender", grng.uniform() < 1517.0 / 2616.0 ? "f" : "m"}});
  }
  meta["subjects"] = subjects;
  save_dataset(dir, ds, meta);
}

}  // namespace affect::data
