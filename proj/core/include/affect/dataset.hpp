#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "affect/random.hpp"
#include "affect/tensor.hpp"

namespace affect::data {

enum class Emotion : int {
  neutral = 0,
  happy,
  surprise,
  disgust,
  contempt,
  confusion,
  empathy,
  other,
};
constexpr int kEmotionCount = 8;
constexpr int kAnnotators = 7;

const char* emotion_name(int e);

// Published per-emotion frame counts of the source corpus, in enum order.
constexpr std::array<std::int64_t, kEmotionCount> kReferenceEmotionCounts = {
    840611, 60179, 15786, 10065, 8581, 56683, 10173, 57425};

std::array<double, kEmotionCount> reference_emotion_mixture();

// Multi-hot 8-vector; winner-takes-all fusion with ties yields several
// active emotions.
struct EmotionLabel {
  std::array<std::uint8_t, kEmotionCount> active{};

  bool is_active(int e) const { return active[static_cast<size_t>(e)] != 0; }
  int count() const;
  bool any() const { return count() > 0; }
};

struct AffectSample {
  double arousal = 0.0;
  double valence = 0.0;
};

// Time series of (arousal, valence) at a fixed period.
struct AffectTrace {
  std::vector<AffectSample> values;
  double period = 0.040;
};

// One subject's frame sequence plus either per-frame annotator votes
// (categorical corpus) or per-rater dimensional traces.
struct VideoRecord {
  std::string video_id;
  std::string subject_id;
  double frame_period = 0.040;
  Tensor<float> frames;  // [T,C,H,W], values in [0,1]
  std::vector<std::array<std::uint8_t, kAnnotators>> votes;  // per frame: emotion index per annotator
  std::vector<AffectTrace> traces;                           // per rater

  std::int64_t frame_count() const { return frames.defined() ? frames.dim(0) : 0; }
  bool has_votes() const { return !votes.empty(); }
  bool has_traces() const { return !traces.empty(); }
};

enum class Provenance { original, resampled };

struct Window {
  int video = 0;  // index into the owning dataset's video list
  std::int64_t start = 0;
  int length = 0;
  Provenance provenance = Provenance::original;
};

struct Dataset {
  std::string kind;  // "categorical" | "dimensional"
  double frame_period = 0.040;
  Shape frame_shape;  // [C,H,W]
  std::vector<VideoRecord> videos;

  bool categorical() const { return kind == "categorical"; }
};

// ---------------------------------------------------------------------------
// annotation fusion and gold standard

// Winner-takes-all over an R x 8 one-hot vote matrix (one emotion per
// annotator); ties produce a multi-hot label.
EmotionLabel fuse_annotations(std::span<const std::array<std::uint8_t, kEmotionCount>> votes);

// Same fusion from per-annotator emotion indices.
EmotionLabel fuse_vote_indices(std::span<const std::uint8_t> annotator_choices);

std::vector<EmotionLabel> fuse_video_labels(const VideoRecord& video);

enum class GoldMode { mean, agreement_weighted };

// Per-timestep mean over raters; in agreement_weighted mode each rater is
// weighted by its mean pairwise CCC against the others (per dimension),
// normalized to sum 1. Falls back to the plain mean if the weight mass of a
// dimension is not positive.
AffectTrace gold_standard(const std::vector<AffectTrace>& traces, GoldMode mode = GoldMode::mean,
                          std::vector<std::array<double, 2>>* rater_weights = nullptr);

// Nearest-neighbour resampling onto a grid starting at t = 0; output length
// is floor(duration / target) + 1.
AffectTrace resample_trace(const AffectTrace& trace, double target_period);

// ---------------------------------------------------------------------------
// windowing, oversampling, splitting

std::vector<Window> window_dataset(const std::vector<VideoRecord>& videos, int length, int stride);

struct OversampleConfig {
  std::vector<int> rare = {static_cast<int>(Emotion::happy),    static_cast<int>(Emotion::surprise),
                           static_cast<int>(Emotion::disgust),  static_cast<int>(Emotion::confusion),
                           static_cast<int>(Emotion::empathy),  static_cast<int>(Emotion::contempt)};
  std::vector<int> frequent = {static_cast<int>(Emotion::neutral)};
  double multiplier = 3.0;  // target frame count per rare emotion, relative to the original
};

struct OversampleResult {
  std::vector<Window> windows;
  std::array<std::int64_t, kEmotionCount> before_counts{};
  std::array<std::int64_t, kEmotionCount> after_counts{};
  std::vector<int> unsatisfied;  // rare emotions lacking eligible windows
};

// Duplicates windows that contain at least one rare-emotion frame and no
// frequent-emotion frame until each rare emotion reaches its target count or
// eligible windows run out. Originals are always retained.
OversampleResult oversample(const std::vector<Window>& windows,
                            const std::vector<std::vector<EmotionLabel>>& labels_by_video,
                            const OversampleConfig& config);

struct SubjectSplit {
  std::vector<int> train_videos;
  std::vector<int> val_videos;
  std::vector<std::string> train_subjects;
  std::vector<std::string> val_subjects;
};

// Partitions subjects (not videos); the fraction applies to the subject
// count, validation rounded down with at least one subject per side.
SubjectSplit subject_split(const std::vector<VideoRecord>& videos, double train_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// augmentation

struct AugmentParams {
  double crop_y = 0.5;  // fraction of the available crop slack, 0.5 = centre
  double crop_x = 0.5;
  double brightness = 0.0;  // additive
  double saturation = 1.0;  // scale about the per-pixel grey value
};

inline constexpr double kAugmentResizeFactor = 170.0 / 150.0;
inline constexpr double kBrightnessRange = 0.125;
inline constexpr double kSaturationLo = 0.5;
inline constexpr double kSaturationHi = 1.5;

AugmentParams draw_augment_params(Rng& rng);

Tensor<float> bilinear_resize(const Tensor<float>& chw, std::int64_t out_h, std::int64_t out_w);

// Upscale by 170/150, crop back to the original size, then brightness shift
// and saturation scale; output clamped to [0,1], shape preserved.
Tensor<float> augment(const Tensor<float>& frame, const AugmentParams& params);
Tensor<float> augment(const Tensor<float>& frame, Rng& rng);

// ---------------------------------------------------------------------------
// on-disk format

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset,
                  const nlohmann::json& generator_meta = nlohmann::json::object());
Dataset load_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// synthetic corpus generator

struct SynthConfig {
  std::string kind = "categorical";  // "categorical" | "dimensional"
  int subjects = 8;
  int videos_per_subject = 2;
  int frames_per_video = 240;
  int resolution = 32;
  int channels = 1;
  double frame_period = 0.040;
  std::array<double, kEmotionCount> mixture = reference_emotion_mixture();
  double annotator_fidelity = 0.8;  // P(vote = true emotion)
  int raters = 3;
  double rater_noise = 0.03;
  int rater_max_lag = 3;  // frames
  double frame_noise = 0.03;
  std::uint64_t seed = 0;

  static SynthConfig categorical_desk();
  static SynthConfig dimensional_desk();
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

Dataset synth_generate(const SynthConfig& config);
void synth_generate_to(const std::filesystem::path& dir, const SynthConfig& config);

// The (arousal, valence) prototype each categorical emotion renders at; the
// dimensional renderer uses the same mapping continuously, so the two
// synthetic tasks share visual structure.
AffectSample emotion_prototype(int emotion);

// Renders one frame for latent (arousal, valence): valence drives blob
// intensity, arousal its vertical position. Deterministic apart from the
// additive noise drawn from rng.
Tensor<float> render_frame(const AffectSample& av, int channels, int resolution, double background,
                           double noise_sigma, Rng& rng);

}  // namespace affect::data
