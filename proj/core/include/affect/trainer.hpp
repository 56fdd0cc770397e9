#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "affect/checkpoint.hpp"
#include "affect/dataset.hpp"
#include "affect/models.hpp"
#include "affect/objectives.hpp"
#include "affect/postprocess.hpp"

namespace affect::train {

struct HyperParams {
  double learning_rate = 4e-5;
  int batch_size = 2;
  int sequence_length = 150;
  int max_epochs = 300;
  int patience = 20;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool augmentation = true;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  double oversample_multiplier = 3.0;
  data::GoldMode gold_mode = data::GoldMode::mean;
  objectives::CccBatching ccc_batching = objectives::CccBatching::per_sequence;
  std::vector<std::string> freeze;  // parameter-name prefixes excluded from updates

  void validate() const;
  static HyperParams desk();  // sequence 16, small epoch budget
};

void to_json(nlohmann::json& j, const HyperParams& h);
void from_json(const nlohmann::json& j, HyperParams& h);

struct EpochStats {
  double train_loss = 0.0;
  double val_metric = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;  // 1-based
  double best_val_metric = 0.0;
  std::string stop_reason;  // "patience" | "max_epochs"
  double wall_time_seconds = 0.0;  // excluded from determinism comparisons

  nlohmann::json to_json() const;
  // Serialisation without the wall time, for bit-exact replay checks.
  nlohmann::json deterministic_json() const;
};

// Adam with bias correction at a fixed learning rate. Moments are keyed by
// parameter name; frozen or non-learnable parameters are never touched.
class Adam {
 public:
  explicit Adam(const HyperParams& hp) : hp_(hp) {}

  // Applies one update using the gradients stored on the parameters.
  // A non-finite gradient aborts with the offending parameter's name.
  void step(models::ModelParams<float>& params);

  std::int64_t steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<float> m, v;
  };
  HyperParams hp_;
  std::int64_t t_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

struct PretrainResult {
  std::filesystem::path checkpoint_dir;
  TrainReport report;
  data::OversampleResult oversampling;
  objectives::ClassWeights class_weights;
  std::array<std::int64_t, data::kEmotionCount> train_counts_before{};
  std::array<std::int64_t, data::kEmotionCount> val_counts{};
};

// Categorical pretraining: subject split, per-window oversampling of the
// training side, reciprocal class weights from pre-oversampling counts,
// weighted sigmoid cross-entropy, augmentation per window. Best model by
// mean balanced accuracy is persisted to out_dir/checkpoint.
PretrainResult pretrain_categorical(const data::Dataset& dataset, const HyperParams& hp,
                                    const models::ModelConfig& model, const models::InitStrategy& init,
                                    const std::filesystem::path& out_dir);

struct FinetuneResult {
  std::filesystem::path checkpoint_dir;
  TrainReport report;
  std::optional<post::ChainConfig> chain;
};

// Dimensional fine-tuning with the CCC loss on (arousal, valence), no
// augmentation, early stopping on mean validation CCC. When
// run_postprocess is set, the validation chain search runs on the best
// model's predictions and the chain is stored next to the checkpoint.
FinetuneResult finetune_dimensional(const data::Dataset& dataset, const HyperParams& hp,
                                    const models::ModelConfig& model, const models::InitStrategy& init,
                                    const std::filesystem::path& out_dir, bool run_postprocess = true);

struct EvalMetrics {
  double arousal_raw = 0.0;
  double valence_raw = 0.0;
  double arousal_post = 0.0;
  double valence_post = 0.0;
  double mean_raw() const { return 0.5 * (arousal_raw + valence_raw); }
  double mean_post() const { return 0.5 * (arousal_post + valence_post); }
};

// Per-dimension CCC of a dimensional checkpoint over the given videos,
// before and after an optional post-processing chain (chain steps run per
// video series; CCC over the concatenation).
EvalMetrics evaluate(models::ModelParams<float>& params, const models::ModelConfig& config,
                     const data::Dataset& dataset, const std::vector<int>& video_indices,
                     const HyperParams& hp, const post::ChainConfig* chain = nullptr);

// Runs the greedy chain search on this model's predictions over the given
// videos (normally the validation partition).
post::ChainConfig search_chain_for(models::ModelParams<float>& params, const models::ModelConfig& config,
                                   const data::Dataset& dataset, const std::vector<int>& video_indices,
                                   const HyperParams& hp);
EvalMetrics evaluate_checkpoint(const std::filesystem::path& checkpoint_dir, const data::Dataset& dataset,
                                const std::vector<int>& video_indices, const HyperParams& hp,
                                const post::ChainConfig* chain = nullptr);

struct CompareRow {
  std::string strategy;
  double val_arousal = 0.0;
  double val_valence = 0.0;
  std::optional<double> test_arousal;
  std::optional<double> test_valence;
  int epochs_to_best = 0;
  double best_val_metric = 0.0;
};

// Fine-tunes one model per strategy on the same data, seed and
// hyperparameters; reports per-strategy validation CCC and epochs-to-best.
// With a test dataset, the best checkpoint is evaluated there using its
// validation-selected chain.
std::vector<CompareRow> compare_initialisations(const data::Dataset& dataset, const HyperParams& hp,
                                                const models::ModelConfig& model,
                                                const std::vector<models::InitStrategy>& strategies,
                                                const std::filesystem::path& out_dir,
                                                const data::Dataset* test_dataset = nullptr);

std::string comparison_table(const std::vector<CompareRow>& rows);

}  // namespace affect::train
