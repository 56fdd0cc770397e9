#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "affect/random.hpp"
#include "affect/tensor.hpp"

namespace affect::models {

// Bottleneck residual feature extractor configuration. Four stages, each a
// replicated 1x1 -> 3x3 -> 1x1 bottleneck with a shortcut connection; the
// third width of every stage is four times the first.
struct ResNetConfig {
  int in_channels = 3;
  int stem_channels = 64;
  int stem_kernel = 7;
  int stem_stride = 2;
  std::array<int, 4> block_replications{3, 4, 6, 3};
  std::array<std::array<int, 3>, 4> block_widths{{{64, 64, 256}, {128, 128, 512}, {256, 256, 1024}, {512, 512, 2048}}};
  std::array<int, 2> input_size{150, 150};
  bool use_batch_norm = true;

  static ResNetConfig paper();  // the published 50-layer shape
  static ResNetConfig desk();   // test-scale shape with identical structure

  void validate() const;
  int feature_dim() const { return block_widths[3][2]; }
  static constexpr int stage_stride(int stage) { return stage == 0 ? 1 : 2; }
};

struct LstmConfig {
  int layers = 2;
  int hidden = 128;
  int input_dim = 2048;

  void validate() const;
};

enum class HeadKind { categorical, dimensional };

constexpr int head_width(HeadKind k) { return k == HeadKind::categorical ? 8 : 2; }
const char* head_kind_name(HeadKind k);
HeadKind head_kind_from_name(const std::string& name);

struct ModelConfig {
  ResNetConfig resnet;
  LstmConfig lstm;
  HeadKind head = HeadKind::categorical;

  void validate() const;
  static ModelConfig paper(HeadKind head);
  static ModelConfig desk(HeadKind head);
};

// Ordered name -> tensor map holding every learnable parameter plus the
// non-learnable batch-norm running buffers.
template <typename T>
class ModelParams {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> tensor, bool learnable);
  Tensor<T>& get(const std::string& name);
  const Tensor<T>& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  bool learnable(const std::string& name) const;

  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }
  std::int64_t count_elements(bool learnable_only) const;

  // Deep copy (fresh buffers, grads not copied).
  ModelParams clone() const;

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, size_t> index_;
  std::vector<Tensor<T>> tensors_;
  std::vector<bool> learnable_;
};

// Weight initialisation strategies compared by the training harness.
struct InitStrategy {
  enum class Kind { random_xavier, external_checkpoint, pretrained_categorical };
  Kind kind = Kind::random_xavier;
  std::filesystem::path checkpoint;

  static InitStrategy random() { return {}; }
  static InitStrategy external(std::filesystem::path p) { return {Kind::external_checkpoint, std::move(p)}; }
  static InitStrategy pretrained(std::filesystem::path p) { return {Kind::pretrained_categorical, std::move(p)}; }
  // "random" | "imagenet:<path>" | "external:<path>" | "pretrained:<path>"
  static InitStrategy parse(const std::string& token);
  std::string str() const;
};

double xavier_bound(std::int64_t fan_in, std::int64_t fan_out);

// Builds all parameters for the configured model. Random init is
// Xavier-uniform (biases zero, batch-norm gamma 1 / beta 0); checkpoint init
// overwrites every non-head parameter found in the checkpoint and leaves the
// head freshly initialised. `loaded_names`, when given, receives the names
// taken from the checkpoint.
template <typename T>
ModelParams<T> build_model(const ModelConfig& config, const InitStrategy& init, std::uint64_t seed,
                           std::vector<std::string>* loaded_names = nullptr);

enum class Mode { train, eval };

// One bottleneck block: relu(bn3(conv3(relu(bn2(conv2(relu(bn1(conv1(x)))))))) + shortcut(x)).
template <typename T>
Tensor<T> bottleneck_forward(ModelParams<T>& params, const ResNetConfig& cfg, int stage, int block,
                             const Tensor<T>& x, Mode mode);

// Frames [N,C,H,W] -> features [N,D] through stem, stages and average pooling.
template <typename T>
Tensor<T> extract_features(ModelParams<T>& params, const ResNetConfig& cfg, const Tensor<T>& frames, Mode mode);

// Features [B,T,D] -> top-layer hidden sequence [B,T,H]. Gates are ordered
// (input, forget, cell, output) along the 4H axis; initial state is zero.
template <typename T>
Tensor<T> lstm_forward(ModelParams<T>& params, const LstmConfig& cfg, const Tensor<T>& features);

// Clip [B,T,C,H,W] -> per-frame outputs [B,T,8] (categorical logits) or
// [B,T,2] (arousal, valence).
template <typename T>
Tensor<T> model_forward(ModelParams<T>& params, const ModelConfig& cfg, const Tensor<T>& clip, Mode mode);

extern template class ModelParams<float>;
extern template class ModelParams<double>;
extern template ModelParams<float> build_model<float>(const ModelConfig&, const InitStrategy&, std::uint64_t,
                                                      std::vector<std::string>*);
extern template ModelParams<double> build_model<double>(const ModelConfig&, const InitStrategy&, std::uint64_t,
                                                        std::vector<std::string>*);
extern template Tensor<float> bottleneck_forward<float>(ModelParams<float>&, const ResNetConfig&, int, int,
                                                        const Tensor<float>&, Mode);
extern template Tensor<double> bottleneck_forward<double>(ModelParams<double>&, const ResNetConfig&, int, int,
                                                          const Tensor<double>&, Mode);
extern template Tensor<float> extract_features<float>(ModelParams<float>&, const ResNetConfig&, const Tensor<float>&, Mode);
extern template Tensor<double> extract_features<double>(ModelParams<double>&, const ResNetConfig&, const Tensor<double>&, Mode);
extern template Tensor<float> lstm_forward<float>(ModelParams<float>&, const LstmConfig&, const Tensor<float>&);
extern template Tensor<double> lstm_forward<double>(ModelParams<double>&, const LstmConfig&, const Tensor<double>&);
extern template Tensor<float> model_forward<float>(ModelParams<float>&, const ModelConfig&, const Tensor<float>&, Mode);
extern template Tensor<double> model_forward<double>(ModelParams<double>&, const ModelConfig&, const Tensor<double>&, Mode);

}  // namespace affect::models
