#include "affect/models.hpp"

#include <cmath>

#include "affect/checkpoint.hpp"
#include "affect/ops.hpp"

namespace affect::models {

ResNetConfig ResNetConfig::paper() { return ResNetConfig{}; }

ResNetConfig ResNetConfig::desk() {
  ResNetConfig c;
  c.in_channels = 1;
  c.stem_channels = 8;
  c.stem_kernel = 3;
  c.block_replications = {1, 1, 1, 1};
  c.block_widths = {{{4, 4, 16}, {8, 8, 32}, {8, 8, 32}, {16, 16, 64}}};
  c.input_size = {32, 32};
  return c;
}

void ResNetConfig::validate() const {
  if (in_channels < 1 || stem_channels < 1 || stem_kernel < 1 || stem_stride < 1)
    throw contract_error("resnet config: stem fields must be positive");
  for (int s = 0; s < 4; ++s) {
    if (block_replications[s] < 1) throw contract_error("resnet config: each stage needs >= 1 block");
    const auto& [w1, w2, w3] = block_widths[s];
    if (w1 < 1) throw contract_error("resnet config: widths must be positive");
    if (w1 != w2) throw contract_error("resnet config: bottleneck widths w1 and w2 must match");
    if (w3 != 4 * w1) throw contract_error("resnet config: bottleneck expansion must be 4x");
  }
  if (input_size[0] < stem_kernel || input_size[1] < stem_kernel)
    throw contract_error("resnet config: input smaller than stem kernel");
}

void LstmConfig::validate() const {
  if (layers < 1) throw contract_error("lstm config: layers must be >= 1");
  if (hidden < 1 || input_dim < 1) throw contract_error("lstm config: dimensions must be positive");
}

const char* head_kind_name(HeadKind k) { return k == HeadKind::categorical ? "categorical" : "dimensional"; }

HeadKind head_kind_from_name(const std::string& name) {
  if (name == "categorical") return HeadKind::categorical;
  if (name == "dimensional") return HeadKind::dimensional;
  throw contract_error("unknown head kind: " + name);
}

void ModelConfig::validate() const {
  resnet.validate();
  lstm.validate();
  if (lstm.input_dim != resnet.feature_dim())
    throw contract_error("model config: lstm input_dim must equal the feature width " +
                         std::to_string(resnet.feature_dim()));
}

ModelConfig ModelConfig::paper(HeadKind head) {
  ModelConfig c;
  c.resnet = ResNetConfig::paper();
  c.lstm = LstmConfig{2, 128, c.resnet.feature_dim()};
  c.head = head;
  return c;
}

ModelConfig ModelConfig::desk(HeadKind head) {
  ModelConfig c;
  c.resnet = ResNetConfig::desk();
  c.lstm = LstmConfig{2, 32, c.resnet.feature_dim()};
  c.head = head;
  return c;
}

// ---------------------------------------------------------------------------
// ModelParams

template <typename T>
Tensor<T>& ModelParams<T>::add(const std::string& name, Tensor<T> tensor, bool learnable) {
  if (index_.count(name)) throw contract_error("duplicate parameter name: " + name);
  index_[name] = order_.size();
  order_.push_back(name);
  tensors_.push_back(std::move(tensor));
  learnable_.push_back(learnable);
  if (learnable) tensors_.back().set_requires_grad(true);
  return tensors_.back();
}

template <typename T>
Tensor<T>& ModelParams<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw contract_error("unknown parameter: " + name);
  return tensors_[it->second];
}

template <typename T>
const Tensor<T>& ModelParams<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw contract_error("unknown parameter: " + name);
  return tensors_[it->second];
}

template <typename T>
bool ModelParams<T>::learnable(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw contract_error("unknown parameter: " + name);
  return learnable_[it->second];
}

template <typename T>
std::int64_t ModelParams<T>::count_elements(bool learnable_only) const {
  std::int64_t n = 0;
  for (size_t i = 0; i < tensors_.size(); ++i)
    if (!learnable_only || learnable_[i]) n += tensors_[i].numel();
  return n;
}

template <typename T>
ModelParams<T> ModelParams<T>::clone() const {
  ModelParams<T> out;
  for (size_t i = 0; i < order_.size(); ++i) out.add(order_[i], tensors_[i].clone(), learnable_[i]);
  return out;
}

// ---------------------------------------------------------------------------
// init

InitStrategy InitStrategy::parse(const std::string& token) {
  if (token == "random") return random();
  const auto colon = token.find(':');
  if (colon != std::string::npos) {
    const std::string kind = token.substr(0, colon);
    const std::string path = token.substr(colon + 1);
    if (kind == "imagenet" || kind == "external") return external(path);
    if (kind == "pretrained") return pretrained(path);
  }
  throw contract_error("unknown init strategy: '" + token + "' (expected random | imagenet:<path> | pretrained:<path>)");
}

std::string InitStrategy::str() const {
  switch (kind) {
    case Kind::random_xavier: return "random";
    case Kind::external_checkpoint: return "imagenet:" + checkpoint.string();
    case Kind::pretrained_categorical: return "pretrained:" + checkpoint.string();
  }
  return "random";
}

double xavier_bound(std::int64_t fan_in, std::int64_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

namespace {

template <typename T>
Tensor<T> xavier_tensor(Shape shape, std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
  Tensor<T> t(shape);
  const double b = xavier_bound(fan_in, fan_out);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-b, b));
  return t;
}

template <typename T>
void add_conv(ModelParams<T>& params, const std::string& prefix, int out_ch, int in_ch, int k, bool with_bias,
              Rng& rng) {
  const std::int64_t fan_in = static_cast<std::int64_t>(in_ch) * k * k;
  const std::int64_t fan_out = static_cast<std::int64_t>(out_ch) * k * k;
  params.add(prefix + ".weight", xavier_tensor<T>(Shape{out_ch, in_ch, k, k}, fan_in, fan_out, rng), true);
  if (with_bias) params.add(prefix + ".bias", Tensor<T>(Shape{out_ch}), true);
}

template <typename T>
void add_bn(ModelParams<T>& params, const std::string& prefix, int channels) {
  params.add(prefix + ".gamma", Tensor<T>::full(Shape{channels}, T(1)), true);
  params.add(prefix + ".beta", Tensor<T>(Shape{channels}), true);
  params.add(prefix + ".running_mean", Tensor<T>(Shape{channels}), false);
  params.add(prefix + ".running_var", Tensor<T>::full(Shape{channels}, T(1)), false);
}

std::string stage_prefix(int stage, int block) {
  return "stage" + std::to_string(stage + 1) + ".block" + std::to_string(block);
}

// Channel count entering stage `stage`, block `block`.
int block_in_channels(const ResNetConfig& cfg, int stage, int block) {
  if (block > 0) return cfg.block_widths[static_cast<size_t>(stage)][2];
  return stage == 0 ? cfg.stem_channels : cfg.block_widths[static_cast<size_t>(stage - 1)][2];
}

bool block_has_projection(const ResNetConfig& cfg, int stage, int block) {
  if (block != 0) return false;
  return block_in_channels(cfg, stage, 0) != cfg.block_widths[static_cast<size_t>(stage)][2] ||
         ResNetConfig::stage_stride(stage) != 1;
}

}  // namespace

template <typename T>
ModelParams<T> build_model(const ModelConfig& config, const InitStrategy& init, std::uint64_t seed,
                           std::vector<std::string>* loaded_names) {
  config.validate();
  const ResNetConfig& rc = config.resnet;
  const bool bias = !rc.use_batch_norm;
  Rng rng(seed);

  ModelParams<T> params;
  add_conv(params, "stem.conv", rc.stem_channels, rc.in_channels, rc.stem_kernel, bias, rng);
  if (rc.use_batch_norm) add_bn(params, "stem.bn", rc.stem_channels);

  for (int s = 0; s < 4; ++s) {
    const auto& [w1, w2, w3] = rc.block_widths[static_cast<size_t>(s)];
    for (int b = 0; b < rc.block_replications[static_cast<size_t>(s)]; ++b) {
      const std::string p = stage_prefix(s, b);
      const int c_in = block_in_channels(rc, s, b);
      add_conv(params, p + ".conv1", w1, c_in, 1, bias, rng);
      if (rc.use_batch_norm) add_bn(params, p + ".bn1", w1);
      add_conv(params, p + ".conv2", w2, w1, 3, bias, rng);
      if (rc.use_batch_norm) add_bn(params, p + ".bn2", w2);
      add_conv(params, p + ".conv3", w3, w2, 1, bias, rng);
      if (rc.use_batch_norm) add_bn(params, p + ".bn3", w3);
      if (block_has_projection(rc, s, b)) {
        add_conv(params, p + ".proj", w3, c_in, 1, bias, rng);
        if (rc.use_batch_norm) add_bn(params, p + ".proj_bn", w3);
      }
    }
  }

  const LstmConfig& lc = config.lstm;
  for (int l = 0; l < lc.layers; ++l) {
    const int d_in = l == 0 ? lc.input_dim : lc.hidden;
    const std::string p = "lstm.layer" + std::to_string(l);
    params.add(p + ".w_ih", xavier_tensor<T>(Shape{d_in, 4 * lc.hidden}, d_in, 4 * lc.hidden, rng), true);
    params.add(p + ".w_hh", xavier_tensor<T>(Shape{lc.hidden, 4 * lc.hidden}, lc.hidden, 4 * lc.hidden, rng), true);
    params.add(p + ".bias", Tensor<T>(Shape{4 * lc.hidden}), true);
  }

  const int k = head_width(config.head);
  params.add("head.weight", xavier_tensor<T>(Shape{lc.hidden, k}, lc.hidden, k, rng), true);
  params.add("head.bias", Tensor<T>(Shape{k}), true);

  if (init.kind != InitStrategy::Kind::random_xavier) {
    auto loaded = load_params_into(params, init.checkpoint);
    if (loaded_names) *loaded_names = std::move(loaded);
  } else if (loaded_names) {
    loaded_names->clear();
  }
  return params;
}

// ---------------------------------------------------------------------------
// forward

namespace {

template <typename T>
Tensor<T> conv_maybe_bias(ModelParams<T>& params, const std::string& prefix, const Tensor<T>& x, int stride,
                          int padding, bool use_bn) {
  if (use_bn) return conv2d(x, params.get(prefix + ".weight"), stride, padding);
  return conv2d(x, params.get(prefix + ".weight"), params.get(prefix + ".bias"), stride, padding);
}

template <typename T>
Tensor<T> bn_layer(ModelParams<T>& params, const std::string& prefix, const Tensor<T>& x, Mode mode) {
  return batch_norm(x, params.get(prefix + ".gamma"), params.get(prefix + ".beta"),
                    params.get(prefix + ".running_mean"), params.get(prefix + ".running_var"),
                    mode == Mode::train ? BatchNormMode::train : BatchNormMode::eval);
}

template <typename T>
Tensor<T> conv_bn_unit(ModelParams<T>& params, const std::string& conv, const std::string& bn, const Tensor<T>& x,
                       int stride, int padding, bool use_bn, Mode mode) {
  Tensor<T> y = conv_maybe_bias(params, conv, x, stride, padding, use_bn);
  if (use_bn) y = bn_layer(params, bn, y, mode);
  return y;
}

}  // namespace

template <typename T>
Tensor<T> bottleneck_forward(ModelParams<T>& params, const ResNetConfig& cfg, int stage, int block,
                             const Tensor<T>& x, Mode mode) {
  const std::string p = stage_prefix(stage, block);
  const bool bn = cfg.use_batch_norm;
  const int stride = block == 0 ? ResNetConfig::stage_stride(stage) : 1;

  Tensor<T> y = relu(conv_bn_unit(params, p + ".conv1", p + ".bn1", x, 1, 0, bn, mode));
  y = relu(conv_bn_unit(params, p + ".conv2", p + ".bn2", y, stride, 1, bn, mode));
  y = conv_bn_unit(params, p + ".conv3", p + ".bn3", y, 1, 0, bn, mode);

  Tensor<T> shortcut = x;
  if (block_has_projection(cfg, stage, block))
    shortcut = conv_bn_unit(params, p + ".proj", p + ".proj_bn", x, stride, 0, bn, mode);
  return relu(add(y, shortcut));
}

template <typename T>
Tensor<T> extract_features(ModelParams<T>& params, const ResNetConfig& cfg, const Tensor<T>& frames, Mode mode) {
  if (frames.rank() != 4) throw dimension_error("extract_features expects [N,C,H,W]");
  if (frames.dim(1) != cfg.in_channels || frames.dim(2) != cfg.input_size[0] || frames.dim(3) != cfg.input_size[1])
    throw dimension_error("extract_features: frame shape " + shape_str(frames.shape()) +
                          " does not match the configured input size");

  Tensor<T> x = conv_maybe_bias(params, "stem.conv", frames, cfg.stem_stride, cfg.stem_kernel / 2,
                                cfg.use_batch_norm);
  if (cfg.use_batch_norm) x = bn_layer(params, "stem.bn", x, mode);
  x = relu(x);
  x = max_pool2d(x, 3, 2);

  for (int s = 0; s < 4; ++s)
    for (int b = 0; b < cfg.block_replications[static_cast<size_t>(s)]; ++b)
      x = bottleneck_forward(params, cfg, s, b, x, mode);

  return global_avg_pool(x);
}

template <typename T>
Tensor<T> lstm_forward(ModelParams<T>& params, const LstmConfig& cfg, const Tensor<T>& features) {
  if (features.rank() != 3) throw dimension_error("lstm_forward expects [B,T,D]");
  const std::int64_t B = features.dim(0), T_len = features.dim(1);
  const int H = cfg.hidden;

  Tensor<T> layer_in = features;
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "lstm.layer" + std::to_string(l);
    Tensor<T>& w_ih = params.get(p + ".w_ih");
    Tensor<T>& w_hh = params.get(p + ".w_hh");
    Tensor<T>& bias = params.get(p + ".bias");
    const std::int64_t D = layer_in.dim(2);

    Tensor<T> h(Shape{B, H});
    Tensor<T> c(Shape{B, H});
    std::vector<Tensor<T>> outputs;
    outputs.reserve(static_cast<size_t>(T_len));
    for (std::int64_t t = 0; t < T_len; ++t) {
      Tensor<T> x_t = reshape(narrow(layer_in, 1, t, 1), Shape{B, D});
      Tensor<T> gates = add(linear(x_t, w_ih, bias), linear(h, w_hh));
      Tensor<T> i_g = sigmoid(narrow(gates, 1, 0, H));
      Tensor<T> f_g = sigmoid(narrow(gates, 1, H, H));
      Tensor<T> g_g = tanh_op(narrow(gates, 1, 2 * H, H));
      Tensor<T> o_g = sigmoid(narrow(gates, 1, 3 * H, H));
      c = add(mul(f_g, c), mul(i_g, g_g));
      h = mul(o_g, tanh_op(c));
      outputs.push_back(reshape(h, Shape{B, 1, H}));
    }
    layer_in = outputs.size() == 1 ? outputs.front() : concat(outputs, 1);
  }
  return layer_in;
}

template <typename T>
Tensor<T> model_forward(ModelParams<T>& params, const ModelConfig& cfg, const Tensor<T>& clip, Mode mode) {
  if (clip.rank() != 5) throw dimension_error("model_forward expects [B,T,C,H,W]");
  const std::int64_t B = clip.dim(0), T_len = clip.dim(1);
  Tensor<T> frames = reshape(clip, Shape{B * T_len, clip.dim(2), clip.dim(3), clip.dim(4)});
  Tensor<T> features = extract_features(params, cfg.resnet, frames, mode);
  features = reshape(features, Shape{B, T_len, cfg.resnet.feature_dim()});
  Tensor<T> hidden = lstm_forward(params, cfg.lstm, features);
  Tensor<T> flat = reshape(hidden, Shape{B * T_len, cfg.lstm.hidden});
  Tensor<T> out = linear(flat, params.get("head.weight"), params.get("head.bias"));
  return reshape(out, Shape{B, T_len, head_width(cfg.head)});
}

template class ModelParams<float>;
template class ModelParams<double>;
template ModelParams<float> build_model<float>(const ModelConfig&, const InitStrategy&, std::uint64_t,
                                               std::vector<std::string>*);
template ModelParams<double> build_model<double>(const ModelConfig&, const InitStrategy&, std::uint64_t,
                                                 std::vector<std::string>*);
template Tensor<float> bottleneck_forward<float>(ModelParams<float>&, const ResNetConfig&, int, int,
                                                 const Tensor<float>&, Mode);
template Tensor<double> bottleneck_forward<double>(ModelParams<double>&, const ResNetConfig&, int, int,
                                                   const Tensor<double>&, Mode);
template Tensor<float> extract_features<float>(ModelParams<float>&, const ResNetConfig&, const Tensor<float>&, Mode);
template Tensor<double> extract_features<double>(ModelParams<double>&, const ResNetConfig&, const Tensor<double>&, Mode);
template Tensor<float> lstm_forward<float>(ModelParams<float>&, const LstmConfig&, const Tensor<float>&);
template Tensor<double> lstm_forward<double>(ModelParams<double>&, const LstmConfig&, const Tensor<double>&);
template Tensor<float> model_forward<float>(ModelParams<float>&, const ModelConfig&, const Tensor<float>&, Mode);
template Tensor<double> model_forward<double>(ModelParams<double>&, const ModelConfig&, const Tensor<double>&, Mode);

}  // namespace affect::models
