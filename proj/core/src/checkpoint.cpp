#include "affect/checkpoint.hpp"

#include <algorithm>
#include <fstream>

namespace affect::models {

void to_json(nlohmann::json& j, const ResNetConfig& c) {
  j = nlohmann::json{{"in_channels", c.in_channels},
                     {"stem_channels", c.stem_channels},
                     {"stem_kernel", c.stem_kernel},
                     {"stem_stride", c.stem_stride},
                     {"block_replications", c.block_replications},
                     {"block_widths", c.block_widths},
                     {"input_size", c.input_size},
                     {"use_batch_norm", c.use_batch_norm}};
}

void from_json(const nlohmann::json& j, ResNetConfig& c) {
  j.at("in_channels").get_to(c.in_channels);
  j.at("stem_channels").get_to(c.stem_channels);
  j.at("stem_kernel").get_to(c.stem_kernel);
  j.at("stem_stride").get_to(c.stem_stride);
  j.at("block_replications").get_to(c.block_replications);
  j.at("block_widths").get_to(c.block_widths);
  j.at("input_size").get_to(c.input_size);
  j.at("use_batch_norm").get_to(c.use_batch_norm);
}

void to_json(nlohmann::json& j, const LstmConfig& c) {
  j = nlohmann::json{{"layers", c.layers}, {"hidden", c.hidden}, {"input_dim", c.input_dim}};
}

void from_json(const nlohmann::json& j, LstmConfig& c) {
  j.at("layers").get_to(c.layers);
  j.at("hidden").get_to(c.hidden);
  j.at("input_dim").get_to(c.input_dim);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"resnet", c.resnet}, {"lstm", c.lstm}, {"head", head_kind_name(c.head)}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("resnet").get_to(c.resnet);
  j.at("lstm").get_to(c.lstm);
  c.head = head_kind_from_name(j.at("head").get<std::string>());
}

}  // namespace affect::models

namespace affect {

namespace fs = std::filesystem;

static void write_json_file(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
}

static nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open json file: " + path.string());
  return nlohmann::json::parse(in);
}

void save_checkpoint(const fs::path& dir, const models::ModelConfig& config,
                     const models::ModelParams<float>& params, const nlohmann::json& training_meta) {
  fs::create_directories(dir / "params");
  nlohmann::json manifest;
  manifest["format"] = "affect-checkpoint-v1";
  manifest["dtype"] = "float32";
  manifest["config"] = config;
  manifest["head"] = models::head_kind_name(config.head);
  nlohmann::json plist = nlohmann::json::array();
  for (const auto& name : params.names())
    plist.push_back({{"name", name}, {"learnable", params.learnable(name)}});
  manifest["params"] = plist;
  manifest["training"] = training_meta;
  write_json_file(dir / "manifest.json", manifest);
  for (const auto& name : params.names()) save_tensor(dir / "params" / (name + ".tnsr"), params.get(name));
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  const nlohmann::json manifest = read_json_file(dir / "manifest.json");
  if (manifest.at("format").get<std::string>() != "affect-checkpoint-v1")
    throw std::runtime_error("unsupported checkpoint format in " + dir.string());
  LoadedCheckpoint ck;
  ck.config = manifest.at("config").get<models::ModelConfig>();
  ck.training = manifest.value("training", nlohmann::json::object());
  for (const auto& entry : manifest.at("params")) {
    const auto name = entry.at("name").get<std::string>();
    ck.params.add(name, load_tensor<float>(dir / "params" / (name + ".tnsr")), entry.at("learnable").get<bool>());
  }
  return ck;
}

template <typename T>
std::vector<std::string> load_params_into(models::ModelParams<T>& params, const fs::path& dir) {
  const nlohmann::json manifest = read_json_file(dir / "manifest.json");
  std::vector<std::string> loaded;
  std::vector<std::string> offending;
  for (const auto& entry : manifest.at("params")) {
    const auto name = entry.at("name").get<std::string>();
    if (name.starts_with("head.")) continue;
    if (!params.has(name)) {
      offending.push_back(name + " (unknown to model)");
      continue;
    }
    Tensor<T> stored = load_tensor<T>(dir / "params" / (name + ".tnsr"));
    Tensor<T>& dst = params.get(name);
    if (stored.shape() != dst.shape()) {
      offending.push_back(name + " (checkpoint " + shape_str(stored.shape()) + " vs model " +
                          shape_str(dst.shape()) + ")");
      continue;
    }
    std::copy(stored.data().begin(), stored.data().end(), dst.data().begin());
    loaded.push_back(name);
  }
  if (!offending.empty()) {
    std::string msg = "incompatible checkpoint " + dir.string() + ":";
    for (const auto& o : offending) msg += "\n  " + o;
    throw contract_error(msg);
  }
  return loaded;
}

template std::vector<std::string> load_params_into<float>(models::ModelParams<float>&, const fs::path&);
template std::vector<std::string> load_params_into<double>(models::ModelParams<double>&, const fs::path&);

}  // namespace affect
