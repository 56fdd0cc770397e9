#pragma once

#include <filesystem>

#include <json.hpp>

#include "affect/models.hpp"

namespace affect::models {

void to_json(nlohmann::json& j, const ResNetConfig& c);
void from_json(const nlohmann::json& j, ResNetConfig& c);
void to_json(nlohmann::json& j, const LstmConfig& c);
void from_json(const nlohmann::json& j, LstmConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace affect::models

namespace affect {

// Checkpoint directory: manifest.json (config, head kind, parameter list,
// training metadata) plus one binary tensor file per parameter under params/.
void save_checkpoint(const std::filesystem::path& dir, const models::ModelConfig& config,
                     const models::ModelParams<float>& params, const nlohmann::json& training_meta);

struct LoadedCheckpoint {
  models::ModelConfig config;
  models::ModelParams<float> params;
  nlohmann::json training;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

// Overwrites every non-head parameter of `params` present in the checkpoint
// (feature extractor, optionally LSTM). The head stays as initialised.
// Throws an incompatible-checkpoint error listing offending names when a
// stored parameter is unknown to the model or has a different shape.
template <typename T>
std::vector<std::string> load_params_into(models::ModelParams<T>& params, const std::filesystem::path& dir);

extern template std::vector<std::string> load_params_into<float>(models::ModelParams<float>&,
                                                                 const std::filesystem::path&);
extern template std::vector<std::string> load_params_into<double>(models::ModelParams<double>&,
                                                                  const std::filesystem::path&);

}  // namespace affect
