#pragma once

// Run configuration as JSON. Every object is strict: unknown keys are
// rejected with their full path, and "schema_version" is mandatory at the top.

#include <filesystem>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "rssm/experiments.hpp"

namespace rssm {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  int schema_version = 1;
  std::string preset = "small";
  std::uint64_t seed = 0;
  std::string dataset;  // dataset directory; may be given on the command line instead
  ToyConfig toy;
  ModelConfig model;
  TrainConfig train;
  EvalOptions eval;
};

// "paper": full-size toy data and the reference architecture.
// "small": N=12, T=40, 1000/200/200 examples, same architecture.
RunConfig preset_config(const std::string& name);

// Fields absent from `j` keep the values of the preset named in it (default "small").
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& c);

nlohmann::json to_json(const ToyConfig& c);
nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const EvalOptions& c);
ToyConfig toy_from_json(const nlohmann::json& j, ToyConfig base = {}, const std::string& where = "toy");
ModelConfig model_from_json(const nlohmann::json& j, ModelConfig base = {}, const std::string& where = "model");
TrainConfig train_from_json(const nlohmann::json& j, TrainConfig base = {}, const std::string& where = "train");
EvalOptions eval_from_json(const nlohmann::json& j, EvalOptions base = {}, const std::string& where = "eval");

// Checks that the model dimensions agree with the data.
void check_model_matches(const ModelConfig& m, const ToyDataset& ds);

}  // namespace rssm
