#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "partner/eval.hpp"
#include "partner/head.hpp"
#include "partner/model.hpp"
#include "partner/streaming.hpp"
#include "partner/synth.hpp"
#include "partner/voxelize.hpp"

// JSON run configuration. Every section is optional; missing keys keep the defaults below and
// unknown keys are rejected.
namespace partner
{

inline constexpr int kConfigVersion = 1;

/// 64 x 128 BEV grid: UD range bins over [1, 52.2] m, 128 x 256 fine cells, downsample 2.
GridSpec toy_grid_spec();
/// C = d = 32, GRR heads 4, default GRR/GA windows.
ModelConfig toy_model_config();

struct TrainConfig
{
  double learning_rate{0.05};
  std::size_t steps{200};
  std::size_t batch_size{1};
  std::uint64_t seed{0};
  double clip_norm{10.0};
  head::LossConfig loss{head::LossConfig::waymo()};
  GridSpec grid{toy_grid_spec()};
  ModelConfig model{toy_model_config()};

  /// Throws std::invalid_argument on a non-positive rate, zero steps or zero batch.
  void validate() const;
};

struct StreamConfig
{
  std::vector<std::size_t> sectors{1, 2, 4, 8};
  streaming::LatencyModel latency{};
};

struct ResolutionConfig
{
  std::vector<double> scales{1.0, 2.0, 3.0, 4.0, 5.0};
  std::size_t capacity{kDefaultCellCapacity};
};

struct PathsConfig
{
  std::vector<std::string> scenes;
  std::string checkpoint;
};

struct RunConfig
{
  TrainConfig train;
  synth::SceneConfig synth;
  StreamConfig stream;
  eval::EvalConfig eval;
  head::DecodeConfig decode;
  ResolutionConfig resolution;
  PathsConfig paths;
};

nlohmann::json grid_to_json(const GridSpec & spec);
GridSpec grid_from_json(const nlohmann::json & j, GridSpec base = toy_grid_spec());
nlohmann::json model_to_json(const ModelConfig & config);
ModelConfig model_from_json(const nlohmann::json & j, ModelConfig base = toy_model_config());
/// {grid, model, loss, train}.
nlohmann::json train_to_json(const TrainConfig & config);
/// Reads only the grid, model, loss and train sections of `j`; others are ignored.
TrainConfig train_from_json(const nlohmann::json & j);

/// Full document: {version, grid, model, loss, train, synth, stream, eval, resolution, paths}.
nlohmann::json run_config_to_json(const RunConfig & config);
/// Throws std::invalid_argument on unknown keys, wrong types or invalid values.
RunConfig run_config_from_json(const nlohmann::json & j);
/// Throws std::runtime_error when the file is missing or unreadable.
RunConfig load_run_config(const std::filesystem::path & path);

/// FNV-1a 64 of the compact JSON dump, as 16 hex digits.
std::string json_hash(const nlohmann::json & j);
/// Hash of the training-relevant part (grid, model, loss, train).
std::string config_hash(const TrainConfig & config);

}  // namespace partner
