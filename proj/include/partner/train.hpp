#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "partner/config.hpp"
#include "partner/model.hpp"
#include "partner/synth.hpp"

// Plain SGD with global-norm clipping over synthetic scenes.
namespace partner::train
{

/// Raised when a loss, gradient or parameter stops being finite.
class NumericalError : public std::runtime_error
{
public:
  NumericalError(const std::string & tensor, const std::string & what)
  : std::runtime_error(what), tensor_(tensor)
  {
  }
  const std::string & tensor() const { return tensor_; }

private:
  std::string tensor_;
};

struct Sample
{
  FeatureMap raw;
  std::vector<head::LabeledBox> boxes;
  SceneTargets targets;
};

Sample make_sample(const synth::Scene & scene, const TrainConfig & config);

struct LossValues
{
  double total{0.0};
  double cls{0.0};
  double reg{0.0};
  double iou{0.0};
  double fg{0.0};
  double dis{0.0};
};

struct StepResult
{
  LossValues loss;       // batch mean, before the update
  double grad_norm{0.0};  // before clipping
  bool clipped{false};
};

/// Rescales all gradients in place so their global L2 norm is at most max_norm; returns the
/// norm before clipping.
double clip_gradients(std::map<std::string, Tensor> & grads, double max_norm);

/// Batch-mean losses and gradients at the current parameters; no update.
StepResult loss_and_gradients(
  const ModelParams & params, const std::vector<Sample> & batch, const TrainConfig & config,
  std::map<std::string, Tensor> & grads);

/// One SGD step on the batch mean loss. Throws NumericalError naming the first non-finite
/// tensor (a loss term, a gradient or an updated parameter).
StepResult train_step(ModelParams & params, const std::vector<Sample> & batch, const TrainConfig & config);

/// Losses at the given parameters, without gradients.
LossValues evaluate_loss(const ModelParams & params, const Sample & sample, const TrainConfig & config);

struct Checkpoint
{
  ModelParams params;
  TrainConfig config;
  std::string config_hash;
  std::size_t step{0};
};

/// Weights at `path` (with the weights sidecar) and {config, config_hash, step} at
/// `path` + ".config.json".
void save_checkpoint(const Checkpoint & ckpt, const std::filesystem::path & path);
/// Throws std::runtime_error when files are missing or tensors do not match the config shapes.
Checkpoint load_checkpoint(const std::filesystem::path & path);
std::filesystem::path checkpoint_config_path(const std::filesystem::path & path);

struct OverfitResult
{
  Checkpoint checkpoint;
  std::vector<LossValues> trace;  // loss before each step
  LossValues final_loss;          // after the last step
};

/// Trains from init_params(model, seed) on one scene for config.steps steps.
OverfitResult overfit(const synth::Scene & scene, const TrainConfig & config);

/// Trains on several scenes, cycling through them in order in batches of batch_size.
OverfitResult train_scenes(const std::vector<synth::Scene> & scenes, const TrainConfig & config);

/// IoU between {H > 0.5} and the foreground target mask; absent when GA is disabled.
std::optional<double> foreground_iou(const ModelParams & params, const Sample & sample, const TrainConfig & config);

}  // namespace partner::train
