#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evkit/dataset_io.hpp"
#include "evkit/masking.hpp"
#include "evkit/toy_model.hpp"

namespace evkit {

/// Hyperparameters for one stage. `trainable` is fixed by the stage and is
/// only checked against what a schedule file declares.
struct StageConfig
{
  Stage stage = Stage::MM;
  std::vector<ParamGroup> trainable;
  std::size_t steps = 200;
  std::size_t batch_size = 8;
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
  double grad_clip = 5.0;    // global norm; 0 disables
  std::size_t warmup_steps = 0;
  bool cosine = true;        // cosine decay to zero after warmup
  double mask_ratio = 0.5;
  MaskStrategy mask_strategy = MaskStrategy::RandomBalanced;
};

/// Toy-scale defaults per stage: learning rates are the pre-training base
/// rates scaled up tenfold for the tiny model, warmup keeps the same
/// fraction of the run.
StageConfig default_stage_config(Stage stage, std::size_t steps = 200);

nlohmann::json to_json(const StageConfig& s);
/// Keys absent from `j` take the stage defaults; a declared `trainable`
/// list must match the stage's groups.
StageConfig stage_config_from_json(const nlohmann::json& j);

/// Throws std::invalid_argument unless stages are strictly in MM, Trans, CL order.
void validate_schedule(const std::vector<StageConfig>& schedule);

struct TrainPlan
{
  std::vector<StageConfig> stages;
  nlohmann::json model = nlohmann::json::object(); // ModelConfig overrides
};

/// Accepts JSON or the TOML subset (tables, arrays of [[stage]] tables,
/// scalars and flat arrays), chosen by content.
TrainPlan parse_plan(const std::string& text);
TrainPlan load_plan(const std::filesystem::path& path);

/// Minimal AdamW touching only the groups it was built for.
class AdamW
{
public:
  AdamW(const Model& model, const StageConfig& stage);

  /// Applies one update with learning rate `lr`; returns the pre-clip
  /// gradient norm over the trainable parameters.
  double step(Model& model, const Gradients& grad, double lr);

private:
  StageConfig cfg_;
  std::vector<char> active_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

double scheduled_lr(const StageConfig& s, std::size_t step);

struct LossRecord
{
  std::size_t step = 0; // global across stages
  Stage stage = Stage::MM;
  double loss = 0.0;
  std::size_t negatives = 0; // contrastive stages: queue size used
};

struct StageReport
{
  Stage stage = Stage::MM;
  std::size_t steps = 0;
  std::map<ParamGroup, std::string> before; // sha256 of group bytes
  std::map<ParamGroup, std::string> after;
  std::filesystem::path checkpoint;
};

struct TrainOptions
{
  ModelConfig model;                      // geometry must match the samples
  std::filesystem::path checkpoint_dir;   // empty: checkpoints are not written
  std::function<void(const LossRecord&)> on_step;
};

struct TrainResult
{
  Model model;
  std::vector<LossRecord> trace;
  std::vector<StageReport> stages;
};

/// Runs the stages in order on `data`. Every stage starts with a fresh
/// optimizer and negative queue and writes a checkpoint when a directory
/// is given.
TrainResult train_stages(const std::vector<SampleRecord>& data, const std::vector<StageConfig>& schedule,
                         std::uint64_t seed, const TrainOptions& options = {});

/// Mean of the first / last `window` losses of a stage.
double head_mean(const std::vector<LossRecord>& trace, Stage stage, std::size_t window);
double tail_mean(const std::vector<LossRecord>& trace, Stage stage, std::size_t window);

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& trace);

} // namespace evkit
