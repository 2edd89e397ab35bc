#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evkit/event_core.hpp"
#include "evkit/losses.hpp"
#include "evkit/masking.hpp"

namespace evkit {

/*
 * Desk-scale stand-in for the pre-training backbone.
 *
 *   encoder   low path  e = W_low x + b_low          (patch -> D)
 *             high path h = tanh(W_high e + b_high)
 *             fused token t = e + h                  (masked modeling only)
 *   decoder   z_p = (visible ? t_p : mask_token) + pos_p
 *             a_p = tanh(W_self z_p + W_nbr mean_{4-nbrs} z + W_ctx mean_all z + b)
 *             y_p = W_out a_p + b_out                (D -> patch_size^2)
 *   heads     projection: 3-layer tanh MLP, prediction: 2-layer tanh MLP,
 *             target_proj: linear map on target features
 *
 * Contrastive stages drop the fusion sum and pool the high-path tokens by
 * their mean.
 */

enum class ParamGroup : std::uint8_t { Encoder, Decoder, Projection, Prediction, TargetProj };
inline constexpr std::array kAllGroups = {ParamGroup::Encoder, ParamGroup::Decoder, ParamGroup::Projection,
                                          ParamGroup::Prediction, ParamGroup::TargetProj};
const char* to_string(ParamGroup g);
ParamGroup parse_param_group(const std::string& name);

enum class Stage : std::uint8_t { MM, Trans, CL };
const char* to_string(Stage s);
Stage parse_stage(const std::string& name);

/// The parameter groups a stage may update.
std::vector<ParamGroup> trainable_groups(Stage s);

struct ModelConfig
{
  int width = 64;
  int height = 64;
  int bins = 5;
  int patch_size = 16;
  int embed_dim = 64;
  int target_dim = 32;
  double temperature = kDefaultTemperature;
  std::size_t queue_capacity = kDefaultQueueCapacity;
  std::uint64_t seed = 0;

  int grid_rows() const { return height / patch_size; }
  int grid_cols() const { return width / patch_size; }
  int num_patches() const { return grid_rows() * grid_cols(); }
  int patch_input() const { return patch_size * patch_size * bins; }
  int patch_pixels() const { return patch_size * patch_size; }
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

struct Parameter
{
  std::string name;
  ParamGroup group;
  std::vector<std::size_t> shape;
  std::vector<double> value;
};

/// Gradient buffers aligned with Model::params().
struct Gradients
{
  std::vector<std::vector<double>> g;
};

class Model
{
public:
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization from config.seed.
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  Parameter& param(const std::string& name);
  const Parameter& param(const std::string& name) const;

  Gradients zero_gradients() const;

  /// Concatenated raw bytes of every parameter in `group`.
  std::vector<std::uint8_t> group_bytes(ParamGroup group) const;

  friend bool operator==(const Model& a, const Model& b);

private:
  ModelConfig config_;
  std::vector<Parameter> params_;
};

/// Flattened patch inputs (rows-major patches; within a patch y, x, bin).
std::vector<std::vector<double>> extract_patches(const EventVoxel& voxel, int patch_size);
/// Per-patch pixels of a plane (row-major inside the patch).
std::vector<std::vector<double>> extract_plane_patches(const Plane& plane, int patch_size);

/// Encoder tokens for the given patches. With `fused` the token is
/// low + high(low); otherwise the high path alone.
std::vector<std::vector<double>> encode_tokens(const Model& model,
                                               const std::vector<std::vector<double>>& patches,
                                               bool fused);

/// Reconstructions for mask.masked, in that order.
std::vector<std::vector<double>> forward_mm(const Model& model, const EventVoxel& voxel,
                                            const PatchMask& mask);

struct MmExample
{
  EventVoxel voxel;
  PatchMask mask;
  std::vector<PatchTarget> targets; // one per masked patch
};

/// Builds targets by standardizing the diff map's masked patches.
MmExample make_mm_example(const EventVoxel& voxel, const DiffMap& diff, const PatchMask& mask,
                          int patch_size);

struct LossAndGrad
{
  double loss = 0.0;
  Gradients grad;
  std::vector<std::vector<double>> keys; // contrastive stages: normalized positives, one per example
};

/// Mean reconstruction loss over the examples and its gradient.
LossAndGrad mm_loss_and_grad(const Model& model, const std::vector<MmExample>& batch);

struct ClExample
{
  EventVoxel voxel;
  std::vector<double> target_feature;
};

/// Query/positive from the contrastive path; negatives taken from `negatives`.
ContrastBatch forward_cl(const Model& model, const EventVoxel& voxel,
                         const std::vector<double>& target_feature, Stage stage,
                         const std::vector<std::vector<double>>& negatives = {});

/// Mean InfoNCE over the examples against a fixed negative set.
LossAndGrad cl_loss_and_grad(const Model& model, const std::vector<ClExample>& batch,
                             const std::vector<std::vector<double>>& negatives, Stage stage);

/// Deterministic stand-in for image features: seeded Gaussian projection of
/// the mean-removed 16x16 area-downsampled image, L2-normalized.
std::vector<double> make_target_feature(const GrayFrame& image, std::uint64_t seed, int dim = 32);

void write_checkpoint(const std::filesystem::path& ckpt, const Model& model, Stage stage, std::size_t step);
Model read_checkpoint(const std::filesystem::path& ckpt);

} // namespace evkit
