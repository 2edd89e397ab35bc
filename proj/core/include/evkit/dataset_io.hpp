#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evkit/dvs_sim.hpp"
#include "evkit/event_core.hpp"
#include "evkit/motion_synth.hpp"

namespace evkit {

/// One pre-training triple: the voxel of an inter-frame segment, the
/// difference of its flanking frames and the source image feature.
struct SampleRecord
{
  EventVoxel voxel;
  DiffMap diff;
  std::vector<double> target_feature;
  std::string image_id;
  int segment = 1; // index into the clip's inter-frame segments; 0 is never stored
  std::string config_hash;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct DatasetConfig
{
  ClipConfig clip;
  DvsConfig dvs = default_config();
  int bins = 5;
  int target_dim = 32;
};

nlohmann::json to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const nlohmann::json& j, DatasetConfig base = {});

/*
 * Shard layout (little-endian):
 *   char[4] "EVSH", u32 version, u32 record count
 *   per record: u32 record length, then four u32-length-prefixed sections:
 *     voxel f64[], diff f64[], feature f64[], JSON metadata
 */
inline constexpr std::uint32_t kShardVersion = 1;
inline constexpr std::size_t kShardHeaderSize = 12;

std::vector<std::uint8_t> encode_record(const SampleRecord& r);
SampleRecord decode_record(std::span<const std::uint8_t> bytes);

/// Writes every record to a fresh shard (atomic rename).
void write_shard(const std::filesystem::path& shard, const std::vector<SampleRecord>& records);
/// Appends one record, creating the shard if needed; the shard is rewritten
/// to a temporary file and renamed.
void write_sample(const std::filesystem::path& shard, const SampleRecord& record);

/// Byte offsets of every record in the shard.
std::vector<std::uint64_t> shard_offsets(const std::filesystem::path& shard);
SampleRecord read_sample(const std::filesystem::path& shard, std::size_t index);
std::vector<SampleRecord> read_shard(const std::filesystem::path& shard);

/// What one image contributed, for reporting.
struct ImageBuild
{
  std::size_t frames = 0;
  std::size_t segments = 0; // inter-frame segments before dropping the first
  std::vector<SampleRecord> records;
};

/// Events -> segments -> records for an already rendered clip.
ImageBuild build_clip_records(const VideoClip& clip, const GrayFrame& image, const std::string& image_id,
                              const DatasetConfig& config, std::uint64_t dvs_seed, std::uint64_t feature_seed,
                              const std::string& config_hash);

/// Clip -> events -> segments -> records for a single image. Per-image
/// randomness comes from `image_seed`; the feature projection from
/// `feature_seed` so features are comparable across images.
ImageBuild build_image_records(const GrayFrame& image, const std::string& image_id,
                               const DatasetConfig& config, std::uint64_t image_seed,
                               std::uint64_t feature_seed, const std::string& config_hash);

struct BuildOptions
{
  unsigned workers = 1;
  std::function<void(const std::string&)> log; // warnings and progress
};

/// Builds one shard per readable image plus manifest.json; returns the
/// manifest. Throws std::runtime_error when no record is produced.
nlohmann::json build_dataset(const std::filesystem::path& image_dir, const std::filesystem::path& out_dir,
                             const DatasetConfig& config, std::uint64_t seed, const BuildOptions& options = {});

/// Image files considered by build_dataset, sorted by name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& image_dir);

nlohmann::json read_manifest(const std::filesystem::path& dataset_dir);

/// Loads every record listed in the manifest, checking content hashes.
std::vector<SampleRecord> load_dataset(const std::filesystem::path& dataset_dir);

} // namespace evkit
