#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evkit/event_core.hpp"

namespace evkit {

/// Per-patch event density over a voxel tiled by square patches.
struct PatchGrid
{
  int patch_size = 16;
  int rows = 0;
  int cols = 0;
  std::vector<double> density; // row-major, rows * cols

  std::size_t total() const { return density.size(); }
};

/// density[p] = sum over the patch's cells (all bins) of |accumulation|.
PatchGrid compute_density(const EventVoxel& voxel, int patch_size = 16);

enum class MaskStrategy {
  RandomBalanced, // stratified over density-sorted patches
  Density,        // mask the densest patches
  AntiDensity,    // mask the sparsest patches
  Uniform,        // unstratified random subset; baseline for comparisons
};

const char* to_string(MaskStrategy s);
MaskStrategy parse_mask_strategy(const std::string& name);

struct PatchMask
{
  double ratio = 0.5;
  MaskStrategy strategy = MaskStrategy::RandomBalanced;
  std::uint64_t seed = 0;
  std::vector<std::size_t> visible; // ascending
  std::vector<std::size_t> masked;  // ascending

  std::size_t total() const { return visible.size() + masked.size(); }
};

/// round(ratio * total), the exact masked count every strategy produces.
std::size_t masked_count(std::size_t total, double ratio);

PatchMask make_mask(const PatchGrid& grid, double ratio, MaskStrategy strategy, std::uint64_t seed);

nlohmann::json to_json(const PatchMask& m);
/// Rebuilds visible from the patch total.
PatchMask mask_from_json(const nlohmann::json& j, std::size_t total);

/// |mean density(visible) - mean density(masked)|.
double density_gap(const PatchGrid& grid, const PatchMask& mask);

} // namespace evkit
