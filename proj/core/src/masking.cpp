#include "evkit/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "evkit/rng.hpp"

namespace evkit {

PatchGrid compute_density(const EventVoxel& voxel, int patch_size)
{
  if (patch_size <= 0)
    throw std::invalid_argument("patch_size must be positive");
  if (voxel.width % patch_size != 0 || voxel.height % patch_size != 0)
    throw std::invalid_argument("voxel dimensions must be divisible by patch_size");
  PatchGrid g;
  g.patch_size = patch_size;
  g.rows = voxel.height / patch_size;
  g.cols = voxel.width / patch_size;
  g.density.assign(static_cast<std::size_t>(g.rows) * g.cols, 0.0);
  for (int y = 0; y < voxel.height; ++y)
    for (int x = 0; x < voxel.width; ++x) {
      double s = 0.0;
      for (int k = 0; k < voxel.bins; ++k)
        s += std::abs(voxel.at(x, y, k));
      g.density[static_cast<std::size_t>(y / patch_size) * g.cols + x / patch_size] += s;
    }
  return g;
}

const char* to_string(MaskStrategy s)
{
  switch (s) {
  case MaskStrategy::RandomBalanced: return "random_balanced";
  case MaskStrategy::Density: return "density";
  case MaskStrategy::AntiDensity: return "anti_density";
  case MaskStrategy::Uniform: return "uniform";
  }
  return "?";
}

MaskStrategy parse_mask_strategy(const std::string& name)
{
  for (auto s : {MaskStrategy::RandomBalanced, MaskStrategy::Density, MaskStrategy::AntiDensity,
                 MaskStrategy::Uniform})
    if (name == to_string(s))
      return s;
  throw std::invalid_argument("unknown masking strategy: " + name);
}

std::size_t masked_count(std::size_t total, double ratio)
{
  return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(total)));
}

namespace {

// Patch indices ordered by (density, index) ascending: the single total
// order shared by every strategy.
std::vector<std::size_t> density_order(const PatchGrid& grid)
{
  std::vector<std::size_t> order(grid.total());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return grid.density[a] < grid.density[b];
  });
  return order;
}

} // namespace

PatchMask make_mask(const PatchGrid& grid, double ratio, MaskStrategy strategy, std::uint64_t seed)
{
  if (!(ratio > 0.0 && ratio < 1.0))
    throw std::invalid_argument("masking ratio must lie in (0, 1)");
  const std::size_t total = grid.total();
  const std::size_t m = masked_count(total, ratio);
  Rng rng(derive_seed(seed, name_tag("make_mask")));

  std::vector<char> is_masked(total, 0);
  const auto order = density_order(grid);
  switch (strategy) {
  case MaskStrategy::Density:
    for (std::size_t i = total - m; i < total; ++i)
      is_masked[order[i]] = 1;
    break;
  case MaskStrategy::AntiDensity:
    for (std::size_t i = 0; i < m; ++i)
      is_masked[order[i]] = 1;
    break;
  case MaskStrategy::Uniform: {
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < m; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, total - 1);
      std::swap(idx[i], idx[pick(rng)]);
      is_masked[idx[i]] = 1;
    }
    break;
  }
  case MaskStrategy::RandomBalanced: {
    // Draw the smaller side one-per-stratum over density-sorted patches; at
    // ratio 0.5 on an even grid the strata are consecutive pairs.
    const bool pick_masked = m <= total - m;
    const std::size_t picks = pick_masked ? m : total - m;
    if (!pick_masked)
      std::fill(is_masked.begin(), is_masked.end(), 1);
    for (std::size_t j = 0; j < picks; ++j) {
      const std::size_t lo = j * total / picks;
      const std::size_t hi = (j + 1) * total / picks;
      std::uniform_int_distribution<std::size_t> pick(lo, hi - 1);
      is_masked[order[pick(rng)]] = pick_masked ? 1 : 0;
    }
    break;
  }
  }

  PatchMask mask;
  mask.ratio = ratio;
  mask.strategy = strategy;
  mask.seed = seed;
  for (std::size_t p = 0; p < total; ++p)
    (is_masked[p] ? mask.masked : mask.visible).push_back(p);
  return mask;
}

nlohmann::json to_json(const PatchMask& m)
{
  return {{"ratio", m.ratio}, {"strategy", to_string(m.strategy)}, {"seed", m.seed}, {"masked", m.masked}};
}

PatchMask mask_from_json(const nlohmann::json& j, std::size_t total)
{
  PatchMask m;
  m.ratio = j.at("ratio").get<double>();
  m.strategy = parse_mask_strategy(j.at("strategy").get<std::string>());
  m.seed = j.at("seed").get<std::uint64_t>();
  m.masked = j.at("masked").get<std::vector<std::size_t>>();
  std::sort(m.masked.begin(), m.masked.end());
  std::vector<char> hit(total, 0);
  for (std::size_t p : m.masked) {
    if (p >= total || hit[p])
      throw std::invalid_argument("mask index out of range or repeated");
    hit[p] = 1;
  }
  for (std::size_t p = 0; p < total; ++p)
    if (!hit[p])
      m.visible.push_back(p);
  return m;
}

double density_gap(const PatchGrid& grid, const PatchMask& mask)
{
  auto mean = [&](const std::vector<std::size_t>& idx) {
    if (idx.empty())
      return 0.0;
    double s = 0.0;
    for (std::size_t p : idx)
      s += grid.density[p];
    return s / static_cast<double>(idx.size());
  };
  return std::abs(mean(mask.visible) - mean(mask.masked));
}

} // namespace evkit
