#include <doctest.h>

#include <set>

#include "evkit/masking.hpp"
#include "evkit/rng.hpp"

using namespace evkit;

namespace {

PatchGrid grid_of(std::vector<double> d, int rows, int cols)
{
  PatchGrid g;
  g.rows = rows;
  g.cols = cols;
  g.density = std::move(d);
  return g;
}

PatchGrid random_grid(int rows, int cols, std::uint64_t seed)
{
  Rng rng(seed);
  std::vector<double> d(static_cast<std::size_t>(rows) * cols);
  for (double& x : d)
    x = std::floor(uniform(rng, 0.0, 50.0));
  return grid_of(std::move(d), rows, cols);
}

constexpr std::array kStrategies = {MaskStrategy::RandomBalanced, MaskStrategy::Density, MaskStrategy::AntiDensity,
                                    MaskStrategy::Uniform};

} // namespace

TEST_CASE("compute_density")
{
  EventVoxel v(4, 4, 2);
  v.at(0, 0, 0) = 2;
  v.at(1, 1, 1) = -3;
  v.at(3, 2, 0) = 1;
  v.at(3, 2, 1) = -1;
  const PatchGrid g = compute_density(v, 2);
  CHECK(g.rows == 2);
  CHECK(g.cols == 2);
  CHECK(g.density == std::vector<double>{5, 0, 0, 2});
  CHECK(compute_density(EventVoxel(4, 4, 3), 4).density == std::vector<double>{0});
  CHECK_THROWS_AS(compute_density(EventVoxel(6, 4, 1), 4), std::invalid_argument);
}

TEST_CASE("density example")
{
  const PatchGrid g = grid_of({5, 1, 4, 2}, 1, 4);
  const PatchMask dense = make_mask(g, 0.5, MaskStrategy::Density, 0);
  CHECK(dense.masked == std::vector<std::size_t>{0, 2});
  CHECK(dense.visible == std::vector<std::size_t>{1, 3});
  const PatchMask sparse = make_mask(g, 0.5, MaskStrategy::AntiDensity, 0);
  CHECK(sparse.masked == std::vector<std::size_t>{1, 3});
  // Balanced at 0.5 takes one of each density-adjacent pair: {1,3} and {2,0}.
  for (std::uint64_t s = 0; s < 50; ++s) {
    const PatchMask b = make_mask(g, 0.5, MaskStrategy::RandomBalanced, s);
    REQUIRE(b.masked.size() == 2);
    const std::set<std::size_t> m(b.masked.begin(), b.masked.end());
    CHECK(m.count(1) + m.count(3) == 1);
    CHECK(m.count(0) + m.count(2) == 1);
  }
}

TEST_CASE("ties are broken by index")
{
  const PatchGrid flat = grid_of(std::vector<double>(6, 1.0), 2, 3);
  CHECK(make_mask(flat, 0.5, MaskStrategy::Density, 0).masked == std::vector<std::size_t>{3, 4, 5});
  CHECK(make_mask(flat, 0.5, MaskStrategy::AntiDensity, 0).masked == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("exact ratio, partition and sorted output for every strategy")
{
  for (int rows = 1; rows <= 14; rows += 3)
    for (int cols = 1; cols <= 14; cols += 2) {
      const PatchGrid g = random_grid(rows, cols, rows * 100 + cols);
      for (double ratio : {0.25, 0.5, 0.75})
        for (MaskStrategy s : kStrategies) {
          const PatchMask m = make_mask(g, ratio, s, 3);
          CHECK(m.masked.size() == masked_count(g.total(), ratio));
          CHECK(m.total() == g.total());
          CHECK(std::is_sorted(m.masked.begin(), m.masked.end()));
          CHECK(std::is_sorted(m.visible.begin(), m.visible.end()));
          std::set<std::size_t> all(m.masked.begin(), m.masked.end());
          all.insert(m.visible.begin(), m.visible.end());
          CHECK(all.size() == g.total());
        }
    }
  CHECK(masked_count(196, 0.5) == 98);
  CHECK(masked_count(3, 0.5) == 2);
}

TEST_CASE("density and anti-density are complements on distinct densities")
{
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::vector<double> d(49);
    for (std::size_t i = 0; i < d.size(); ++i)
      d[i] = static_cast<double>((i * 37 + seed * 11) % 49);
    const PatchGrid g = grid_of(d, 7, 7);
    const PatchMask hi = make_mask(g, 0.5, MaskStrategy::Density, seed);
    const PatchMask lo = make_mask(g, 0.5, MaskStrategy::AntiDensity, seed);
    // 0.5 of 49 rounds to 25 masked, so the complement holds with ratio 24/49.
    const PatchMask lo24 = make_mask(g, 24.0 / 49.0, MaskStrategy::AntiDensity, seed);
    CHECK(hi.visible == lo24.masked);
    double min_hi = 1e9, max_lo = -1;
    for (std::size_t p : hi.masked)
      min_hi = std::min(min_hi, d[p]);
    for (std::size_t p : lo.masked)
      max_lo = std::max(max_lo, d[p]);
    CHECK(min_hi >= max_lo);
  }
}

TEST_CASE("seeded determinism")
{
  const PatchGrid g = random_grid(14, 14, 1);
  for (MaskStrategy s : kStrategies) {
    CHECK(make_mask(g, 0.5, s, 9).masked == make_mask(g, 0.5, s, 9).masked);
  }
  CHECK_FALSE(make_mask(g, 0.5, MaskStrategy::Uniform, 1).masked ==
              make_mask(g, 0.5, MaskStrategy::Uniform, 2).masked);
  CHECK_FALSE(make_mask(g, 0.5, MaskStrategy::RandomBalanced, 1).masked ==
              make_mask(g, 0.5, MaskStrategy::RandomBalanced, 2).masked);
}

TEST_CASE("balanced masking narrows the density gap against a uniform draw")
{
  std::vector<double> d(196);
  for (int y = 0; y < 14; ++y)
    for (int x = 0; x < 14; ++x)
      d[y * 14 + x] = x * 3.0 + y;
  const PatchGrid g = grid_of(d, 14, 14);
  double balanced = 0, uniform_gap = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    balanced += density_gap(g, make_mask(g, 0.5, MaskStrategy::RandomBalanced, s));
    uniform_gap += density_gap(g, make_mask(g, 0.5, MaskStrategy::Uniform, s));
  }
  CHECK(balanced / uniform_gap < 0.5);
  CHECK(density_gap(g, make_mask(g, 0.5, MaskStrategy::Density, 0)) >
        density_gap(g, make_mask(g, 0.5, MaskStrategy::RandomBalanced, 0)));
}

TEST_CASE("invalid ratio and names")
{
  const PatchGrid g = random_grid(2, 2, 0);
  CHECK_THROWS_AS(make_mask(g, 0.0, MaskStrategy::Density, 0), std::invalid_argument);
  CHECK_THROWS_AS(make_mask(g, 1.0, MaskStrategy::Density, 0), std::invalid_argument);
  for (MaskStrategy s : kStrategies)
    CHECK(parse_mask_strategy(to_string(s)) == s);
  CHECK_THROWS_AS(parse_mask_strategy("checkerboard"), std::invalid_argument);
}

TEST_CASE("mask json round trip")
{
  const PatchGrid g = random_grid(5, 5, 2);
  const PatchMask m = make_mask(g, 0.25, MaskStrategy::RandomBalanced, 4);
  const PatchMask back = mask_from_json(to_json(m), 25);
  CHECK(back.masked == m.masked);
  CHECK(back.visible == m.visible);
  CHECK(back.strategy == m.strategy);
  CHECK(back.seed == 4);
  nlohmann::json bad = to_json(m);
  bad["masked"].push_back(bad["masked"][0]);
  CHECK_THROWS_AS(mask_from_json(bad, 25), std::invalid_argument);
}
