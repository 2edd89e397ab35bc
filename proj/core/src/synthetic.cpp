#include "evkit/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "evkit/io.hpp"
#include "evkit/rng.hpp"

namespace evkit {

GrayFrame stripe_image(int width, int height, double period, double phase, bool vertical, double amplitude)
{
  GrayFrame f(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double u = vertical ? x : y;
      f.at(x, y) = 128.0 + amplitude * std::sin(2.0 * std::numbers::pi * u / period + phase);
    }
  return f;
}

std::vector<GrayFrame> random_frames(int width, int height, std::size_t n, std::uint64_t seed)
{
  Rng rng(derive_seed(seed, name_tag("random_frames")));
  std::vector<GrayFrame> frames;
  for (std::size_t i = 0; i < n; ++i) {
    GrayFrame f(width, height);
    for (double& v : f.data)
      v = uniform(rng, 0.0, 255.0);
    frames.push_back(std::move(f));
  }
  return frames;
}

DatasetConfig small_dataset_config()
{
  DatasetConfig c;
  c.clip.canvas = 80;
  c.clip.crop = 64;
  c.clip.translation_min_px = 4.0;
  c.clip.translation_max_px = 12.0;
  return c;
}

std::vector<SampleRecord> stripe_dataset(std::size_t n_samples, std::uint64_t seed)
{
  const DatasetConfig config = small_dataset_config();
  const std::string hash = config_hash({{"config", to_json(config)}, {"seed", seed}, {"scene", "stripes"}});
  const std::uint64_t feature_seed = derive_seed(seed, name_tag("target_feature"));
  Rng rng(derive_seed(seed, name_tag("stripe_dataset")));
  std::vector<SampleRecord> out;
  for (std::uint64_t img = 0; out.size() < n_samples; ++img) {
    // Period 16 px after the 64 -> 80 resize, i.e. one cycle per patch.
    const double period = 16.0 * 64.0 / 80.0;
    const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const bool vertical = uniform01(rng) < 0.5;
    const GrayFrame image = stripe_image(64, 64, period, phase, vertical);
    ImageBuild b = build_image_records(image, "stripes" + std::to_string(img), config,
                                       derive_seed(seed, name_tag("image"), img), feature_seed, hash);
    for (SampleRecord& r : b.records)
      if (out.size() < n_samples)
        out.push_back(std::move(r));
  }
  return out;
}

} // namespace evkit
