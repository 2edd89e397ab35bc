#include "evkit/dvs_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "evkit/rng.hpp"

namespace evkit {

void DvsConfig::validate() const
{
  if (!(pos_thres > 0.0) || !(neg_thres > 0.0))
    throw std::invalid_argument("DVS thresholds must be positive");
  if (sigma_thres < 0.0 || cutoff_hz < 0.0 || leak_rate_hz < 0.0 || shot_noise_rate_hz < 0.0 ||
      leak_jitter_fraction < 0.0 || noise_rate_cov_decades < 0.0 || exposure_duration < 0.0)
    throw std::invalid_argument("DVS rates and spreads must be non-negative");
  if (!(timestamp_resolution > 0.0))
    throw std::invalid_argument("timestamp_resolution must be positive");
  if (resolution_us() == 0)
    throw std::invalid_argument("timestamp_resolution below one microsecond");
}

Micros DvsConfig::resolution_us() const
{
  return static_cast<Micros>(std::llround(timestamp_resolution * 1e6));
}

DvsConfig default_config()
{
  return DvsConfig{};
}

nlohmann::json to_json(const DvsConfig& c)
{
  return {
    {"pos_thres", c.pos_thres},
    {"neg_thres", c.neg_thres},
    {"sigma_thres", c.sigma_thres},
    {"cutoff_hz", c.cutoff_hz},
    {"leak_rate_hz", c.leak_rate_hz},
    {"shot_noise_rate_hz", c.shot_noise_rate_hz},
    {"timestamp_resolution", c.timestamp_resolution},
    {"exposure_duration", c.exposure_duration},
    {"leak_jitter_fraction", c.leak_jitter_fraction},
    {"noise_rate_cov_decades", c.noise_rate_cov_decades},
    {"seed", c.seed},
    {"noiseless", c.noiseless},
  };
}

DvsConfig dvs_config_from_json(const nlohmann::json& j, DvsConfig c)
{
  c.pos_thres = j.value("pos_thres", c.pos_thres);
  c.neg_thres = j.value("neg_thres", c.neg_thres);
  c.sigma_thres = j.value("sigma_thres", c.sigma_thres);
  c.cutoff_hz = j.value("cutoff_hz", c.cutoff_hz);
  c.leak_rate_hz = j.value("leak_rate_hz", c.leak_rate_hz);
  c.shot_noise_rate_hz = j.value("shot_noise_rate_hz", c.shot_noise_rate_hz);
  c.timestamp_resolution = j.value("timestamp_resolution", c.timestamp_resolution);
  c.exposure_duration = j.value("exposure_duration", c.exposure_duration);
  c.leak_jitter_fraction = j.value("leak_jitter_fraction", c.leak_jitter_fraction);
  c.noise_rate_cov_decades = j.value("noise_rate_cov_decades", c.noise_rate_cov_decades);
  c.seed = j.value("seed", c.seed);
  c.noiseless = j.value("noiseless", c.noiseless);
  return c;
}

namespace {

// Runs one pixel over the whole clip and appends its events.
void simulate_pixel(int x, int y, std::span<const double> frame_values,
                    std::span<const Micros> timestamps, const DvsConfig& cfg,
                    std::uint64_t pixel_index, std::vector<Event>& out)
{
  const Micros res = cfg.resolution_us();
  const double dt = static_cast<double>(res) * 1e-6;

  double theta_on = cfg.pos_thres;
  double theta_off = cfg.neg_thres;
  double leak_rate = 0.0, shot_rate = 0.0;
  Rng rng(derive_seed(cfg.seed, name_tag("dvs_pixel"), pixel_index));
  const bool noisy = !cfg.noiseless;
  if (noisy) {
    constexpr double kMinThreshold = 0.01;
    if (cfg.sigma_thres > 0.0) {
      theta_on = std::max(kMinThreshold, normal(rng, cfg.pos_thres, cfg.sigma_thres));
      theta_off = std::max(kMinThreshold, normal(rng, cfg.neg_thres, cfg.sigma_thres));
    }
    leak_rate = std::max(0.0, cfg.leak_rate_hz * (1.0 + cfg.leak_jitter_fraction * normal(rng)));
    shot_rate = cfg.shot_noise_rate_hz * std::pow(10.0, cfg.noise_rate_cov_decades * normal(rng));
  }
  const double p_leak = 1.0 - std::exp(-leak_rate * dt);
  const double p_shot = 1.0 - std::exp(-shot_rate * dt);

  const double alpha =
    cfg.cutoff_hz > 0.0 ? 1.0 - std::exp(-dt * 2.0 * std::numbers::pi * cfg.cutoff_hz) : 1.0;

  double filtered = std::log(frame_values[0] + kLogEpsilon);
  double reference = filtered;

  const auto ux = static_cast<std::uint16_t>(x);
  const auto uy = static_cast<std::uint16_t>(y);
  std::size_t seg = 0;
  for (Micros t = timestamps.front() + res; t <= timestamps.back(); t += res) {
    while (t > timestamps[seg + 1])
      ++seg;
    const double span = static_cast<double>(timestamps[seg + 1] - timestamps[seg]);
    const double w = static_cast<double>(t - timestamps[seg]) / span;
    const double intensity = frame_values[seg] + (frame_values[seg + 1] - frame_values[seg]) * w;
    const double log_i = std::log(intensity + kLogEpsilon);
    filtered += alpha * (log_i - filtered);

    const double diff = filtered - reference;
    if (diff > 0.0) {
      const auto k = static_cast<long>(std::floor((diff + kCrossingTolerance) / theta_on));
      for (long i = 0; i < k; ++i)
        out.push_back({t, ux, uy, 1});
      reference += static_cast<double>(k) * theta_on;
    } else if (diff < 0.0) {
      const auto k = static_cast<long>(std::floor((-diff + kCrossingTolerance) / theta_off));
      for (long i = 0; i < k; ++i)
        out.push_back({t, ux, uy, -1});
      reference -= static_cast<double>(k) * theta_off;
    }

    if (noisy) {
      if (p_leak > 0.0 && uniform01(rng) < p_leak)
        out.push_back({t, ux, uy, 1});
      if (p_shot > 0.0 && uniform01(rng) < p_shot)
        out.push_back({t, ux, uy, static_cast<std::int8_t>(uniform01(rng) < 0.5 ? 1 : -1)});
    }
  }
}

} // namespace

EventStream simulate_frames(std::span<const GrayFrame> frames, std::span<const Micros> timestamps,
                            const DvsConfig& config)
{
  config.validate();
  if (frames.size() < 2)
    throw std::invalid_argument("simulate requires at least two frames");
  if (timestamps.size() != frames.size())
    throw std::invalid_argument("one timestamp per frame required");
  const Micros res = config.resolution_us();
  for (std::size_t i = 0; i < timestamps.size(); ++i) {
    if ((timestamps[i] - timestamps[0]) % res != 0)
      throw std::invalid_argument("frame timestamps must sit on the resolution grid");
    if (i > 0 && timestamps[i] <= timestamps[i - 1])
      throw std::invalid_argument("frame timestamps must increase");
  }
  const int w = frames[0].width, h = frames[0].height;
  for (const GrayFrame& f : frames)
    if (f.width != w || f.height != h)
      throw std::invalid_argument("all frames must share dimensions");

  EventStream stream;
  stream.width = w;
  stream.height = h;
  stream.t_start = timestamps.front();
  stream.t_end = timestamps.back();

  std::vector<double> values(frames.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      for (std::size_t i = 0; i < frames.size(); ++i)
        values[i] = frames[i].at(x, y);
      const auto index = static_cast<std::uint64_t>(y) * static_cast<std::uint64_t>(w) + x;
      simulate_pixel(x, y, values, timestamps, config, index, stream.events);
    }

  std::stable_sort(stream.events.begin(), stream.events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  return stream;
}

EventStream simulate(const VideoClip& clip, const DvsConfig& config)
{
  if (clip.frames.size() < 2)
    throw std::invalid_argument("simulate requires at least two frames");
  const auto ts = frame_timestamps(clip.frames.size(), clip.fps, config.resolution_us());
  return simulate_frames(clip.frames, ts, config);
}

} // namespace evkit
