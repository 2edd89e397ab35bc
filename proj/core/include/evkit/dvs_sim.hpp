#pragma once

#include <cstdint>

#include <nlohmann/json.hpp>

#include "evkit/event_core.hpp"
#include "evkit/motion_synth.hpp"

namespace evkit {

/*
 * v2e-style pixel model parameters. Thresholds are in log-intensity units,
 * rates in Hz per pixel, times in seconds.
 */
struct DvsConfig
{
  double pos_thres = 0.2;
  double neg_thres = 0.2;
  double sigma_thres = 0.05;
  double cutoff_hz = 15.0;
  double leak_rate_hz = 0.1;
  double shot_noise_rate_hz = 5.0;
  double timestamp_resolution = 0.003;
  double exposure_duration = 0.005;
  double leak_jitter_fraction = 0.1;
  double noise_rate_cov_decades = 0.1;
  std::uint64_t seed = 0;
  bool noiseless = false;

  void validate() const;
  Micros resolution_us() const;
};

/// v2e "noisy" model with the photoreceptor cutoff lowered to 15 Hz.
DvsConfig default_config();

nlohmann::json to_json(const DvsConfig& c);
/// Overlays the keys present in `j` onto `base`.
DvsConfig dvs_config_from_json(const nlohmann::json& j, DvsConfig base = default_config());

/// Added to intensities (0..255 scale) before taking the log.
inline constexpr double kLogEpsilon = 0.02 * 255.0;

/// Tolerance in log units when counting threshold multiples, so that a
/// change of exactly k thresholds is not lost to rounding.
inline constexpr double kCrossingTolerance = 1e-9;

/*
 * Converts frames into events. Frames sit at frame_timestamps(fps,
 * resolution); intensity is linearly interpolated at every multiple of the
 * timestamp resolution and each pixel runs an independent model seeded from
 * (config.seed, pixel index), so results do not depend on threading.
 */
EventStream simulate(const VideoClip& clip, const DvsConfig& config);

/// Intensity frames with explicit timestamps (microseconds, multiples of the
/// resolution).
EventStream simulate_frames(std::span<const GrayFrame> frames, std::span<const Micros> timestamps,
                            const DvsConfig& config);

} // namespace evkit
