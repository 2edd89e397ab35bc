#pragma once

#include <cstdint>
#include <vector>

#include "evkit/dataset_io.hpp"
#include "evkit/event_core.hpp"

namespace evkit {

/// Sinusoidal grating 128 +- amplitude, varying along x (vertical stripes)
/// or along y.
GrayFrame stripe_image(int width, int height, double period, double phase, bool vertical,
                       double amplitude = 90.0);

/// Frames with independent random intensities in [0, 255]; a worst case for
/// per-pixel physics checks.
std::vector<GrayFrame> random_frames(int width, int height, std::size_t n, std::uint64_t seed);

/// Records from stripe images of random phase and orientation run through
/// the full recipe at a small geometry (canvas 80, crop 64).
std::vector<SampleRecord> stripe_dataset(std::size_t n_samples, std::uint64_t seed);

/// The configuration stripe_dataset uses.
DatasetConfig small_dataset_config();

} // namespace evkit
