#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace evkit {

/// Timestamps are integer microseconds throughout the library.
using Micros = std::uint64_t;

struct Event
{
  Micros t = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t polarity = 1;

  friend bool operator==(const Event&, const Event&) = default;
};

/*
 * A time-ordered stream of events over a declared sensor geometry and time
 * window [t_start, t_end].
 */
struct EventStream
{
  int width = 0;
  int height = 0;
  Micros t_start = 0;
  Micros t_end = 0;
  std::vector<Event> events;

  /// Throws std::invalid_argument if any stream invariant is violated.
  void validate() const;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

/// H x W x bins signed accumulation, stored row-major with bins innermost.
struct EventVoxel
{
  int width = 0;
  int height = 0;
  int bins = 0;
  std::vector<double> data;

  EventVoxel() = default;
  EventVoxel(int w, int h, int b);

  std::size_t index(int x, int y, int k) const
  {
    return (static_cast<std::size_t>(y) * width + x) * bins + k;
  }
  double& at(int x, int y, int k) { return data[index(x, y, k)]; }
  double at(int x, int y, int k) const { return data[index(x, y, k)]; }

  friend bool operator==(const EventVoxel&, const EventVoxel&) = default;
};

/// Row-major H x W plane of real values. Used for grayscale frames and
/// signed intensity difference maps alike.
struct Plane
{
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Plane() = default;
  Plane(int w, int h, double fill = 0.0);

  double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const Plane&, const Plane&) = default;
};

/// Intensities in [0, 255].
struct GrayFrame : Plane
{
  using Plane::Plane;
  void validate() const;
};

/// Signed values in [-255, 255] for frame differences; polarity images reuse
/// the type with event-count units.
struct DiffMap : Plane
{
  using Plane::Plane;
};

/// Splits into boundaries.size() - 1 segments. Segment i holds events with
/// boundaries[i] <= t < boundaries[i+1]; the last segment is closed on the
/// right so that a stream whose window equals [front, back] is partitioned.
std::vector<EventStream> segment_stream(const EventStream& stream,
                                        std::span<const Micros> boundaries);

/// Bin k = floor(bins * (t - t_start) / (t_end - t_start)), clamped to bins-1.
EventVoxel voxelize(const EventStream& segment, int bins);

/// next - prev, elementwise.
DiffMap diff_map(const GrayFrame& prev, const GrayFrame& next);

/// Per-pixel sum over the time bins.
DiffMap polarity_image(const EventVoxel& voxel);

/// First n events by time, or the stream unchanged when it holds fewer.
EventStream take_fixed_events(const EventStream& stream, std::size_t n, std::uint64_t seed = 0);

enum class VariantKind { Sparse, Noise, SparseNoise };

const char* to_string(VariantKind kind);
VariantKind parse_variant_kind(const char* name);

/// One entry per noise modification, in the order applied.
struct Modification
{
  enum class Op : std::uint8_t { Erase, Insert };
  Op op;
  Event event;
};

struct VariantResult
{
  EventStream stream;
  std::size_t sparse_dropped = 0;
  std::vector<Modification> log;
};

VariantResult make_variant_logged(const EventStream& stream, VariantKind kind,
                                  double noise_frac, std::uint64_t seed);

EventStream make_variant(const EventStream& stream, VariantKind kind,
                         double noise_frac, std::uint64_t seed);

} // namespace evkit
