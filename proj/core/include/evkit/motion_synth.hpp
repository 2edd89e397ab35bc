#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "evkit/event_core.hpp"

namespace evkit {

enum class Translation { None, Left, Right, Up, Down, UpperLeft, UpperRight, LowerLeft, LowerRight };
enum class Scaling { None, ZoomIn, ZoomOut };
enum class Rotation { None, Clockwise, Anticlockwise };

const char* to_string(Translation t);
const char* to_string(Scaling s);
const char* to_string(Rotation r);

/// Which of the two parameter sets is drawn: the one that repositions the
/// source image into the start frame, or the one that moves start to end.
enum class MotionSet { OrgToStart, StartToEnd };

struct MotionParams
{
  Translation translation = Translation::None;
  double translation_px = 0.0;     // total displacement magnitude
  Scaling scaling = Scaling::None;
  double scale_factor = 1.0;
  Rotation rotation = Rotation::None;
  double rotation_deg = 0.0;       // unsigned magnitude; sign from `rotation`
  bool perspective = false;
  std::array<std::array<double, 2>, 4> corner_offsets{}; // px, canvas corners TL, TR, BR, BL

  /// The same motion with every magnitude scaled by s in [0, 1] (identity at 0).
  MotionParams scaled(double s) const;

  friend bool operator==(const MotionParams&, const MotionParams&) = default;
};

nlohmann::json to_json(const MotionParams& p);
MotionParams motion_from_json(const nlohmann::json& j);

/// Magnitude ranges for sampled motions and the canvas/crop geometry.
struct ClipConfig
{
  int canvas = 280;
  int crop = 224;
  int n_frames = 12;
  double fps = 30.0;
  double translation_min_px = 8.0, translation_max_px = 40.0;
  double zoom_in_min = 1.05, zoom_in_max = 1.25;
  double zoom_out_min = 0.80, zoom_out_max = 0.95;
  double rotation_min_deg = 3.0, rotation_max_deg = 12.0;
  double perspective_min_px = 2.0, perspective_max_px = 10.0;
};

nlohmann::json to_json(const ClipConfig& c);
ClipConfig clip_config_from_json(const nlohmann::json& j, ClipConfig base = {});

/// Categorical mode proportions per parameter set, in percent.
struct ModeProportions
{
  // Indexed by Translation enum order (None first).
  std::array<double, 9> translation;
  std::array<double, 3> scaling;     // None, ZoomIn, ZoomOut
  std::array<double, 3> rotation;    // None, Clockwise, Anticlockwise
  std::array<double, 2> perspective; // off, on
};

const ModeProportions& mode_proportions(MotionSet which);

MotionParams sample_motion(std::uint64_t seed, MotionSet which, const ClipConfig& config = {});

/// Row-major 3x3 projective transform mapping source canvas coordinates
/// (pixel centers at integer positions) to output canvas coordinates.
using Homography = std::array<double, 9>;

Homography identity_homography();
Homography compose(const Homography& outer, const Homography& inner);
Homography invert(const Homography& h);
std::array<double, 2> apply(const Homography& h, double x, double y);

/// Transform composed about the canvas center in the order scale, rotate,
/// perspective, translate.
Homography motion_homography(const MotionParams& p, int canvas);

struct VideoClip
{
  std::vector<GrayFrame> frames;
  double fps = 30.0;
  std::vector<Homography> positions; // source canvas -> frame canvas, per frame
  MotionParams org_to_start;
  MotionParams start_to_end;
  double clamp_scale = 1.0;          // magnitude shrink applied to keep the crop inside
  int canvas = 280;
  int crop = 224;
};

/// Bilinear resize with edge clamping.
GrayFrame resize_bilinear(const GrayFrame& image, int width, int height);

/// True when the crop window maps inside the source canvas under h.
bool crop_inside_canvas(const Homography& h, int canvas, int crop);

/// Renders a clip from explicit motion parameters. Magnitudes are shrunk
/// uniformly when needed so that every frame's crop stays on the canvas.
VideoClip render_clip(const GrayFrame& image, const MotionParams& org_to_start,
                      const MotionParams& start_to_end, const ClipConfig& config = {});

/// Samples both motion sets from `seed` and renders the clip.
VideoClip synthesize_clip(const GrayFrame& image, std::uint64_t seed, const ClipConfig& config = {});

/// Frame timestamps in microseconds, snapped to multiples of `resolution_us`.
std::vector<Micros> frame_timestamps(std::size_t n_frames, double fps, Micros resolution_us = 1);

/// frame_%03d.pgm, positions.json and clip.json.
void write_clip(const std::filesystem::path& dir, const VideoClip& clip, const ClipConfig& config);
VideoClip read_clip(const std::filesystem::path& dir);

} // namespace evkit
