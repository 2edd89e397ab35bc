#include "evkit/motion_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include "evkit/io.hpp"
#include "evkit/rng.hpp"

namespace evkit {

namespace fs = std::filesystem;

const char* to_string(Translation t)
{
  switch (t) {
  case Translation::None: return "none";
  case Translation::Left: return "left";
  case Translation::Right: return "right";
  case Translation::Up: return "up";
  case Translation::Down: return "down";
  case Translation::UpperLeft: return "upper_left";
  case Translation::UpperRight: return "upper_right";
  case Translation::LowerLeft: return "lower_left";
  case Translation::LowerRight: return "lower_right";
  }
  return "?";
}

const char* to_string(Scaling s)
{
  switch (s) {
  case Scaling::None: return "none";
  case Scaling::ZoomIn: return "zoom_in";
  case Scaling::ZoomOut: return "zoom_out";
  }
  return "?";
}

const char* to_string(Rotation r)
{
  switch (r) {
  case Rotation::None: return "none";
  case Rotation::Clockwise: return "cw";
  case Rotation::Anticlockwise: return "ccw";
  }
  return "?";
}

namespace {

template <typename Enum, std::size_t N>
Enum enum_from_string(const std::string& s, const std::array<Enum, N>& all)
{
  for (Enum e : all)
    if (s == to_string(e))
      return e;
  throw std::invalid_argument("unknown motion mode: " + s);
}

constexpr std::array kTranslations = {
  Translation::None, Translation::Left, Translation::Right, Translation::Up, Translation::Down,
  Translation::UpperLeft, Translation::UpperRight, Translation::LowerLeft, Translation::LowerRight};
constexpr std::array kScalings = {Scaling::None, Scaling::ZoomIn, Scaling::ZoomOut};
constexpr std::array kRotations = {Rotation::None, Rotation::Clockwise, Rotation::Anticlockwise};

std::array<double, 2> translation_unit(Translation t)
{
  constexpr double d = std::numbers::sqrt2 / 2.0;
  switch (t) {
  case Translation::None: return {0.0, 0.0};
  case Translation::Left: return {-1.0, 0.0};
  case Translation::Right: return {1.0, 0.0};
  case Translation::Up: return {0.0, -1.0};
  case Translation::Down: return {0.0, 1.0};
  case Translation::UpperLeft: return {-d, -d};
  case Translation::UpperRight: return {d, -d};
  case Translation::LowerLeft: return {-d, d};
  case Translation::LowerRight: return {d, d};
  }
  return {0.0, 0.0};
}

// Gaussian elimination with partial pivoting on an 8x8 system.
std::array<double, 8> solve8(std::array<std::array<double, 9>, 8> a)
{
  for (int c = 0; c < 8; ++c) {
    int piv = c;
    for (int r = c + 1; r < 8; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c]))
        piv = r;
    if (std::abs(a[piv][c]) < 1e-12)
      throw std::runtime_error("singular perspective system");
    std::swap(a[c], a[piv]);
    for (int r = 0; r < 8; ++r) {
      if (r == c)
        continue;
      const double f = a[r][c] / a[c][c];
      for (int k = c; k < 9; ++k)
        a[r][k] -= f * a[c][k];
    }
  }
  std::array<double, 8> x{};
  for (int i = 0; i < 8; ++i)
    x[i] = a[i][8] / a[i][i];
  return x;
}

// Homography taking the four points `src` to `dst`.
Homography four_point(const std::array<std::array<double, 2>, 4>& src,
                      const std::array<std::array<double, 2>, 4>& dst)
{
  std::array<std::array<double, 9>, 8> a{};
  for (int i = 0; i < 4; ++i) {
    const double x = src[i][0], y = src[i][1], u = dst[i][0], v = dst[i][1];
    a[2 * i] = {x, y, 1, 0, 0, 0, -u * x, -u * y, u};
    a[2 * i + 1] = {0, 0, 0, x, y, 1, -v * x, -v * y, v};
  }
  const auto h = solve8(a);
  return {h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0};
}

double bilinear(const GrayFrame& img, double x, double y)
{
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const int x0 = std::min(static_cast<int>(x), img.width - 1);
  const int y0 = std::min(static_cast<int>(y), img.height - 1);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = img.at(x0, y0) * (1 - fx) + img.at(x1, y0) * fx;
  const double bot = img.at(x0, y1) * (1 - fx) + img.at(x1, y1) * fx;
  return top * (1 - fy) + bot * fy;
}

} // namespace

MotionParams MotionParams::scaled(double s) const
{
  MotionParams p = *this;
  p.translation_px *= s;
  p.scale_factor = 1.0 + (scale_factor - 1.0) * s;
  p.rotation_deg *= s;
  for (auto& c : p.corner_offsets)
    for (double& v : c)
      v *= s;
  return p;
}

nlohmann::json to_json(const MotionParams& p)
{
  nlohmann::json offsets = nlohmann::json::array();
  for (const auto& c : p.corner_offsets)
    offsets.push_back({c[0], c[1]});
  return {
    {"translation", to_string(p.translation)}, {"translation_px", p.translation_px},
    {"scaling", to_string(p.scaling)},         {"scale_factor", p.scale_factor},
    {"rotation", to_string(p.rotation)},       {"rotation_deg", p.rotation_deg},
    {"perspective", p.perspective},            {"corner_offsets", offsets},
  };
}

MotionParams motion_from_json(const nlohmann::json& j)
{
  MotionParams p;
  p.translation = enum_from_string(j.at("translation").get<std::string>(), kTranslations);
  p.translation_px = j.at("translation_px").get<double>();
  p.scaling = enum_from_string(j.at("scaling").get<std::string>(), kScalings);
  p.scale_factor = j.at("scale_factor").get<double>();
  p.rotation = enum_from_string(j.at("rotation").get<std::string>(), kRotations);
  p.rotation_deg = j.at("rotation_deg").get<double>();
  p.perspective = j.at("perspective").get<bool>();
  const auto& off = j.at("corner_offsets");
  for (std::size_t i = 0; i < 4; ++i)
    p.corner_offsets[i] = {off.at(i).at(0).get<double>(), off.at(i).at(1).get<double>()};
  return p;
}

nlohmann::json to_json(const ClipConfig& c)
{
  return {
    {"canvas", c.canvas},
    {"crop", c.crop},
    {"n_frames", c.n_frames},
    {"fps", c.fps},
    {"translation_px", {c.translation_min_px, c.translation_max_px}},
    {"zoom_in", {c.zoom_in_min, c.zoom_in_max}},
    {"zoom_out", {c.zoom_out_min, c.zoom_out_max}},
    {"rotation_deg", {c.rotation_min_deg, c.rotation_max_deg}},
    {"perspective_px", {c.perspective_min_px, c.perspective_max_px}},
  };
}

ClipConfig clip_config_from_json(const nlohmann::json& j, ClipConfig c)
{
  auto range = [&](const char* key, double& lo, double& hi) {
    if (j.contains(key)) {
      lo = j[key].at(0).get<double>();
      hi = j[key].at(1).get<double>();
    }
  };
  c.canvas = j.value("canvas", c.canvas);
  c.crop = j.value("crop", c.crop);
  c.n_frames = j.value("n_frames", c.n_frames);
  c.fps = j.value("fps", c.fps);
  range("translation_px", c.translation_min_px, c.translation_max_px);
  range("zoom_in", c.zoom_in_min, c.zoom_in_max);
  range("zoom_out", c.zoom_out_min, c.zoom_out_max);
  range("rotation_deg", c.rotation_min_deg, c.rotation_max_deg);
  range("perspective_px", c.perspective_min_px, c.perspective_max_px);
  return c;
}

const ModeProportions& mode_proportions(MotionSet which)
{
  // Translation order: none, left, right, up, down, upper left, upper right,
  // lower left, lower right.
  static const ModeProportions org_to_start{
    {21.49, 15.93, 15.81, 16.13, 15.67, 3.69, 3.76, 3.74, 3.77},
    {67.48, 22.54, 9.99},
    {76.75, 11.60, 11.65},
    {65.28, 34.72},
  };
  static const ModeProportions start_to_end{
    {0.00, 20.60, 20.39, 20.53, 20.86, 4.47, 4.30, 4.40, 4.46},
    {66.82, 20.54, 12.64},
    {73.85, 13.11, 13.04},
    {63.40, 36.60},
  };
  return which == MotionSet::OrgToStart ? org_to_start : start_to_end;
}

MotionParams sample_motion(std::uint64_t seed, MotionSet which, const ClipConfig& config)
{
  const ModeProportions& prop = mode_proportions(which);
  Rng rng(derive_seed(seed, name_tag("sample_motion"), static_cast<std::uint64_t>(which)));
  auto categorical = [&](const auto& weights) {
    std::discrete_distribution<int> d(weights.begin(), weights.end());
    return d(rng);
  };

  MotionParams p;
  p.translation = kTranslations[categorical(prop.translation)];
  p.scaling = kScalings[categorical(prop.scaling)];
  p.rotation = kRotations[categorical(prop.rotation)];
  p.perspective = categorical(prop.perspective) == 1;

  if (p.translation != Translation::None)
    p.translation_px = uniform(rng, config.translation_min_px, config.translation_max_px);
  if (p.scaling == Scaling::ZoomIn)
    p.scale_factor = uniform(rng, config.zoom_in_min, config.zoom_in_max);
  else if (p.scaling == Scaling::ZoomOut)
    p.scale_factor = uniform(rng, config.zoom_out_min, config.zoom_out_max);
  if (p.rotation != Rotation::None)
    p.rotation_deg = uniform(rng, config.rotation_min_deg, config.rotation_max_deg);
  if (p.perspective) {
    for (auto& c : p.corner_offsets) {
      const double mag = uniform(rng, config.perspective_min_px, config.perspective_max_px);
      const double ang = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      c = {mag * std::cos(ang), mag * std::sin(ang)};
    }
  }
  return p;
}

Homography identity_homography()
{
  return {1, 0, 0, 0, 1, 0, 0, 0, 1};
}

Homography compose(const Homography& a, const Homography& b)
{
  Homography c{};
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) {
      double s = 0.0;
      for (int j = 0; j < 3; ++j)
        s += a[r * 3 + j] * b[j * 3 + k];
      c[r * 3 + k] = s;
    }
  return c;
}

Homography invert(const Homography& m)
{
  const double a = m[0], b = m[1], c = m[2], d = m[3], e = m[4], f = m[5], g = m[6], h = m[7], i = m[8];
  const double A = e * i - f * h, B = -(d * i - f * g), C = d * h - e * g;
  const double det = a * A + b * B + c * C;
  if (std::abs(det) < 1e-15)
    throw std::runtime_error("singular homography");
  const double inv = 1.0 / det;
  return {A * inv, -(b * i - c * h) * inv, (b * f - c * e) * inv,
          B * inv, (a * i - c * g) * inv,  -(a * f - c * d) * inv,
          C * inv, -(a * h - b * g) * inv, (a * e - b * d) * inv};
}

std::array<double, 2> apply(const Homography& h, double x, double y)
{
  const double w = h[6] * x + h[7] * y + h[8];
  return {(h[0] * x + h[1] * y + h[2]) / w, (h[3] * x + h[4] * y + h[5]) / w};
}

Homography motion_homography(const MotionParams& p, int canvas)
{
  const double c = (canvas - 1) / 2.0;
  const double f = p.scale_factor;
  const Homography scale{f, 0, 0, 0, f, 0, 0, 0, 1};

  double ang = p.rotation_deg * std::numbers::pi / 180.0;
  if (p.rotation == Rotation::Anticlockwise)
    ang = -ang;
  else if (p.rotation == Rotation::None)
    ang = 0.0;
  // With y pointing down, a positive angle turns content clockwise on screen.
  const Homography rot{std::cos(ang), -std::sin(ang), 0, std::sin(ang), std::cos(ang), 0, 0, 0, 1};

  Homography persp = identity_homography();
  if (p.perspective) {
    const std::array<std::array<double, 2>, 4> src{{{-c, -c}, {c, -c}, {c, c}, {-c, c}}};
    auto dst = src;
    for (int i = 0; i < 4; ++i) {
      dst[i][0] += p.corner_offsets[i][0];
      dst[i][1] += p.corner_offsets[i][1];
    }
    persp = four_point(src, dst);
  }

  const auto dir = translation_unit(p.translation);
  const Homography shift{1, 0, dir[0] * p.translation_px, 0, 1, dir[1] * p.translation_px, 0, 0, 1};

  const Homography to_center{1, 0, -c, 0, 1, -c, 0, 0, 1};
  const Homography from_center{1, 0, c, 0, 1, c, 0, 0, 1};
  Homography h = compose(rot, scale);
  h = compose(persp, h);
  h = compose(shift, h);
  return compose(from_center, compose(h, to_center));
}

GrayFrame resize_bilinear(const GrayFrame& image, int width, int height)
{
  GrayFrame out(width, height);
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out.at(x, y) = bilinear(image, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
  return out;
}

bool crop_inside_canvas(const Homography& h, int canvas, int crop)
{
  const Homography inv = invert(h);
  const double lo = (canvas - crop) / 2.0;
  const double hi = lo + crop - 1;
  const double limit = canvas - 1;
  // A homography maps the crop rectangle to a convex quadrilateral, so
  // checking its corners against the convex canvas suffices.
  for (auto [x, y] : {std::array{lo, lo}, {hi, lo}, {hi, hi}, {lo, hi}}) {
    const double w = inv[6] * x + inv[7] * y + inv[8];
    if (w <= 0.0)
      return false;
    const auto s = apply(inv, x, y);
    if (!(s[0] >= 0.0 && s[0] <= limit && s[1] >= 0.0 && s[1] <= limit))
      return false;
  }
  return true;
}

namespace {

std::vector<Homography> frame_transforms(const MotionParams& a, const MotionParams& b,
                                         const ClipConfig& config)
{
  const Homography start = motion_homography(a, config.canvas);
  std::vector<Homography> hs;
  hs.reserve(config.n_frames);
  for (int i = 0; i < config.n_frames; ++i) {
    const double s = config.n_frames > 1 ? static_cast<double>(i) / (config.n_frames - 1) : 0.0;
    hs.push_back(compose(motion_homography(b.scaled(s), config.canvas), start));
  }
  return hs;
}

} // namespace

VideoClip render_clip(const GrayFrame& image, const MotionParams& org_to_start,
                      const MotionParams& start_to_end, const ClipConfig& config)
{
  if (image.width < 64 || image.height < 64)
    throw std::invalid_argument("synthesize_clip requires an image of at least 64x64");
  if (config.n_frames < 1 || config.crop > config.canvas || config.fps <= 0.0)
    throw std::invalid_argument("invalid clip configuration");

  // Shrink all magnitudes together until every frame keeps its crop inside
  // the canvas; the identity motion always qualifies.
  double k = 1.0;
  MotionParams a = org_to_start, b = start_to_end;
  std::vector<Homography> hs;
  for (int iter = 0;; ++iter) {
    a = org_to_start.scaled(k);
    b = start_to_end.scaled(k);
    hs = frame_transforms(a, b, config);
    const bool ok = std::all_of(hs.begin(), hs.end(), [&](const Homography& h) {
      return crop_inside_canvas(h, config.canvas, config.crop);
    });
    if (ok)
      break;
    if (iter >= 200)
      throw std::logic_error("crop window escapes canvas after clamping");
    k = iter >= 100 ? 0.0 : k * 0.9;
  }

  const GrayFrame canvas = resize_bilinear(image, config.canvas, config.canvas);
  const int off = (config.canvas - config.crop) / 2;

  VideoClip clip;
  clip.fps = config.fps;
  clip.org_to_start = a;
  clip.start_to_end = b;
  clip.clamp_scale = k;
  clip.canvas = config.canvas;
  clip.crop = config.crop;
  clip.positions = hs;
  clip.frames.reserve(hs.size());
  for (const Homography& h : hs) {
    const Homography inv = invert(h);
    GrayFrame f(config.crop, config.crop);
    for (int v = 0; v < config.crop; ++v)
      for (int u = 0; u < config.crop; ++u) {
        const auto s = apply(inv, u + off, v + off);
        f.at(u, v) = std::clamp(bilinear(canvas, s[0], s[1]), 0.0, 255.0);
      }
    clip.frames.push_back(std::move(f));
  }
  return clip;
}

VideoClip synthesize_clip(const GrayFrame& image, std::uint64_t seed, const ClipConfig& config)
{
  const MotionParams a = sample_motion(derive_seed(seed, 1), MotionSet::OrgToStart, config);
  const MotionParams b = sample_motion(derive_seed(seed, 2), MotionSet::StartToEnd, config);
  return render_clip(image, a, b, config);
}

std::vector<Micros> frame_timestamps(std::size_t n_frames, double fps, Micros resolution_us)
{
  if (fps <= 0.0 || resolution_us == 0)
    throw std::invalid_argument("frame_timestamps needs fps > 0 and resolution > 0");
  std::vector<Micros> ts(n_frames);
  const double period_steps = 1e6 / fps / static_cast<double>(resolution_us);
  for (std::size_t i = 0; i < n_frames; ++i)
    ts[i] = static_cast<Micros>(std::llround(static_cast<double>(i) * period_steps)) * resolution_us;
  for (std::size_t i = 1; i < n_frames; ++i)
    if (ts[i] <= ts[i - 1])
      throw std::invalid_argument("timestamp resolution too coarse for frame rate");
  return ts;
}

void write_clip(const fs::path& dir, const VideoClip& clip, const ClipConfig& config)
{
  fs::create_directories(dir);
  nlohmann::json positions = nlohmann::json::array();
  for (std::size_t i = 0; i < clip.frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.pgm", i);
    write_pgm(dir / name, clip.frames[i]);
    positions.push_back({{"frame", i}, {"file", name}, {"homography", clip.positions[i]}});
  }
  write_text_atomic(dir / "positions.json", positions.dump(2) + "\n");
  nlohmann::json meta = {
    {"fps", clip.fps},
    {"n_frames", clip.frames.size()},
    {"canvas", clip.canvas},
    {"crop", clip.crop},
    {"clamp_scale", clip.clamp_scale},
    {"org_to_start", to_json(clip.org_to_start)},
    {"start_to_end", to_json(clip.start_to_end)},
    {"config", to_json(config)},
  };
  write_text_atomic(dir / "clip.json", meta.dump(2) + "\n");
}

VideoClip read_clip(const fs::path& dir)
{
  std::ifstream in(dir / "clip.json");
  if (!in)
    throw std::runtime_error("missing clip.json in " + dir.string());
  nlohmann::json meta;
  in >> meta;
  std::ifstream pin(dir / "positions.json");
  nlohmann::json positions = nlohmann::json::array();
  if (pin)
    pin >> positions;

  VideoClip clip;
  clip.fps = meta.at("fps").get<double>();
  clip.canvas = meta.value("canvas", 280);
  clip.crop = meta.value("crop", 224);
  clip.clamp_scale = meta.value("clamp_scale", 1.0);
  if (meta.contains("org_to_start"))
    clip.org_to_start = motion_from_json(meta["org_to_start"]);
  if (meta.contains("start_to_end"))
    clip.start_to_end = motion_from_json(meta["start_to_end"]);
  const auto n = meta.at("n_frames").get<std::size_t>();
  for (std::size_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.pgm", i);
    clip.frames.push_back(read_pnm(dir / name));
    if (i < positions.size())
      clip.positions.push_back(positions[i].at("homography").get<Homography>());
    else
      clip.positions.push_back(identity_homography());
  }
  return clip;
}

} // namespace evkit
