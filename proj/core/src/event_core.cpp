#include "evkit/event_core.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>

#include "evkit/rng.hpp"

namespace evkit {

namespace {
__extension__ using Wide = unsigned __int128;
}

void EventStream::validate() const
{
  if (width <= 0 || height <= 0)
    throw std::invalid_argument("event stream geometry must be positive");
  if (t_start > t_end)
    throw std::invalid_argument("event stream window has t_start > t_end");
  Micros prev = t_start;
  for (const Event& e : events) {
    if (e.t < prev)
      throw std::invalid_argument("events not sorted by timestamp");
    if (e.t > t_end)
      throw std::invalid_argument("event timestamp after t_end");
    if (e.x >= width || e.y >= height)
      throw std::invalid_argument("event outside sensor geometry");
    if (e.polarity != 1 && e.polarity != -1)
      throw std::invalid_argument("event polarity must be +1 or -1");
    prev = e.t;
  }
}

EventVoxel::EventVoxel(int w, int h, int b)
  : width(w), height(h), bins(b),
    data(static_cast<std::size_t>(w) * h * b, 0.0)
{}

Plane::Plane(int w, int h, double fill)
  : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill)
{}

void GrayFrame::validate() const
{
  if (width <= 0 || height <= 0 || data.size() != static_cast<std::size_t>(width) * height)
    throw std::invalid_argument("gray frame has inconsistent geometry");
  for (double v : data)
    if (!(v >= 0.0 && v <= 255.0))
      throw std::invalid_argument("gray frame intensity outside [0, 255]");
}

std::vector<EventStream> segment_stream(const EventStream& stream,
                                        std::span<const Micros> boundaries)
{
  if (boundaries.size() < 2)
    throw std::invalid_argument("segment_stream needs at least two boundaries");
  for (std::size_t i = 1; i < boundaries.size(); ++i)
    if (boundaries[i] <= boundaries[i - 1])
      throw std::invalid_argument("segment boundaries must be strictly increasing");

  const std::size_t n = boundaries.size() - 1;
  std::vector<EventStream> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].width = stream.width;
    out[i].height = stream.height;
    out[i].t_start = boundaries[i];
    out[i].t_end = boundaries[i + 1];
  }

  // Events are sorted, so a single forward sweep assigns each one.
  auto it = std::lower_bound(stream.events.begin(), stream.events.end(), boundaries.front(),
                             [](const Event& e, Micros t) { return e.t < t; });
  std::size_t seg = 0;
  for (; it != stream.events.end(); ++it) {
    while (seg + 1 < n && it->t >= boundaries[seg + 1])
      ++seg;
    if (it->t > boundaries.back())
      break;
    if (seg + 1 == n || it->t < boundaries[seg + 1])
      out[seg].events.push_back(*it);
  }
  return out;
}

EventVoxel voxelize(const EventStream& segment, int bins)
{
  if (bins < 1)
    throw std::invalid_argument("voxelize requires bins >= 1");
  if (segment.width <= 0 || segment.height <= 0)
    throw std::invalid_argument("voxelize requires positive geometry");
  EventVoxel voxel(segment.width, segment.height, bins);
  if (segment.events.empty())
    return voxel;
  if (segment.t_end <= segment.t_start)
    throw std::invalid_argument("voxelize requires a positive segment duration");

  const Micros duration = segment.t_end - segment.t_start;
  for (const Event& e : segment.events) {
    if (e.t < segment.t_start || e.t > segment.t_end)
      throw std::invalid_argument("event outside segment window");
    if (e.x >= segment.width || e.y >= segment.height)
      throw std::invalid_argument("event outside segment geometry");
    // Integer arithmetic keeps bin assignment exact.
    const auto offset = static_cast<Wide>(e.t - segment.t_start);
    auto k = static_cast<std::uint64_t>(offset * static_cast<unsigned>(bins) / duration);
    if (k >= static_cast<std::uint64_t>(bins))
      k = bins - 1;
    voxel.at(e.x, e.y, static_cast<int>(k)) += e.polarity;
  }
  return voxel;
}

DiffMap diff_map(const GrayFrame& prev, const GrayFrame& next)
{
  if (prev.width != next.width || prev.height != next.height)
    throw std::invalid_argument("diff_map frame dimensions differ");
  DiffMap out(prev.width, prev.height);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = next.data[i] - prev.data[i];
  return out;
}

DiffMap polarity_image(const EventVoxel& voxel)
{
  DiffMap out(voxel.width, voxel.height);
  for (int y = 0; y < voxel.height; ++y)
    for (int x = 0; x < voxel.width; ++x) {
      double s = 0.0;
      for (int k = 0; k < voxel.bins; ++k)
        s += voxel.at(x, y, k);
      out.at(x, y) = s;
    }
  return out;
}

EventStream take_fixed_events(const EventStream& stream, std::size_t n, std::uint64_t /*seed*/)
{
  if (stream.events.size() <= n)
    return stream;
  EventStream out = stream;
  out.events.resize(n);
  return out;
}

const char* to_string(VariantKind kind)
{
  switch (kind) {
  case VariantKind::Sparse: return "sparse";
  case VariantKind::Noise: return "noise";
  case VariantKind::SparseNoise: return "sparse_noise";
  }
  return "?";
}

VariantKind parse_variant_kind(const char* name)
{
  const std::string s = name;
  if (s == "sparse") return VariantKind::Sparse;
  if (s == "noise") return VariantKind::Noise;
  if (s == "sparse_noise") return VariantKind::SparseNoise;
  throw std::invalid_argument("unknown variant kind: " + s);
}

namespace {

std::vector<Event> drop_to_four_fifths(const std::vector<Event>& events, Rng& rng,
                                       std::size_t& dropped)
{
  const std::size_t n = events.size();
  const std::size_t keep = (4 * n + 4) / 5; // ceil(4n / 5)
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates: the first n - keep entries are the dropped ones.
  const std::size_t drop = n - keep;
  for (std::size_t i = 0; i < drop; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::vector<char> gone(n, 0);
  for (std::size_t i = 0; i < drop; ++i)
    gone[idx[i]] = 1;
  std::vector<Event> out;
  out.reserve(keep);
  for (std::size_t i = 0; i < n; ++i)
    if (!gone[i])
      out.push_back(events[i]);
  dropped = drop;
  return out;
}

void apply_noise(EventStream& stream, double noise_frac, Rng& rng, std::vector<Modification>& log)
{
  const auto m = static_cast<std::size_t>(std::llround(noise_frac * static_cast<double>(stream.events.size())));
  if (m == 0)
    return;

  std::vector<Event> pool = std::move(stream.events);
  std::vector<std::size_t> alive(pool.size());
  std::iota(alive.begin(), alive.end(), 0);
  std::uniform_int_distribution<int> xs(0, stream.width - 1);
  std::uniform_int_distribution<int> ys(0, stream.height - 1);
  std::uniform_int_distribution<Micros> ts(stream.t_start, stream.t_end);
  std::bernoulli_distribution coin(0.5);

  log.reserve(log.size() + m);
  for (std::size_t i = 0; i < m; ++i) {
    const bool erase = coin(rng);
    if (erase && !alive.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, alive.size() - 1);
      const std::size_t slot = pick(rng);
      log.push_back({Modification::Op::Erase, pool[alive[slot]]});
      alive[slot] = alive.back();
      alive.pop_back();
    } else {
      Event e;
      e.t = ts(rng);
      e.x = static_cast<std::uint16_t>(xs(rng));
      e.y = static_cast<std::uint16_t>(ys(rng));
      e.polarity = coin(rng) ? 1 : -1;
      log.push_back({Modification::Op::Insert, e});
      alive.push_back(pool.size());
      pool.push_back(e);
    }
  }

  // Pool order is original order followed by insertions; sort survivors by
  // (t, pool index) so the result is independent of the swap-remove order.
  std::sort(alive.begin(), alive.end(), [&](std::size_t a, std::size_t b) {
    return pool[a].t != pool[b].t ? pool[a].t < pool[b].t : a < b;
  });
  stream.events.clear();
  stream.events.reserve(alive.size());
  for (std::size_t i : alive)
    stream.events.push_back(pool[i]);
}

} // namespace

VariantResult make_variant_logged(const EventStream& stream, VariantKind kind,
                                  double noise_frac, std::uint64_t seed)
{
  if (!(noise_frac >= 0.0 && noise_frac <= 0.01))
    throw std::invalid_argument("noise_frac must lie in [0, 0.01]");

  VariantResult result;
  result.stream = stream;
  Rng rng(derive_seed(seed, name_tag("variant")));
  if (kind == VariantKind::Sparse || kind == VariantKind::SparseNoise)
    result.stream.events = drop_to_four_fifths(stream.events, rng, result.sparse_dropped);
  if (kind == VariantKind::Noise || kind == VariantKind::SparseNoise)
    apply_noise(result.stream, noise_frac, rng, result.log);
  return result;
}

EventStream make_variant(const EventStream& stream, VariantKind kind,
                         double noise_frac, std::uint64_t seed)
{
  return make_variant_logged(stream, kind, noise_frac, seed).stream;
}

} // namespace evkit
