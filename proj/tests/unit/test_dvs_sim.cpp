#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "evkit/dvs_sim.hpp"
#include "evkit/io.hpp"
#include "evkit/synthetic.hpp"

using namespace evkit;

namespace {

DvsConfig exact_config()
{
  DvsConfig c = default_config();
  c.noiseless = true;
  c.cutoff_hz = 0.0;
  return c;
}

// Intensity whose log (with the simulator's epsilon) exceeds `base` by dl.
double brighter(double base, double dl)
{
  return (base + kLogEpsilon) * std::exp(dl) - kLogEpsilon;
}

} // namespace

TEST_CASE("default configuration")
{
  const DvsConfig c = default_config();
  CHECK(c.pos_thres == 0.2);
  CHECK(c.neg_thres == 0.2);
  CHECK(c.sigma_thres == 0.05);
  CHECK(c.cutoff_hz == 15.0);
  CHECK(c.leak_rate_hz == 0.1);
  CHECK(c.shot_noise_rate_hz == 5.0);
  CHECK(c.timestamp_resolution == 0.003);
  CHECK(c.exposure_duration == 0.005);
  CHECK(c.resolution_us() == 3000);
  CHECK_FALSE(c.noiseless);
  CHECK_NOTHROW(c.validate());

  DvsConfig bad = c;
  bad.pos_thres = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.leak_rate_hz = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  const DvsConfig back = dvs_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(dvs_config_from_json({{"pos_thres", 0.3}}).pos_thres == 0.3);
}

TEST_CASE("constant clip under the noiseless model emits nothing")
{
  const std::vector<GrayFrame> frames(6, GrayFrame(8, 8, 120.0));
  const auto ts = frame_timestamps(6, 30.0, 3000);
  for (double cutoff : {0.0, 15.0}) {
    DvsConfig c = exact_config();
    c.cutoff_hz = cutoff;
    CHECK(simulate_frames(frames, ts, c).empty());
  }
}

TEST_CASE("ramp of one log unit crosses a 0.2 threshold five times")
{
  std::vector<GrayFrame> frames{GrayFrame(3, 2, 50.0), GrayFrame(3, 2, brighter(50.0, 1.0))};
  const std::vector<Micros> ts{0, 30000};
  const EventStream s = simulate_frames(frames, ts, exact_config());
  CHECK(s.size() == 5 * 6);
  for (const Event& e : s.events)
    CHECK(e.polarity == 1);

  std::swap(frames[0], frames[1]);
  const EventStream d = simulate_frames(frames, ts, exact_config());
  CHECK(d.size() == 30);
  for (const Event& e : d.events)
    CHECK(e.polarity == -1);
}

TEST_CASE("stream geometry and timing")
{
  const auto frames = random_frames(12, 9, 4, 3);
  const auto ts = frame_timestamps(4, 30.0, 3000);
  DvsConfig cfg = default_config();
  cfg.seed = 17;
  const EventStream s = simulate_frames(frames, ts, cfg);
  CHECK(s.width == 12);
  CHECK(s.height == 9);
  CHECK(s.t_start == 0);
  CHECK(s.t_end == ts.back());
  CHECK_NOTHROW(s.validate());
  for (const Event& e : s.events)
    CHECK(e.t % 3000 == 0);
}

TEST_CASE("accumulated polarity tracks the log-intensity change within one threshold")
{
  const DvsConfig cfg = exact_config();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto frames = random_frames(10, 10, 5, seed);
    const auto ts = frame_timestamps(5, 30.0, 3000);
    const EventStream s = simulate_frames(frames, ts, cfg);
    std::vector<long> sum(100, 0);
    for (const Event& e : s.events)
      sum[e.y * 10 + e.x] += e.polarity;
    for (int i = 0; i < 100; ++i) {
      const double dl =
        std::log(frames.back().data[i] + kLogEpsilon) - std::log(frames.front().data[i] + kLogEpsilon);
      CHECK(std::abs(cfg.pos_thres * sum[i] - dl) <= cfg.pos_thres);
    }
  }
}

TEST_CASE("determinism and seed sensitivity")
{
  const auto frames = random_frames(16, 16, 3, 1);
  const auto ts = frame_timestamps(3, 30.0, 3000);
  DvsConfig cfg = default_config();
  cfg.seed = 8;
  const EventStream a = simulate_frames(frames, ts, cfg);
  const EventStream b = simulate_frames(frames, ts, cfg);
  CHECK(encode_evt(a) == encode_evt(b));

  const auto dir = std::filesystem::temp_directory_path() / "evkit_test_dvs";
  std::filesystem::create_directories(dir);
  write_evt(dir / "a.evt", a);
  write_evt(dir / "b.evt", b);
  CHECK(read_file(dir / "a.evt") == read_file(dir / "b.evt"));
  std::filesystem::remove_all(dir);

  cfg.seed = 9;
  CHECK_FALSE(simulate_frames(frames, ts, cfg) == a);
}

TEST_CASE("noise sources add events to a constant clip")
{
  const std::vector<GrayFrame> frames(12, GrayFrame(32, 32, 100.0));
  const auto ts = frame_timestamps(12, 30.0, 3000);
  DvsConfig cfg = default_config();
  cfg.seed = 1;
  const EventStream s = simulate_frames(frames, ts, cfg);
  // Shot noise at ~5 Hz over 1024 pixels and 0.366 s: on the order of 1900.
  CHECK(s.size() > 1000);
  CHECK(s.size() < 4000);
}

TEST_CASE("invalid inputs")
{
  const std::vector<GrayFrame> one{GrayFrame(4, 4)};
  const std::vector<Micros> t1{0};
  CHECK_THROWS_AS(simulate_frames(one, t1, exact_config()), std::invalid_argument);
  const std::vector<GrayFrame> two{GrayFrame(4, 4), GrayFrame(4, 5)};
  const std::vector<Micros> t2{0, 3000};
  CHECK_THROWS_AS(simulate_frames(two, t2, exact_config()), std::invalid_argument);
  const std::vector<GrayFrame> ok{GrayFrame(4, 4), GrayFrame(4, 4)};
  const std::vector<Micros> off_grid{0, 3001};
  CHECK_THROWS_AS(simulate_frames(ok, off_grid, exact_config()), std::invalid_argument);
}
