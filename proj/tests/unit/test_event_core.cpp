#include <doctest.h>

#include <numeric>

#include "evkit/dvs_sim.hpp"
#include "evkit/event_core.hpp"
#include "evkit/motion_synth.hpp"
#include "oracles.hpp"

using namespace evkit;

namespace {

EventStream ramp_stream(std::size_t n)
{
  EventStream s;
  s.width = s.height = 4;
  s.t_start = 0;
  s.t_end = n;
  for (std::size_t i = 0; i < n; ++i)
    s.events.push_back({i, static_cast<std::uint16_t>(i % 4), 0, 1});
  return s;
}

} // namespace

TEST_CASE("stream validation")
{
  EventStream s = ramp_stream(3);
  CHECK_NOTHROW(s.validate());
  s.events[1].polarity = 0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = ramp_stream(3);
  std::swap(s.events[0], s.events[2]);
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = ramp_stream(3);
  s.events[2].x = 4;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = ramp_stream(3);
  s.t_end = 1;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("segment_stream")
{
  SUBCASE("empty stream gives empty segments")
  {
    EventStream s;
    s.width = s.height = 2;
    const std::vector<Micros> b{0, 5, 10, 20};
    const auto segs = segment_stream(s, b);
    REQUIRE(segs.size() == 3);
    for (const auto& seg : segs)
      CHECK(seg.empty());
  }
  SUBCASE("ten events split five and five")
  {
    EventStream s = ramp_stream(10);
    s.t_end = 10;
    const std::vector<Micros> b{0, 5, 10};
    const auto segs = segment_stream(s, b);
    REQUIRE(segs.size() == 2);
    CHECK(segs[0].size() == 5);
    CHECK(segs[1].size() == 5);
    CHECK(segs[0].t_start == 0);
    CHECK(segs[1].t_end == 10);
  }
  SUBCASE("unsorted boundaries are rejected")
  {
    const EventStream s = ramp_stream(10);
    const std::vector<Micros> b{0, 6, 5};
    CHECK_THROWS_AS(segment_stream(s, b), std::invalid_argument);
    const std::vector<Micros> dup{0, 5, 5};
    CHECK_THROWS_AS(segment_stream(s, dup), std::invalid_argument);
  }
  SUBCASE("simulated 12-frame clip: 11 segments matching a brute-force count")
  {
    const GrayFrame img = [] {
      GrayFrame f(96, 96);
      for (int y = 0; y < 96; ++y)
        for (int x = 0; x < 96; ++x)
          f.at(x, y) = 128 + 100 * std::sin(x / 5.0) * std::cos(y / 7.0);
      return f;
    }();
    ClipConfig cc;
    cc.canvas = 80;
    cc.crop = 64;
    const VideoClip clip = synthesize_clip(img, 3, cc);
    DvsConfig dvs = default_config();
    dvs.seed = 4;
    const EventStream s = simulate(clip, dvs);
    const auto ts = frame_timestamps(clip.frames.size(), clip.fps, dvs.resolution_us());
    REQUIRE(ts.size() == 12);
    const auto segs = segment_stream(s, ts);
    REQUIRE(segs.size() == 11);
    const auto expected = oracle::interval_counts(s, ts);
    std::size_t total = 0;
    for (std::size_t i = 0; i < segs.size(); ++i) {
      CHECK(segs[i].size() == expected[i]);
      total += segs[i].size();
    }
    CHECK(total == s.size());
  }
  SUBCASE("partition: concatenated segments reproduce the input")
  {
    const EventStream s = oracle::random_stream(8, 8, 100, 1100, 2000, 9);
    const std::vector<Micros> b{100, 130, 500, 501, 990, 1100};
    const auto segs = segment_stream(s, b);
    std::vector<Event> joined;
    for (const auto& seg : segs)
      joined.insert(joined.end(), seg.events.begin(), seg.events.end());
    CHECK(joined == s.events);
  }
}

TEST_CASE("voxelize")
{
  SUBCASE("empty segment gives a zero voxel")
  {
    EventStream s;
    s.width = 3;
    s.height = 2;
    const EventVoxel v = voxelize(s, 5);
    CHECK(v.data.size() == 30);
    CHECK(std::all_of(v.data.begin(), v.data.end(), [](double x) { return x == 0.0; }));
  }
  SUBCASE("single event midway lands in bin 1 of 2")
  {
    EventStream s;
    s.width = s.height = 2;
    s.t_start = 0;
    s.t_end = 100;
    s.events.push_back({50, 1, 0, 1});
    const EventVoxel v = voxelize(s, 2);
    CHECK(v.at(1, 0, 1) == 1.0);
    CHECK(std::accumulate(v.data.begin(), v.data.end(), 0.0) == 1.0);
  }
  SUBCASE("t_end clamps into the final bin")
  {
    EventStream s;
    s.width = s.height = 1;
    s.t_end = 10;
    s.events.push_back({10, 0, 0, -1});
    CHECK(voxelize(s, 4).at(0, 0, 3) == -1.0);
  }
  SUBCASE("bins = 0 is rejected")
  {
    CHECK_THROWS_AS(voxelize(ramp_stream(2), 0), std::invalid_argument);
  }
  SUBCASE("1000 random events match a brute-force tally and conserve polarity")
  {
    for (std::uint64_t seed : {1, 2, 3}) {
      const EventStream s = oracle::random_stream(7, 5, 1000, 4321, 1000, seed);
      for (int bins : {1, 2, 5, 7}) {
        const EventVoxel v = voxelize(s, bins);
        const auto tally = oracle::tally_voxel(s, bins);
        for (int y = 0; y < 5; ++y)
          for (int x = 0; x < 7; ++x)
            for (int k = 0; k < bins; ++k) {
              const auto it = tally.find({x, y, k});
              CHECK(v.at(x, y, k) == (it == tally.end() ? 0.0 : static_cast<double>(it->second)));
            }
        long pol = 0;
        for (const Event& e : s.events)
          pol += e.polarity;
        CHECK(std::accumulate(v.data.begin(), v.data.end(), 0.0) == static_cast<double>(pol));
      }
    }
  }
}

TEST_CASE("diff_map")
{
  GrayFrame a(3, 2, 0.0), b(3, 2, 255.0);
  SUBCASE("identical frames give zero")
  {
    const DiffMap d = diff_map(a, a);
    CHECK(std::all_of(d.data.begin(), d.data.end(), [](double x) { return x == 0.0; }));
  }
  SUBCASE("black to white gives 255")
  {
    const DiffMap d = diff_map(a, b);
    CHECK(std::all_of(d.data.begin(), d.data.end(), [](double x) { return x == 255.0; }));
  }
  SUBCASE("translated pattern matches per-pixel subtraction and is antisymmetric")
  {
    GrayFrame p(16, 12), q(16, 12);
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 16; ++x) {
        p.at(x, y) = ((x / 2 + y / 2) % 2) * 200.0 + 20.0;
        q.at(x, y) = (((x + 1) / 2 + y / 2) % 2) * 200.0 + 20.0;
      }
    const DiffMap d = diff_map(p, q), r = diff_map(q, p);
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 16; ++x) {
        CHECK(d.at(x, y) == q.at(x, y) - p.at(x, y));
        CHECK(r.at(x, y) == -d.at(x, y));
      }
  }
  SUBCASE("dimension mismatch")
  {
    CHECK_THROWS_AS(diff_map(a, GrayFrame(2, 3)), std::invalid_argument);
  }
}

TEST_CASE("polarity_image")
{
  EventVoxel v(2, 2, 3);
  SUBCASE("zero voxel")
  {
    const DiffMap d = polarity_image(v);
    CHECK(std::all_of(d.data.begin(), d.data.end(), [](double x) { return x == 0.0; }));
  }
  SUBCASE("opposite events in different bins cancel")
  {
    v.at(1, 1, 0) = 1;
    v.at(1, 1, 2) = -1;
    CHECK(polarity_image(v).at(1, 1) == 0.0);
  }
  SUBCASE("random voxel equals the sum over bins")
  {
    std::mt19937_64 rng(3);
    EventVoxel r(5, 4, 6);
    for (double& x : r.data)
      x = static_cast<double>(static_cast<int>(rng() % 9) - 4);
    const DiffMap d = polarity_image(r);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 5; ++x) {
        double s = 0;
        for (int k = 0; k < 6; ++k)
          s += r.at(x, y, k);
        CHECK(d.at(x, y) == s);
      }
  }
}

TEST_CASE("take_fixed_events")
{
  const EventStream s = ramp_stream(100);
  CHECK(take_fixed_events(s, 0).empty());
  const EventStream p = take_fixed_events(s, 30);
  REQUIRE(p.size() == 30);
  for (std::size_t i = 0; i < 30; ++i)
    CHECK(p.events[i] == s.events[i]);
  CHECK(take_fixed_events(s, 500) == s);

  const EventStream big = oracle::random_stream(32, 32, 0, 1000000, 30000, 5);
  const EventStream half = take_fixed_events(big, 15000, 1);
  CHECK(half.size() == 15000);
  CHECK(half.events.back().t <= big.events.back().t);
  CHECK(std::equal(half.events.begin(), half.events.end(), big.events.begin()));
}

TEST_CASE("make_variant")
{
  const EventStream s = oracle::random_stream(20, 20, 0, 50000, 1000, 7);
  SUBCASE("noise with zero fraction is the identity")
  {
    CHECK(make_variant(s, VariantKind::Noise, 0.0, 1) == s);
  }
  SUBCASE("sparse keeps four fifths")
  {
    CHECK(make_variant(s, VariantKind::Sparse, 0.0, 1).size() == 800);
    for (std::size_t n : {1u, 4u, 5u, 6u, 999u}) {
      EventStream t = s;
      t.events.resize(n);
      CHECK(make_variant(t, VariantKind::Sparse, 0.0, 2).size() == (4 * n + 4) / 5);
    }
    // Survivors are a time-ordered subsequence of the input.
    const EventStream v = make_variant(s, VariantKind::Sparse, 0.0, 3);
    std::size_t j = 0;
    for (std::size_t i = 0; i < s.size() && j < v.size(); ++i)
      if (s.events[i] == v.events[j])
        ++j;
    CHECK(j == v.size());
  }
  SUBCASE("noise modification count and replay")
  {
    const EventStream big = oracle::random_stream(64, 48, 0, 200000, 10000, 8);
    const auto r = make_variant_logged(big, VariantKind::Noise, 0.01, 42);
    CHECK(r.log.size() == 100);
    CHECK(r.stream.size() >= 9900);
    CHECK(r.stream.size() <= 10100);
    CHECK(oracle::replay(big, r.log) == oracle::as_multiset(r.stream));
    CHECK_NOTHROW(r.stream.validate());
    for (const auto& m : r.log)
      if (m.op == Modification::Op::Insert) {
        CHECK(m.event.t <= big.t_end);
        CHECK(m.event.x < 64);
        CHECK(m.event.y < 48);
      }
  }
  SUBCASE("sparse_noise applies both in order")
  {
    const auto r = make_variant_logged(s, VariantKind::SparseNoise, 0.01, 5);
    CHECK(r.sparse_dropped == 200);
    CHECK(r.log.size() == 8); // round(0.01 * 800)
    CHECK(oracle::replay(make_variant(s, VariantKind::Sparse, 0.0, 5), r.log) == oracle::as_multiset(r.stream));
  }
  SUBCASE("out-of-range fraction")
  {
    CHECK_THROWS_AS(make_variant(s, VariantKind::Noise, 0.02, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_variant(s, VariantKind::Noise, -0.001, 1), std::invalid_argument);
  }
  SUBCASE("seeded determinism")
  {
    CHECK(make_variant(s, VariantKind::SparseNoise, 0.005, 11) == make_variant(s, VariantKind::SparseNoise, 0.005, 11));
    CHECK_FALSE(make_variant(s, VariantKind::Sparse, 0.0, 11) == make_variant(s, VariantKind::Sparse, 0.0, 12));
  }
  SUBCASE("kind names round-trip")
  {
    for (VariantKind k : {VariantKind::Sparse, VariantKind::Noise, VariantKind::SparseNoise})
      CHECK(parse_variant_kind(to_string(k)) == k);
    CHECK_THROWS_AS(parse_variant_kind("blur"), std::invalid_argument);
  }
}
