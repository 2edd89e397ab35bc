#include "evkit/dataset_io.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "byte_io.hpp"
#include "evkit/io.hpp"
#include "evkit/rng.hpp"
#include "evkit/toy_model.hpp"

namespace evkit {

namespace fs = std::filesystem;

nlohmann::json to_json(const DatasetConfig& c)
{
  return {{"clip", to_json(c.clip)}, {"dvs", to_json(c.dvs)}, {"bins", c.bins}, {"target_dim", c.target_dim}};
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j, DatasetConfig c)
{
  if (j.contains("clip"))
    c.clip = clip_config_from_json(j.at("clip"), c.clip);
  if (j.contains("dvs"))
    c.dvs = dvs_config_from_json(j.at("dvs"), c.dvs);
  c.bins = j.value("bins", c.bins);
  c.target_dim = j.value("target_dim", c.target_dim);
  return c;
}

namespace {

constexpr char kShardMagic[4] = {'E', 'V', 'S', 'H'};

void section(ByteWriter& w, std::span<const double> v)
{
  w.u32(static_cast<std::uint32_t>(v.size_bytes()));
  w.f64s(v);
}

std::vector<double> read_f64_section(ByteReader& r)
{
  const std::uint32_t len = r.u32();
  if (len % sizeof(double) != 0)
    throw FormatError("shard section length is not a multiple of 8");
  std::vector<double> v(len / sizeof(double));
  r.bytes(v.data(), len);
  return v;
}

struct ShardView
{
  std::vector<std::uint8_t> bytes;
  std::vector<std::uint64_t> offsets;
};

ShardView open_shard(const fs::path& shard)
{
  ShardView s;
  s.bytes = read_file(shard);
  ByteReader r(s.bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kShardMagic, 4) != 0)
    throw FormatError("not a sample shard: " + shard.string());
  const std::uint32_t version = r.u32();
  if (version != kShardVersion)
    throw FormatError("unsupported shard version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  s.offsets.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    s.offsets.push_back(r.pos());
    const std::uint32_t len = r.u32();
    if (len > r.remaining())
      throw FormatError("truncated shard record " + std::to_string(i));
    r.seek(r.pos() + len);
  }
  if (r.remaining() != 0)
    throw FormatError("trailing bytes after the last shard record");
  return s;
}

std::span<const std::uint8_t> record_bytes(const ShardView& s, std::size_t i)
{
  const std::size_t off = s.offsets[i];
  std::uint32_t len;
  std::memcpy(&len, s.bytes.data() + off, 4);
  return std::span<const std::uint8_t>(s.bytes).subspan(off, 4 + static_cast<std::size_t>(len));
}

std::vector<std::uint8_t> encode_shard(const std::vector<SampleRecord>& records)
{
  ByteWriter w;
  w.bytes(kShardMagic, 4);
  w.u32(kShardVersion);
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const SampleRecord& r : records) {
    const auto b = encode_record(r);
    w.bytes(b.data(), b.size());
  }
  return w.take();
}

} // namespace

std::vector<std::uint8_t> encode_record(const SampleRecord& r)
{
  if (r.voxel.width != r.diff.width || r.voxel.height != r.diff.height)
    throw std::invalid_argument("record voxel and diff map dimensions differ");
  const nlohmann::json meta = {
    {"width", r.voxel.width},       {"height", r.voxel.height}, {"bins", r.voxel.bins},
    {"image_id", r.image_id},       {"segment", r.segment},     {"config_hash", r.config_hash},
    {"feature_dim", r.target_feature.size()},
  };
  const std::string meta_text = meta.dump();

  ByteWriter body;
  section(body, r.voxel.data);
  section(body, r.diff.data);
  section(body, r.target_feature);
  body.u32(static_cast<std::uint32_t>(meta_text.size()));
  body.bytes(meta_text.data(), meta_text.size());
  auto payload = body.take();

  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.bytes(payload.data(), payload.size());
  return w.take();
}

SampleRecord decode_record(std::span<const std::uint8_t> bytes)
{
  ByteReader r(bytes);
  const std::uint32_t len = r.u32();
  if (len != r.remaining())
    throw FormatError("record length does not match its payload");
  SampleRecord out;
  auto voxel = read_f64_section(r);
  auto diff = read_f64_section(r);
  out.target_feature = read_f64_section(r);
  const std::uint32_t meta_len = r.u32();
  std::string meta_text(meta_len, '\0');
  r.bytes(meta_text.data(), meta_len);
  if (r.remaining() != 0)
    throw FormatError("trailing bytes in record");

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_text);
    out.voxel.width = meta.at("width").get<int>();
    out.voxel.height = meta.at("height").get<int>();
    out.voxel.bins = meta.at("bins").get<int>();
    out.image_id = meta.at("image_id").get<std::string>();
    out.segment = meta.at("segment").get<int>();
    out.config_hash = meta.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("record metadata: ") + e.what());
  }
  const std::size_t cells = static_cast<std::size_t>(out.voxel.width) * out.voxel.height;
  if (out.voxel.width <= 0 || out.voxel.height <= 0 || out.voxel.bins <= 0 ||
      voxel.size() != cells * out.voxel.bins || diff.size() != cells)
    throw FormatError("record sections do not match the declared geometry");
  out.voxel.data = std::move(voxel);
  out.diff.width = out.voxel.width;
  out.diff.height = out.voxel.height;
  out.diff.data = std::move(diff);
  return out;
}

void write_shard(const fs::path& shard, const std::vector<SampleRecord>& records)
{
  write_file_atomic(shard, encode_shard(records));
}

void write_sample(const fs::path& shard, const SampleRecord& record)
{
  std::vector<SampleRecord> records;
  if (fs::exists(shard))
    records = read_shard(shard);
  records.push_back(record);
  write_shard(shard, records);
}

std::vector<std::uint64_t> shard_offsets(const fs::path& shard)
{
  return open_shard(shard).offsets;
}

SampleRecord read_sample(const fs::path& shard, std::size_t index)
{
  const ShardView s = open_shard(shard);
  if (index >= s.offsets.size())
    throw std::invalid_argument("record index " + std::to_string(index) + " out of range for " +
                                shard.string());
  return decode_record(record_bytes(s, index));
}

std::vector<SampleRecord> read_shard(const fs::path& shard)
{
  const ShardView s = open_shard(shard);
  std::vector<SampleRecord> out;
  out.reserve(s.offsets.size());
  for (std::size_t i = 0; i < s.offsets.size(); ++i)
    out.push_back(decode_record(record_bytes(s, i)));
  return out;
}

ImageBuild build_image_records(const GrayFrame& image, const std::string& image_id, const DatasetConfig& config,
                               std::uint64_t image_seed, std::uint64_t feature_seed,
                               const std::string& config_hash)
{
  const VideoClip clip = synthesize_clip(image, derive_seed(image_seed, name_tag("clip")), config.clip);
  return build_clip_records(clip, image, image_id, config, derive_seed(image_seed, name_tag("dvs")), feature_seed,
                            config_hash);
}

ImageBuild build_clip_records(const VideoClip& clip, const GrayFrame& image, const std::string& image_id,
                              const DatasetConfig& config, std::uint64_t dvs_seed, std::uint64_t feature_seed,
                              const std::string& config_hash)
{
  DvsConfig dvs = config.dvs;
  dvs.seed = dvs_seed;
  const EventStream events = simulate(clip, dvs);
  const auto ts = frame_timestamps(clip.frames.size(), clip.fps, dvs.resolution_us());
  const auto segments = segment_stream(events, ts);
  const auto feature = make_target_feature(image, feature_seed, config.target_dim);

  ImageBuild b;
  b.frames = clip.frames.size();
  b.segments = segments.size();
  // The first inter-frame segment carries the start-up transient and is dropped.
  for (std::size_t i = 1; i < segments.size(); ++i) {
    SampleRecord r;
    r.voxel = voxelize(segments[i], config.bins);
    r.diff = diff_map(clip.frames[i], clip.frames[i + 1]);
    r.target_feature = feature;
    r.image_id = image_id;
    r.segment = static_cast<int>(i);
    r.config_hash = config_hash;
    b.records.push_back(std::move(r));
  }
  return b;
}

std::vector<fs::path> list_images(const fs::path& image_dir)
{
  if (!fs::is_directory(image_dir))
    throw std::invalid_argument("image directory does not exist: " + image_dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(image_dir)) {
    if (!e.is_regular_file())
      continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm")
      out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

nlohmann::json build_dataset(const fs::path& image_dir, const fs::path& out_dir, const DatasetConfig& config,
                             std::uint64_t seed, const BuildOptions& options)
{
  const auto images = list_images(image_dir);
  fs::create_directories(out_dir);
  const nlohmann::json provenance = {{"config", to_json(config)}, {"seed", seed}};
  const std::string hash = config_hash(provenance);
  const std::uint64_t feature_seed = derive_seed(seed, name_tag("target_feature"));

  struct Outcome
  {
    bool ok = false;
    std::string shard;
    std::vector<std::uint64_t> offsets;
    std::vector<std::string> digests;
    std::vector<int> segments;
    std::string error;
  };
  std::vector<Outcome> outcomes(images.size());
  std::mutex log_mutex;
  auto log = [&](const std::string& msg) {
    if (!options.log)
      return;
    std::lock_guard lock(log_mutex);
    options.log(msg);
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < images.size(); i = next++) {
      Outcome& o = outcomes[i];
      const std::string id = images[i].stem().string();
      try {
        const GrayFrame image = read_pnm(images[i]);
        const ImageBuild b = build_image_records(image, id, config, derive_seed(seed, name_tag(id)),
                                                 feature_seed, hash);
        char name[32];
        std::snprintf(name, sizeof name, "shard_%05zu.evsh", i);
        o.shard = name;
        const auto bytes = encode_shard(b.records);
        write_file_atomic(out_dir / o.shard, bytes);
        const ShardView view{bytes, open_shard(out_dir / o.shard).offsets};
        for (std::size_t k = 0; k < b.records.size(); ++k) {
          o.offsets.push_back(view.offsets[k]);
          o.digests.push_back(sha256_hex(record_bytes(view, k)));
          o.segments.push_back(b.records[k].segment);
        }
        o.ok = true;
        log("built " + id + ": " + std::to_string(b.records.size()) + " records");
      } catch (const std::exception& e) {
        o.error = e.what();
        log("warning: skipping " + images[i].string() + ": " + e.what());
      }
    }
  };
  const unsigned n_workers = std::max(1u, std::min<unsigned>(options.workers, static_cast<unsigned>(images.size())));
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < n_workers; ++w)
    pool.emplace_back(worker);
  worker();
  for (auto& t : pool)
    t.join();

  nlohmann::json records = nlohmann::json::array();
  nlohmann::json skipped = nlohmann::json::array();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Outcome& o = outcomes[i];
    if (!o.ok) {
      skipped.push_back({{"image", images[i].filename().string()}, {"error", o.error}});
      continue;
    }
    for (std::size_t k = 0; k < o.offsets.size(); ++k)
      records.push_back({{"shard", o.shard},
                         {"offset", o.offsets[k]},
                         {"image_id", images[i].stem().string()},
                         {"segment", o.segments[k]},
                         {"sha256", o.digests[k]}});
  }
  if (records.empty())
    throw std::runtime_error("no sample records produced from " + image_dir.string());

  nlohmann::json manifest = {
    {"version", 1},
    {"config_hash", hash},
    {"config", provenance},
    {"records", records},
    {"skipped", skipped},
  };
  write_text_atomic(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

nlohmann::json read_manifest(const fs::path& dataset_dir)
{
  const auto bytes = read_file(dataset_dir / "manifest.json");
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
}

std::vector<SampleRecord> load_dataset(const fs::path& dataset_dir)
{
  const nlohmann::json manifest = read_manifest(dataset_dir);
  std::vector<SampleRecord> out;
  std::string current;
  ShardView view;
  for (const auto& entry : manifest.at("records")) {
    const std::string shard = entry.at("shard").get<std::string>();
    if (shard != current) {
      view = open_shard(dataset_dir / shard);
      current = shard;
    }
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto it = std::find(view.offsets.begin(), view.offsets.end(), offset);
    if (it == view.offsets.end())
      throw FormatError("manifest offset not found in " + shard);
    const auto bytes = record_bytes(view, static_cast<std::size_t>(it - view.offsets.begin()));
    if (sha256_hex(bytes) != entry.at("sha256").get<std::string>())
      throw FormatError("content hash mismatch in " + shard);
    out.push_back(decode_record(bytes));
  }
  return out;
}

} // namespace evkit
