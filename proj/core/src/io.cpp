#include "evkit/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "byte_io.hpp"

namespace evkit {

namespace fs = std::filesystem;

std::vector<std::uint8_t> encode_evt(const EventStream& stream)
{
  if (stream.width <= 0 || stream.width > 0xffff || stream.height <= 0 || stream.height > 0xffff)
    throw std::invalid_argument("EVT0 geometry must fit in u16");
  ByteWriter w;
  w.bytes("EVT0", 4);
  w.u16(static_cast<std::uint16_t>(stream.width));
  w.u16(static_cast<std::uint16_t>(stream.height));
  const auto count = static_cast<std::uint64_t>(stream.events.size());
  w.u32(static_cast<std::uint32_t>(count >> 32));
  w.u32(static_cast<std::uint32_t>(count & 0xffffffffULL));
  w.reserve(stream.events.size() * kEvtRecordSize);
  for (const Event& e : stream.events) {
    w.u64(e.t);
    w.u16(e.x);
    w.u16(e.y);
    w.u8(static_cast<std::uint8_t>(e.polarity));
    w.u8(0);
  }
  return w.take();
}

EventStream decode_evt(std::span<const std::uint8_t> bytes)
{
  ByteReader r(bytes);
  if (bytes.size() < kEvtHeaderSize)
    throw FormatError("EVT0: truncated header");
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "EVT0", 4) != 0)
    throw FormatError("EVT0: bad magic");
  EventStream s;
  s.width = r.u16();
  s.height = r.u16();
  const std::uint64_t hi = r.u32();
  const std::uint64_t lo = r.u32();
  const std::uint64_t count = (hi << 32) | lo;
  if (count > (bytes.size() - kEvtHeaderSize) / kEvtRecordSize ||
      bytes.size() != kEvtHeaderSize + count * kEvtRecordSize)
    throw FormatError("EVT0: record block does not match event count");
  s.events.resize(count);
  for (Event& e : s.events) {
    e.t = r.u64();
    e.x = r.u16();
    e.y = r.u16();
    e.polarity = static_cast<std::int8_t>(r.u8());
    r.u8();
    if (e.polarity != 1 && e.polarity != -1)
      throw FormatError("EVT0: invalid polarity byte");
  }
  if (!s.events.empty()) {
    s.t_start = s.events.front().t;
    s.t_end = s.events.back().t;
  }
  return s;
}

fs::path evt_sidecar_path(const fs::path& evt)
{
  fs::path p = evt;
  p.replace_extension(".meta.json");
  return p;
}

void write_evt(const fs::path& path, const EventStream& stream, const nlohmann::json& provenance)
{
  write_file_atomic(path, encode_evt(stream));
  nlohmann::json meta = provenance.is_object() ? provenance : nlohmann::json::object();
  meta["t_start"] = stream.t_start;
  meta["t_end"] = stream.t_end;
  meta["width"] = stream.width;
  meta["height"] = stream.height;
  meta["count"] = stream.events.size();
  if (!meta.contains("config_hash"))
    meta["config_hash"] = "";
  write_text_atomic(evt_sidecar_path(path), meta.dump(2) + "\n");
}

EventStream read_evt(const fs::path& path)
{
  const auto bytes = read_file(path);
  EventStream s = decode_evt(bytes);
  const fs::path side = evt_sidecar_path(path);
  if (fs::exists(side)) {
    std::ifstream in(side);
    nlohmann::json meta;
    try {
      in >> meta;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("EVT0 sidecar: " + std::string(e.what()));
    }
    s.t_start = meta.value("t_start", s.t_start);
    s.t_end = meta.value("t_end", s.t_end);
  }
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("EVT0: ") + e.what());
  }
  return s;
}

void write_pgm(const fs::path& path, const GrayFrame& frame)
{
  std::string header = "P5\n" + std::to_string(frame.width) + " " +
                       std::to_string(frame.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + frame.data.size());
  for (double v : frame.data)
    bytes.push_back(static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)));
  write_file_atomic(path, bytes);
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string pnm_token(std::span<const std::uint8_t> b, std::size_t& pos)
{
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n')
        ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < b.size() && !std::isspace(b[pos]) && b[pos] != '#')
    tok.push_back(static_cast<char>(b[pos++]));
  if (tok.empty())
    throw FormatError("PNM: truncated header");
  return tok;
}

} // namespace

GrayFrame read_pnm(const fs::path& path)
{
  const auto b = read_file(path);
  std::size_t pos = 0;
  const std::string magic = pnm_token(b, pos);
  if (magic != "P5" && magic != "P6")
    throw FormatError("PNM: unsupported magic " + magic);
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(pnm_token(b, pos));
    h = std::stoi(pnm_token(b, pos));
    maxval = std::stoi(pnm_token(b, pos));
  } catch (const std::logic_error&) {
    throw FormatError("PNM: malformed header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw FormatError("PNM: unsupported geometry or maxval");
  ++pos; // single whitespace after maxval
  const std::size_t channels = magic == "P6" ? 3 : 1;
  const std::size_t need = static_cast<std::size_t>(w) * h * channels;
  if (b.size() < pos + need)
    throw FormatError("PNM: truncated pixel data");
  GrayFrame f(w, h);
  const double scale = 255.0 / maxval;
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    const std::uint8_t* px = &b[pos + i * channels];
    double v = channels == 3 ? 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2] : px[0];
    f.data[i] = std::clamp(v * scale, 0.0, 255.0);
  }
  return f;
}

std::vector<std::uint8_t> read_file(const fs::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes)
{
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
      throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_text_atomic(const fs::path& path, const std::string& text)
{
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string sha256_hex(std::span<const std::uint8_t> bytes)
{
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i)
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

std::string sha256_hex(const std::string& text)
{
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string config_hash(const nlohmann::json& config)
{
  return sha256_hex(config.dump()).substr(0, 16);
}

} // namespace evkit
