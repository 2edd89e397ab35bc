#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evkit/event_core.hpp"

namespace evkit {

/// Raised for malformed or truncated files.
class FormatError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/*
 * EVT0 layout (little-endian):
 *   0  char[4] "EVT0"
 *   4  u16 width
 *   6  u16 height
 *   8  u32 reserved: high word of the event count, zero below 2^32 events
 *  12  u32 event count (low word)
 *  16  records of 14 bytes: u64 t_us, u16 x, u16 y, i8 polarity, u8 pad
 *
 * The stream window and provenance live in the <stem>.meta.json sidecar.
 */
inline constexpr std::size_t kEvtHeaderSize = 16;
inline constexpr std::size_t kEvtRecordSize = 14;

std::vector<std::uint8_t> encode_evt(const EventStream& stream);
EventStream decode_evt(std::span<const std::uint8_t> bytes);

std::filesystem::path evt_sidecar_path(const std::filesystem::path& evt);

/// Writes the EVT0 file plus its sidecar. `provenance` is merged into the
/// sidecar (typically the generator config and its hash).
void write_evt(const std::filesystem::path& path, const EventStream& stream,
               const nlohmann::json& provenance = nlohmann::json::object());

/// Reads the EVT0 file; the sidecar, when present, supplies t_start/t_end,
/// otherwise the window spans the first and last event.
EventStream read_evt(const std::filesystem::path& path);

/// Binary PGM (P5, maxval 255). Values are rounded and clamped on write.
void write_pgm(const std::filesystem::path& path, const GrayFrame& frame);

/// Reads P5 (gray) or P6 (RGB, converted with BT.601 luma weights).
GrayFrame read_pnm(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Writes to a temporary sibling and renames into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& text);

/// Short stable hash of a JSON value's canonical dump.
std::string config_hash(const nlohmann::json& config);

} // namespace evkit
