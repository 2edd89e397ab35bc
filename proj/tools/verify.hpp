#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace evkit::cli {

struct CheckRow
{
  std::string suite;
  std::string check;
  double value = 0.0;
  double limit = 0.0;
  bool pass = false;
  std::string note;
};

struct VerifyOptions
{
  std::uint64_t seed = 0;
  std::size_t instances = 0; // 0: suite default
  std::filesystem::path scratch; // temp directory owned by the caller
};

std::vector<CheckRow> verify_physics(const VerifyOptions& o);
std::vector<CheckRow> verify_gradients(const VerifyOptions& o);
std::vector<CheckRow> verify_masking(const VerifyOptions& o);
std::vector<CheckRow> verify_freeze(const VerifyOptions& o);

void print_table(std::ostream& os, const std::vector<CheckRow>& rows);

} // namespace evkit::cli
