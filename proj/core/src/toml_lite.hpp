#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace evkit {

/*
 * Small TOML reader for schedule files: comments, bare or quoted keys,
 * [table] and [[array.of.tables]] headers (dotted), strings, integers,
 * floats, booleans and single-line arrays of those. Anything else is
 * rejected with std::invalid_argument naming the line.
 */
nlohmann::json parse_toml_subset(const std::string& text);

} // namespace evkit
