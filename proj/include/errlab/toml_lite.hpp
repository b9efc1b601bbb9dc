#pragma once

#include <filesystem>
#include <string_view>

#include "errlab/types.hpp"

namespace errlab {

/// Reads the TOML subset used by endpoint and judge config files into JSON:
/// `[table]`, `[[array-of-tables]]`, `key = value` with basic/literal
/// strings, integers, floats, booleans and single-line arrays of those.
/// Anything else is a ConfigError carrying the line number.
json parse_toml_lite(std::string_view text);
json load_toml_lite(const std::filesystem::path& path);

}  // namespace errlab
