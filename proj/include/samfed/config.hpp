#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "samfed/federation.hpp"

namespace samfed {

// Flat "key = value" text, one setting per line. Blank lines and lines
// starting with '#' are ignored; lists are comma separated. Unknown keys,
// duplicates and malformed values raise ConfigError. The result is
// validated before it is returned.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::filesystem::path& path);

// Applies one setting to `cfg` without validating the whole config.
void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value);

// Canonical text form; parse_config(format_config(c)) reproduces c.
std::string format_config(const ExperimentConfig& cfg);

}  // namespace samfed
