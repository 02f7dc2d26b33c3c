#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "falcon/bench.h"

namespace falcon {

// Thrown for malformed or invalid run configuration; the message names the
// offending key and, for file input, the line.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigValue {
  std::string value;
  std::string origin;  // "file:line" or "--set"
};

using ConfigEntries = std::map<std::string, ConfigValue>;

// Line-based `section.key = value` text. '#' starts a comment. Duplicate keys
// and lines without '=' are errors.
ConfigEntries parse_config_text(std::string_view text, const std::string& source);

// Adds or replaces one entry from a "key=value" override.
void apply_override(ConfigEntries& entries, std::string_view assignment);

// env.name is required; every other key falls back to its default. Unknown
// keys and bad values throw ConfigError.
RunConfig build_config(const ConfigEntries& entries);

RunConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::string>& overrides = {});

// Keys accepted by build_config.
std::vector<std::string> known_config_keys();

}  // namespace falcon
