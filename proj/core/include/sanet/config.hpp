#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace sanet {

using KeyValues = std::map<std::string, std::string>;

/// Parses "key=value" lines. Blank lines and lines starting with '#' are
/// skipped; surrounding whitespace is trimmed. Throws on a line without '='.
KeyValues parse_key_values(std::string_view text);
/// One "key=value" line per entry, in key order.
std::string format_key_values(const KeyValues& kv);

KeyValues read_config_file(const std::filesystem::path& path);

/// Hex SHA-1 of "blob <size>\0<content>", i.e. what `git hash-object` prints.
std::string git_blob_hash(std::string_view content);

}  // namespace sanet
