#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"
#include "lewm/array.hpp"

namespace lewm {

using Json = nlohmann::json;

/// Hex-encoded SHA-256.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
/// Writes atomically (temp file + rename); creates parent directories.
void write_text_file(const std::filesystem::path& path, std::string_view content);

Json array_to_json(const Array& a);
Array array_from_json(const Json& j);
Json param_store_to_json(const ParamStore& params);
ParamStore param_store_from_json(const Json& j);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace lewm
