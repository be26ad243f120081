#include "lewm/io.hpp"

#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "lewm/errors.hpp"

namespace lewm {

namespace fs = std::filesystem;

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &length, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 computation failed");
  }
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < length; ++i) os << std::setw(2) << static_cast<int>(digest[i]);
  return os.str();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text_file(path)); }

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const fs::path& path, std::string_view content) {
  std::error_code ec;
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "'");
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move into place '" + path.string() + "'");
}

Json array_to_json(const Array& a) { return Json{{"shape", a.shape()}, {"values", a.raw()}}; }

Array array_from_json(const Json& j) {
  try {
    return Array(j.at("shape").get<Shape>(), j.at("values").get<std::vector<double>>());
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed array record: ") + e.what());
  }
}

Json param_store_to_json(const ParamStore& params) {
  Json out = Json::object();
  for (const auto& [name, entry] : params.entries()) {
    Json item = array_to_json(entry.value);
    item["trainable"] = entry.trainable;
    out[name] = std::move(item);
  }
  return out;
}

ParamStore param_store_from_json(const Json& j) {
  ParamStore params;
  for (const auto& [name, item] : j.items()) {
    params.add(name, array_from_json(item), item.value("trainable", true));
  }
  return params;
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

}  // namespace lewm
