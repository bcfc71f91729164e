#include "ctld/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctld/error.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace ctld {

void save_checkpoint(const std::string& path, const ParamStore<float>& params,
                     const nlohmann::json& meta) {
  std::vector<std::string> names = params.names();
  std::sort(names.begin(), names.end());

  nlohmann::json tensors = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& name : names) {
    const auto& e = params.at(name);
    tensors[name] = {{"shape", e.value.shape()},
                     {"offset", offset},
                     {"trainable", e.trainable}};
    offset += static_cast<std::uint64_t>(e.value.size()) * sizeof(float);
  }
  nlohmann::json header = {{"format_version", kCheckpointVersion},
                           {"meta", meta},
                           {"tensors", tensors}};
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, 8);
  const std::uint64_t hlen = header_str.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& name : names) {
    const auto& e = params.at(name);
    out.write(reinterpret_cast<const char*>(e.value.data()),
              static_cast<std::streamsize>(e.value.size() * sizeof(float)));
  }
  if (!out) throw DataError("failed writing checkpoint: " + path);
}

nlohmann::json load_checkpoint(const std::string& path, ParamStore<float>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("bad checkpoint magic: " + path);
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in) throw DataError("truncated checkpoint header: " + path);
  std::string header_str(hlen, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw DataError("truncated checkpoint header: " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint header: " + std::string(e.what()));
  }
  if (header.value("format_version", -1) != kCheckpointVersion)
    throw DataError("unsupported checkpoint format version");

  const std::streampos blob_start = in.tellg();
  for (const auto& [name, desc] : header.at("tensors").items()) {
    const std::vector<int> shape = desc.at("shape").get<std::vector<int>>();
    Tensor<float> t(shape);
    in.seekg(blob_start + static_cast<std::streamoff>(desc.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!in) throw DataError("truncated checkpoint data: " + path);
    params.add(name, std::move(t), desc.at("trainable").get<bool>());
  }
  return header.value("meta", nlohmann::json::object());
}

}  // namespace ctld
