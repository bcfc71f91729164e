#pragma once

#include <string>

#include <nlohmann/json_fwd.hpp>

#include "ctld/params.hpp"

namespace ctld {

// Container layout: 8-byte magic "CTLDCKPT", little-endian u64 header
// length, UTF-8 JSON header, then raw little-endian float32 data. The
// header maps each tensor name to shape, byte offset and trainable flag;
// tensors are laid out in name order so save(load(f)) is byte-exact.
inline constexpr char kCheckpointMagic[9] = "CTLDCKPT";
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ParamStore<float>& params,
                     const nlohmann::json& meta);

/// Fills `params` (name order) and returns the header's meta object.
nlohmann::json load_checkpoint(const std::string& path, ParamStore<float>& params);

}  // namespace ctld
