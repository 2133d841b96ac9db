#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "live/model.hpp"

namespace live {

inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'L', 'I', 'V', 'E', 'C', 'K', 'P', 'T'};

enum class DType : uint8_t { F32 = 0, F64 = 1 };

template <typename Scalar>
constexpr DType dtype_of() {
  return sizeof(Scalar) == 4 ? DType::F32 : DType::F64;
}

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct CheckpointInfo {
  uint32_t version = 0;
  ModelConfig config;
  DType dtype = DType::F32;
  nlohmann::json metadata;
};

/// Little-endian layout:
///   magic[8] | u32 version | u32 n | header JSON (n bytes)
///   u32 tensor count | per tensor: u16 name length, name, u8 dtype, u8 ndim,
///   u64 dims[ndim], u64 byte offset into payload
///   u64 payload size | payload
template <typename Scalar>
void save_checkpoint(const ModelParams<Scalar>& params, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object());

/// Header only; cheap.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// Loads parameters, converting precision when the file's dtype differs.
/// Throws VersionError on a version mismatch and FormatError on corrupt or
/// inconsistent files.
template <typename Scalar>
ModelParams<Scalar> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

}  // namespace live
