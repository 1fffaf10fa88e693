#pragma once

// Binary model checkpoint (all integers little-endian):
//
//   magic        8 bytes   "CA3CKPT\0"
//   version      u32       1
//   meta_len     u64
//   meta         meta_len bytes of UTF-8 JSON: target and alarm configs,
//                tap list, optional CSV schema and normalization record,
//                free-form "info" object
//   n_tensors    u32
//   per tensor:  name_len u32, name bytes, rank u32, dims u64[rank],
//                values f32[prod(dims)]
//   checksum     u64       FNV-1a over every preceding byte
//
// Tensors appear in ModelBundle::parameters() order. Saving the same bundle
// twice yields identical bytes.

#include <optional>
#include <string>

#include "ca3/data.hpp"
#include "ca3/networks.hpp"
#include "ca3/serialization.hpp"

namespace ca3 {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointExtras {
  std::optional<CsvSchema> schema;
  std::optional<NormalizationRecord> normalization;
  Json info = Json::object();
};

struct LoadedCheckpoint {
  ModelBundle bundle;
  CheckpointExtras extras;
};

std::string serialize_checkpoint(const ModelBundle& bundle, const CheckpointExtras& extras = {});
LoadedCheckpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

void save_checkpoint(const std::string& path, const ModelBundle& bundle, const CheckpointExtras& extras = {});
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace ca3
