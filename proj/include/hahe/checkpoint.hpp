#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   bytes 0..7    magic "HAHECKPT"
//   u32           format version (1)
//   u64           manifest length in bytes
//   manifest      UTF-8 JSON object:
//                   version, config {key: value strings},
//                   entities [labels], relations [labels],
//                   hyperedges [[node ids]], data_dir, format,
//                   params [{name, shape, offset, count}]
//   payload       float32 values; param p occupies `count` floats starting
//                 `offset` floats after the end of the manifest
//
// The manifest is written with sorted keys and no timestamps, so equal
// models give byte-identical files.

#include <filesystem>
#include <string>

#include "hahe/hkg.hpp"
#include "hahe/model.hpp"

namespace hahe {

inline constexpr char kCheckpointMagic[8] = {'H', 'A', 'H', 'E', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  std::string data_dir;
  DataFormat format = DataFormat::kTsv;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const CheckpointInfo& info);
Model load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

std::string to_string(DataFormat format);

}  // namespace hahe
