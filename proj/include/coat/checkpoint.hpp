#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "coat/param_set.hpp"

namespace coat {

/// On-disk layout (all integers and doubles little-endian):
///   "COATCKPT" | u32 version | u32 count |
///   count x { u32 name_len | name | u32 rank | i64 extents[rank] | f64 data[] } |
///   u64 meta_len | meta (JSON text)
struct Checkpoint {
    ParamSet params;
    nlohmann::json meta = nlohmann::json::object();
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameters whose names start with `prefix`, with the prefix stripped.
ParamSet extract_prefixed(const ParamSet& all, const std::string& prefix);
void insert_prefixed(ParamSet& all, const ParamSet& part, const std::string& prefix);

}  // namespace coat
