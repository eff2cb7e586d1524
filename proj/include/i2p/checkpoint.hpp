#pragma once

#include "i2p/common.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <vector>

namespace i2p {

/// Checkpoint files are a single JSON header line followed by the parameter
/// blocks as flat little-endian float64 arrays, row-major, in block order.
/// The header always carries "schema" and a "blocks" array of
/// {"name", "rows", "cols"} describing the payload.
void write_checkpoint(const std::filesystem::path& path, nlohmann::json header,
                      const std::vector<ParamBlock>& blocks);

/// Reads just the header, validating the schema tag.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path, const std::string& schema);

/// Fills `blocks` (already shaped by the caller from the header) from the payload.
/// Block names and shapes must match the header exactly.
void read_checkpoint_blocks(const std::filesystem::path& path, std::vector<ParamBlock>& blocks);

} // namespace i2p
