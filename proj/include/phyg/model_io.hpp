#pragma once

#include <cstdint>
#include <string>

#include "phyg/model.hpp"

namespace phyg {

// Model file format (all integers little-endian):
//   magic "PHYG"
//   format version          u16
//   descriptor length       u32
//   descriptor              UTF-8: canonical ArchitectureSpec text, optionally
//                           followed by " | name=<n> seed=<s> provenance=<p>"
//   parameter count         u64
//   parameters              float32 x count
//   CRC32 of all preceding bytes, u32
void save_model(const ModelHandle& model, const std::string& path);
ModelHandle load_model(const std::string& path);

// CRC32 (reflected polynomial 0xEDB88320), used by the model format and for
// content hashes in reports.
std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed = 0);
std::uint32_t crc32_file(const std::string& path);

}  // namespace phyg
