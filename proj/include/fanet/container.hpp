#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fanet/tensor.hpp"

namespace fanet {

enum class DType : std::uint8_t { kF32 = 1, kF64 = 2 };

inline constexpr std::uint32_t kContainerVersion = 1;

/// One named tensor in a FANT container. f32 entries are converted on write
/// (round-to-nearest) and widened on read; the conversion is lossy.
struct ContainerEntry {
  std::string name;
  Tensor tensor;
  DType dtype = DType::kF64;
};

// Layout, little-endian throughout:
//   "FANT" | u32 version | u32 entry count |
//   per entry: u32 name length | name bytes (UTF-8) | u8 dtype tag |
//              u32 rank | u64 extents[rank] | row-major payload |
//   u32 CRC-32 of every byte between the version field and the CRC.
std::vector<std::uint8_t> encode_container(const std::vector<ContainerEntry>& entries);
std::vector<ContainerEntry> decode_container(const std::vector<std::uint8_t>& bytes);

void write_container(const std::filesystem::path& path,
                     const std::vector<ContainerEntry>& entries);
std::vector<ContainerEntry> read_container(const std::filesystem::path& path);

}  // namespace fanet
