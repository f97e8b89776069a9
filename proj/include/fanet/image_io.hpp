#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "fanet/tensor.hpp"

namespace fanet {

/// Decoded image with interleaved samples scaled to [0,1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;  // 1 or 3
  std::vector<double> pixels;
};

/// True for .png, .jpg, .jpeg, .pgm (case-insensitive).
bool is_supported_image(const std::filesystem::path& path);

/// Decodes PNG, baseline JPEG, or PGM (P2/P5). Throws DataError.
Image decode_image(const std::filesystem::path& path);

/// Writes an 8-bit binary PGM from an H x W tensor with values in [0,1].
void write_pgm(const std::filesystem::path& path, const Tensor& gray);

/// Writes an 8-bit binary PGM from raw bytes.
void write_pgm(const std::filesystem::path& path, std::size_t height,
               std::size_t width, const std::vector<std::uint8_t>& bytes);

}  // namespace fanet
