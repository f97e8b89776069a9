#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>

namespace fanet::cli {

/// Two-class PGM fixture: `root/bright/` holds noise in [0.6, 0.9] and
/// `root/dark/` noise in [0.1, 0.4]. Deterministic in `seed`.
void write_synthetic_dataset(const std::filesystem::path& root, std::size_t per_class,
                             std::size_t size, std::uint64_t seed);

}  // namespace fanet::cli
