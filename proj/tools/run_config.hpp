#pragma once

#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "fanet/model.hpp"
#include "fanet/train.hpp"

namespace fanet::cli {

/// Everything a training run needs, read from one `key = value` file.
struct RunConfig {
  std::filesystem::path data_root;
  std::optional<std::filesystem::path> val_root;  // otherwise split from data_root
  double val_fraction = 0.1;
  bool skip_undecodable = false;
  FaNetConfig model;  // num_classes and seed are set from the dataset and train.seed
  TrainConfig train;  // augment, output_dir and seed are set by train_config()
  bool augment_enabled = true;
  AugmentConfig augment;
  std::filesystem::path output_dir;

  /// Validates every value; the class count is checked once the dataset is
  /// indexed.
  void validate() const;
  FaNetConfig model_config(std::size_t num_classes) const;
  TrainConfig train_config() const;
};

/// Every accepted key, in documentation order.
const std::vector<std::string>& run_config_keys();

/// Parses `key = value` lines; `#` starts a comment. Unknown or repeated
/// keys and malformed values raise ConfigError naming `source` and the line.
/// Relative paths are resolved against `base_dir`.
RunConfig parse_run_config(std::istream& in, const std::string& source,
                           const std::filesystem::path& base_dir = {});

RunConfig load_run_config(const std::filesystem::path& file);

/// Canonical text form; parsing it back yields the same config.
std::string format_run_config(const RunConfig& cfg);

}  // namespace fanet::cli
