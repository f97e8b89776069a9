#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "fanet/nn_ops.hpp"
#include "fanet/tensor.hpp"

namespace fanet {

/// Small strided CNN standing in for a pretrained feature extractor.
/// With no stages the input passes through unchanged, which is how
/// externally computed feature maps are fed to the attention block.
struct BackboneConfig {
  std::size_t input_height = 64;
  std::size_t input_width = 64;
  std::size_t input_channels = 3;
  std::vector<std::size_t> widths = {16, 32, 64};
  std::vector<std::size_t> strides = {2, 2, 2};

  /// Throws ConfigError on inconsistent fields.
  void validate() const;
  std::size_t output_channels() const;
  std::size_t output_height() const;
  std::size_t output_width() const;
};

/// One 3x3 conv + ReLU per stage.
struct BackboneParams {
  std::vector<Conv2dParams> stages;
};

Tensor backbone_forward(const Tensor& images, const BackboneConfig& cfg,
                        const BackboneParams& params);

/// Feature maps are stored as a single-entry FANT container.
void save_feature_file(const std::filesystem::path& path, const Tensor& features);
/// Returns an N x H x W x C constant tensor (no gradient).
Tensor load_feature_file(const std::filesystem::path& path);

}  // namespace fanet
