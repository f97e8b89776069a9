#include "fanet/backbone.hpp"

#include "fanet/container.hpp"

namespace fanet {
namespace {

std::size_t downsample(std::size_t extent, const std::vector<std::size_t>& strides) {
  for (std::size_t s : strides) extent = (extent + s - 1) / s;
  return extent;
}

}  // namespace

void BackboneConfig::validate() const {
  if (input_height == 0 || input_width == 0 || input_channels == 0) {
    throw ConfigError("backbone: input extents must be positive");
  }
  if (widths.size() != strides.size()) {
    throw ConfigError("backbone: " + std::to_string(widths.size()) +
                      " stage widths but " + std::to_string(strides.size()) +
                      " strides");
  }
  for (std::size_t s : strides) {
    if (s != 1 && s != 2) throw ConfigError("backbone: stride must be 1 or 2");
  }
  for (std::size_t w : widths) {
    if (w == 0) throw ConfigError("backbone: stage width must be positive");
  }
}

std::size_t BackboneConfig::output_channels() const {
  return widths.empty() ? input_channels : widths.back();
}

std::size_t BackboneConfig::output_height() const {
  return downsample(input_height, strides);
}

std::size_t BackboneConfig::output_width() const {
  return downsample(input_width, strides);
}

Tensor backbone_forward(const Tensor& images, const BackboneConfig& cfg,
                        const BackboneParams& params) {
  if (!images.defined() || images.rank() != 4 ||
      images.dim(1) != cfg.input_height || images.dim(2) != cfg.input_width ||
      images.dim(3) != cfg.input_channels) {
    throw ShapeError("backbone: input " +
                     (images.defined() ? to_string(images.shape()) : std::string("<undefined>")) +
                     " does not match configured N x " +
                     std::to_string(cfg.input_height) + " x " +
                     std::to_string(cfg.input_width) + " x " +
                     std::to_string(cfg.input_channels));
  }
  if (params.stages.size() != cfg.widths.size()) {
    throw ShapeError("backbone: parameter stage count does not match config");
  }
  Tensor x = images;
  for (const Conv2dParams& stage : params.stages) x = relu(conv2d(x, stage));
  return x;
}

void save_feature_file(const std::filesystem::path& path, const Tensor& features) {
  write_container(path, {ContainerEntry{"features", features.detach(), DType::kF64}});
}

Tensor load_feature_file(const std::filesystem::path& path) {
  auto entries = read_container(path);
  if (entries.size() != 1) {
    throw CorruptContainerError("feature file must hold exactly one tensor, found " +
                                std::to_string(entries.size()));
  }
  Tensor t = entries.front().tensor;
  if (t.rank() != 4) {
    throw ShapeError("feature file tensor must be rank 4 (N x H x W x C), got " +
                     to_string(t.shape()));
  }
  return t;
}

}  // namespace fanet
