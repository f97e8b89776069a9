#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fanet/attention.hpp"
#include "fanet/backbone.hpp"
#include "fanet/nn_ops.hpp"
#include "fanet/tensor.hpp"

namespace fanet {

struct FcssamConfig {
  std::size_t reduction = 16;
  double retention = 0.8;
  Wiring wiring = Wiring::kChannelThenSpatial;
  GateForm gate_form = GateForm::kRichards;
  bool share_cam_dense = true;
  bool share_sc = false;
  Activation sc_activation = Activation::kRelu;
  std::size_t sam_kernel = 7;
};

struct FaNetConfig {
  BackboneConfig backbone;
  FcssamConfig fcssam;
  std::size_t num_classes = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

struct Prediction {
  std::vector<std::size_t> labels;
  Tensor probabilities;  // N x K
};

/// Attention state for a single image, ready for export.
struct AttentionDiagnostics {
  std::vector<double> cam_weights;  // C
  Tensor sam_avg_map;  // H x W, min-max normalized (constant maps -> 0)
  Tensor sam_max_map;
  Tensor sam_avg_raw;  // H x W, sigmoid outputs
  Tensor sam_max_raw;
  std::vector<double> alpha;        // 2C
  std::vector<double> gate_values;  // 2C
  std::vector<std::size_t> selected_indices;  // ascending, length m
  std::size_t predicted_label = 0;
  std::vector<double> probabilities;
};

/// Intermediate values of one forward pass.
struct ForwardTrace {
  Tensor features;  // backbone output F_enc
  FcssamResult fcssam;
  Tensor gap;  // N x m
  Tensor logits;  // N x K
};

/// Backbone -> FCSSAM -> GAP -> dense classifier.
class FaNet {
 public:
  explicit FaNet(FaNetConfig config);

  const FaNetConfig& config() const { return config_; }
  std::size_t feature_channels() const { return config_.backbone.output_channels(); }
  /// Width of the GAP feature and classifier input.
  std::size_t retained_channels() const;

  /// Pre-softmax logits, N x K.
  Tensor forward(const Tensor& images) const;
  ForwardTrace trace(const Tensor& images) const;
  /// Argmax of softmax(logits); ties go to the lowest class index.
  Prediction predict(const Tensor& images) const;
  Tensor extract_gap_features(const Tensor& images) const;
  /// Accepts H x W x C or 1 x H x W x C.
  AttentionDiagnostics extract_attention_diagnostics(const Tensor& image) const;

  /// Registry in a stable order; names are unique.
  const std::vector<NamedParameter>& parameters() const { return registry_; }
  std::vector<Tensor> parameter_tensors() const;
  Tensor parameter(const std::string& name) const;

  const BackboneParams& backbone() const { return backbone_; }
  const FcssamParams& fcssam() const { return fcssam_; }
  const DenseParams& head() const { return head_; }

 private:
  FaNetConfig config_;
  BackboneParams backbone_;
  FcssamParams fcssam_;
  DenseParams head_;
  std::vector<NamedParameter> registry_;
};

/// Min-max normalization to [0,1]; constant input maps to all zeros.
Tensor normalize_min_max(const Tensor& t);

}  // namespace fanet
