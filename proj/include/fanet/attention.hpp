#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "fanet/nn_ops.hpp"
#include "fanet/tensor.hpp"

namespace fanet {

/// Squeeze-excitation channel attention over GAP and GMP descriptors.
/// When `max_path` is empty the GAP and GMP paths share d1/d2.
struct CamParams {
  DenseParams d1;  // C -> C/r, ReLU
  DenseParams d2;  // C/r -> C
  std::size_t reduction = 16;
  struct Path {
    DenseParams d1;
    DenseParams d2;
  };
  std::optional<Path> max_path;
};

/// 7x7 single-channel convolution producing a spatial attention logit.
struct SamParams {
  Conv2dParams conv;
};

enum class GateForm {
  /// 1 / (1 + exp(A * exp(-Q (alpha - mu)))), codomain (0, 1/2) for A,Q > 0.
  kRichards,
  /// 1 / (1 + A * exp(-Q (alpha - mu))), full (0, 1) sigmoid.
  kLogistic,
};

struct FcsParams {
  Tensor alpha;  // one learnable mask weight per input channel
  Tensor scale;  // A
  Tensor steepness;  // Q
  Tensor location;  // mu
  double retention = 0.8;  // k
  GateForm form = GateForm::kRichards;
};

/// Two consecutive separable convolutions (kernel 1 then kernel 3).
struct ScBlockParams {
  SeparableConv2dParams first;
  SeparableConv2dParams second;
};

enum class Wiring {
  /// F_enc is recalibrated by CAM, then feeds both SC -> SAM branches.
  kChannelThenSpatial,
  /// SC -> SAM branches run on F_enc; each output is scaled by CAM weights.
  kParallel,
};

struct FcssamParams {
  CamParams cam;
  ScBlockParams sc_avg;
  ScBlockParams sc_max;
  SamParams sam_avg;
  SamParams sam_max;
  FcsParams fcs;
  Wiring wiring = Wiring::kChannelThenSpatial;
  Activation sc_activation = Activation::kRelu;
};

/// m = max(1, round(k * channels)).
std::size_t retained_count(double retention, std::size_t channels);

/// N x H x W x C -> N x C weights in (0,1).
Tensor channel_attention(const Tensor& f, const CamParams& p);

struct SpatialAttentionResult {
  Tensor attended;  // f * map, N x H x W x C
  Tensor map;       // N x H x W x 1, in (0,1)
};

SpatialAttentionResult spatial_attention_with_map(const Tensor& f,
                                                  const SamParams& p,
                                                  PoolMode mode);
Tensor spatial_attention(const Tensor& f, const SamParams& p, PoolMode mode);

/// Elementwise gate over `alpha`; A, Q, mu are single-element tensors.
/// Differentiable in all four inputs.
Tensor richards_gate(const Tensor& alpha, const Tensor& scale,
                     const Tensor& steepness, const Tensor& location,
                     GateForm form = GateForm::kRichards);

/// Indices of the `m` largest gates, ties to the lower index, returned in
/// ascending channel order.
std::vector<std::size_t> top_channels(std::span<const double> gates,
                                      std::size_t m);

struct FcsResult {
  Tensor output;  // N x H x W x m
  Tensor gates;   // M
  std::vector<std::size_t> selected;
};

FcsResult fuzzy_channel_select(const Tensor& f, const FcsParams& p);

struct FcssamDiagnostics {
  Tensor cam_weights;  // N x C
  Tensor sam_avg_map;  // N x H x W x 1
  Tensor sam_max_map;
  Tensor gates;  // 2C
  std::vector<std::size_t> selected;
};

struct FcssamResult {
  Tensor output;
  FcssamDiagnostics diagnostics;
};

FcssamResult fcssam_forward(const Tensor& f_enc, const FcssamParams& p);

}  // namespace fanet
