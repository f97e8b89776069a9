#pragma once

#include <cstddef>
#include <span>

#include "fanet/tensor.hpp"

namespace fanet {

enum class Padding { kSame, kValid };
enum class PoolMode { kAvg, kMax };
enum class Activation { kNone, kRelu, kSigmoid };

/// kernel: kh x kw x Cin x Cout, bias: Cout.
struct Conv2dParams {
  Tensor kernel;
  Tensor bias;
  std::size_t stride = 1;
  Padding padding = Padding::kSame;
};

/// Depthwise (multiplier 1) then pointwise 1x1. A single bias follows the
/// pointwise stage.
///   depthwise: kh x kw x Cin, pointwise: 1 x 1 x Cin x Cout, bias: Cout.
struct SeparableConv2dParams {
  Tensor depthwise;
  Tensor pointwise;
  Tensor bias;
};

/// weight: in x out, bias: out.
struct DenseParams {
  Tensor weight;
  Tensor bias;
};

/// Same padding pads (total = max((out-1)*stride + k - in, 0)) with the
/// smaller half before; at stride 1 with odd k the extents are preserved.
Tensor conv2d(const Tensor& x, const Conv2dParams& p);

/// Per-channel kh x kw convolution, same padding, stride 1, no bias.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel);

Tensor separable_conv2d(const Tensor& x, const SeparableConv2dParams& p);

/// N x H x W x C -> N x C. Max routes gradient to the first argmax.
Tensor global_pool(const Tensor& x, PoolMode mode);

/// N x H x W x C -> N x H x W x 1. Max routes gradient to the lowest channel
/// among ties.
Tensor channelwise_pool(const Tensor& x, PoolMode mode);

Tensor dense(const Tensor& x, const DenseParams& p,
             Activation activation = Activation::kNone);

Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Gathers channels (last axis) in the order given. Gradient of dropped
/// channels is zero.
Tensor select_channels(const Tensor& x, std::span<const std::size_t> channels);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor activate(const Tensor& x, Activation activation);

/// Softmax over the last axis of an N x K tensor (max-subtracted).
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

/// Numerically stable logistic function.
double stable_sigmoid(double z);

}  // namespace fanet
