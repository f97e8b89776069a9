#include "fanet/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "fanet/random.hpp"

namespace fanet {
namespace {

class Initializer {
 public:
  Initializer(std::uint64_t seed, std::vector<NamedParameter>& registry)
      : rng_(derive_seed(seed, {0x1417})), registry_(registry) {}

  Tensor glorot(const std::string& name, Shape shape, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<double> v(numel(shape));
    for (double& x : v) x = rng_.uniform(-limit, limit);
    return add(name, std::move(shape), std::move(v));
  }
  Tensor uniform(const std::string& name, Shape shape, double lo, double hi) {
    std::vector<double> v(numel(shape));
    for (double& x : v) x = rng_.uniform(lo, hi);
    return add(name, std::move(shape), std::move(v));
  }
  Tensor constant(const std::string& name, Shape shape, double value) {
    std::vector<double> v(numel(shape), value);
    return add(name, std::move(shape), std::move(v));
  }

  Conv2dParams conv(const std::string& prefix, std::size_t k, std::size_t cin,
                    std::size_t cout, std::size_t stride) {
    const double area = static_cast<double>(k * k);
    Conv2dParams p;
    p.kernel = glorot(prefix + ".kernel", {k, k, cin, cout}, area * cin, area * cout);
    p.bias = constant(prefix + ".bias", {cout}, 0.0);
    p.stride = stride;
    p.padding = Padding::kSame;
    return p;
  }
  DenseParams dense(const std::string& prefix, std::size_t in, std::size_t out) {
    return {glorot(prefix + ".weight", {in, out}, static_cast<double>(in),
                   static_cast<double>(out)),
            constant(prefix + ".bias", {out}, 0.0)};
  }
  SeparableConv2dParams separable(const std::string& prefix, std::size_t k,
                                  std::size_t cin, std::size_t cout) {
    const double area = static_cast<double>(k * k);
    SeparableConv2dParams p;
    p.depthwise = glorot(prefix + ".depthwise", {k, k, cin}, area, area);
    p.pointwise = glorot(prefix + ".pointwise", {1, 1, cin, cout},
                         static_cast<double>(cin), static_cast<double>(cout));
    p.bias = constant(prefix + ".bias", {cout}, 0.0);
    return p;
  }

 private:
  Tensor add(const std::string& name, Shape shape, std::vector<double> v) {
    Tensor t = Tensor::parameter(std::move(shape), std::move(v));
    registry_.push_back({name, t});
    return t;
  }

  Rng rng_;
  std::vector<NamedParameter>& registry_;
};

}  // namespace

void FaNetConfig::validate() const {
  backbone.validate();
  const std::size_t c = backbone.output_channels();
  if (fcssam.reduction == 0 || c % fcssam.reduction != 0) {
    throw ConfigError("feature channels C=" + std::to_string(c) +
                      " must be divisible by reduction ratio r=" +
                      std::to_string(fcssam.reduction));
  }
  if (!(fcssam.retention > 0.0 && fcssam.retention <= 1.0)) {
    throw ConfigError("retention fraction k must lie in (0, 1]");
  }
  if (fcssam.sam_kernel % 2 == 0) {
    throw ConfigError("spatial attention kernel size must be odd");
  }
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
}

FaNet::FaNet(FaNetConfig config) : config_(std::move(config)) {
  config_.validate();
  Initializer init(config_.seed, registry_);
  const BackboneConfig& bc = config_.backbone;
  std::size_t cin = bc.input_channels;
  for (std::size_t i = 0; i < bc.widths.size(); ++i) {
    backbone_.stages.push_back(init.conv("backbone.stage" + std::to_string(i), 3,
                                         cin, bc.widths[i], bc.strides[i]));
    cin = bc.widths[i];
  }

  const FcssamConfig& fc = config_.fcssam;
  const std::size_t c = bc.output_channels();
  const std::size_t hidden = c / fc.reduction;
  fcssam_.cam.reduction = fc.reduction;
  fcssam_.cam.d1 = init.dense("fcssam.cam.d1", c, hidden);
  fcssam_.cam.d2 = init.dense("fcssam.cam.d2", hidden, c);
  if (!fc.share_cam_dense) {
    CamParams::Path path;
    path.d1 = init.dense("fcssam.cam.max.d1", c, hidden);
    path.d2 = init.dense("fcssam.cam.max.d2", hidden, c);
    fcssam_.cam.max_path = path;
  }
  auto sc_block = [&](const std::string& prefix) {
    return ScBlockParams{init.separable(prefix + ".k1", 1, c, c),
                         init.separable(prefix + ".k3", 3, c, c)};
  };
  fcssam_.sc_avg = sc_block(fc.share_sc ? "fcssam.sc" : "fcssam.sc_avg");
  fcssam_.sc_max = fc.share_sc ? fcssam_.sc_avg : sc_block("fcssam.sc_max");
  fcssam_.sam_avg.conv = init.conv("fcssam.sam_avg", fc.sam_kernel, 1, 1, 1);
  fcssam_.sam_max.conv = init.conv("fcssam.sam_max", fc.sam_kernel, 1, 1, 1);
  fcssam_.fcs.alpha = init.uniform("fcssam.fcs.alpha", {2 * c}, 0.4, 0.6);
  fcssam_.fcs.scale = init.constant("fcssam.fcs.A", {1}, 1.0);
  fcssam_.fcs.steepness = init.constant("fcssam.fcs.Q", {1}, 1.0);
  fcssam_.fcs.location = init.constant("fcssam.fcs.mu", {1}, 0.5);
  fcssam_.fcs.retention = fc.retention;
  fcssam_.fcs.form = fc.gate_form;
  fcssam_.wiring = fc.wiring;
  fcssam_.sc_activation = fc.sc_activation;

  head_ = init.dense("head", retained_channels(), config_.num_classes);

  std::set<std::string> names;
  for (const auto& p : registry_) {
    if (!names.insert(p.name).second) throw Error("duplicate parameter name " + p.name);
  }
}

std::size_t FaNet::retained_channels() const {
  return retained_count(config_.fcssam.retention, 2 * feature_channels());
}

ForwardTrace FaNet::trace(const Tensor& images) const {
  ForwardTrace t;
  t.features = backbone_forward(images, config_.backbone, backbone_);
  t.fcssam = fcssam_forward(t.features, fcssam_);
  t.gap = global_pool(t.fcssam.output, PoolMode::kAvg);
  t.logits = dense(t.gap, head_);
  return t;
}

Tensor FaNet::forward(const Tensor& images) const { return trace(images).logits; }

Prediction FaNet::predict(const Tensor& images) const {
  Prediction p;
  p.probabilities = softmax(forward(images).detach());
  const std::size_t n = p.probabilities.dim(0), k = p.probabilities.dim(1);
  auto v = p.probabilities.values();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = &v[r * k];
    p.labels.push_back(static_cast<std::size_t>(std::max_element(row, row + k) - row));
  }
  return p;
}

Tensor FaNet::extract_gap_features(const Tensor& images) const {
  return trace(images).gap;
}

AttentionDiagnostics FaNet::extract_attention_diagnostics(const Tensor& image) const {
  Tensor batch = image;
  if (image.rank() == 3) {
    batch = reshape(image, {1, image.dim(0), image.dim(1), image.dim(2)});
  }
  if (batch.rank() != 4 || batch.dim(0) != 1) {
    throw ShapeError("extract_attention_diagnostics expects a single image, got " +
                     to_string(image.shape()));
  }
  const ForwardTrace t = trace(batch);
  const FcssamDiagnostics& d = t.fcssam.diagnostics;
  AttentionDiagnostics out;
  out.cam_weights.assign(d.cam_weights.values().begin(), d.cam_weights.values().end());
  const Shape hw{d.sam_avg_map.dim(1), d.sam_avg_map.dim(2)};
  out.sam_avg_raw = Tensor(hw, {d.sam_avg_map.values().begin(), d.sam_avg_map.values().end()});
  out.sam_max_raw = Tensor(hw, {d.sam_max_map.values().begin(), d.sam_max_map.values().end()});
  out.sam_avg_map = normalize_min_max(out.sam_avg_raw);
  out.sam_max_map = normalize_min_max(out.sam_max_raw);
  out.alpha.assign(fcssam_.fcs.alpha.values().begin(), fcssam_.fcs.alpha.values().end());
  out.gate_values.assign(d.gates.values().begin(), d.gates.values().end());
  out.selected_indices = d.selected;
  Tensor probs = softmax(t.logits.detach());
  out.probabilities.assign(probs.values().begin(), probs.values().end());
  out.predicted_label = static_cast<std::size_t>(
      std::max_element(out.probabilities.begin(), out.probabilities.end()) -
      out.probabilities.begin());
  return out;
}

std::vector<Tensor> FaNet::parameter_tensors() const {
  std::vector<Tensor> out;
  out.reserve(registry_.size());
  for (const auto& p : registry_) out.push_back(p.tensor);
  return out;
}

Tensor FaNet::parameter(const std::string& name) const {
  for (const auto& p : registry_) {
    if (p.name == name) return p.tensor;
  }
  throw Error("no parameter named '" + name + "'");
}

Tensor normalize_min_max(const Tensor& t) {
  auto v = t.values();
  std::vector<double> out(v.size(), 0.0);
  if (!v.empty()) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double range = *hi - *lo;
    if (range > 0.0) {
      for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / range;
    }
  }
  return Tensor(t.shape(), std::move(out));
}

}  // namespace fanet
