#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "fanet/gradcheck_suite.hpp"
#include "fanet/model.hpp"
#include "test_util.hpp"

namespace fanet {
namespace {

using test::random_tensor;
using test::to_vector;

FaNetConfig small_config(std::size_t classes = 3, std::uint64_t seed = 1) {
  FaNetConfig cfg;
  cfg.backbone = {16, 16, 3, {4, 8}, {2, 2}};
  cfg.fcssam.reduction = 4;
  cfg.fcssam.retention = 0.8;
  cfg.num_classes = classes;
  cfg.seed = seed;
  return cfg;
}

void set_head(const FaNet& model, std::vector<double> bias) {
  for (double& w : Tensor(model.head().weight).mutable_values()) w = 0.0;
  auto b = Tensor(model.head().bias).mutable_values();
  std::copy(bias.begin(), bias.end(), b.begin());
}

TEST(FaNet, ZeroHeadGivesUniformProbabilities) {
  FaNet model(small_config(3));
  set_head(model, {0, 0, 0});
  Tensor x = random_tensor({2, 16, 16, 3}, 1, 0.0, 1.0);
  const Tensor logits = model.forward(x);
  for (double v : logits.values()) EXPECT_EQ(v, 0.0);
  Prediction p = model.predict(x);
  for (double v : p.probabilities.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(p.labels, (std::vector<std::size_t>{0, 0}));
}

TEST(FaNet, LogitShapeForAnyBatch) {
  FaNet model(small_config(3));
  for (std::size_t n : {1u, 2u, 5u}) {
    EXPECT_EQ(model.forward(random_tensor({n, 16, 16, 3}, n)).shape(), (Shape{n, 3}));
  }
  EXPECT_THROW(model.forward(random_tensor({1, 16, 15, 3}, 9)), ShapeError);
}

TEST(FaNet, PredictSoftmaxArithmetic) {
  FaNet model(small_config(3));
  set_head(model, {2, 1, 0});
  Prediction p = model.predict(random_tensor({1, 16, 16, 3}, 2));
  const double z = std::exp(2.0) + std::exp(1.0) + 1.0;
  EXPECT_EQ(p.labels[0], 0u);
  EXPECT_NEAR(p.probabilities.at(0), std::exp(2.0) / z, 1e-15);
  EXPECT_NEAR(p.probabilities.at(0), 0.665, 1e-3);
}

TEST(FaNet, PredictTieGoesToLowestClass) {
  FaNet model(small_config(3));
  set_head(model, {0.5, 1.5, 1.5});
  EXPECT_EQ(model.predict(random_tensor({1, 16, 16, 3}, 3)).labels[0], 1u);
}

TEST(FaNet, PredictRowsSumToOneAndShiftInvariant) {
  FaNet model(small_config(3));
  Tensor x = random_tensor({4, 16, 16, 3}, 4, 0.0, 1.0);
  Prediction p = model.predict(x);
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_NEAR(p.probabilities.at(3 * r) + p.probabilities.at(3 * r + 1) +
                    p.probabilities.at(3 * r + 2),
                1.0, 1e-12);
  }
  for (double& b : Tensor(model.head().bias).mutable_values()) b += 7.25;
  EXPECT_EQ(model.predict(x).labels, p.labels);
}

TEST(FaNet, GapFeaturesAreSpatialMeanOfAttentionOutput) {
  FaNet model(small_config(3));
  Tensor x = random_tensor({2, 16, 16, 3}, 5, 0.0, 1.0);
  Tensor gap = model.extract_gap_features(x);
  const std::size_t m = model.retained_channels();
  ASSERT_EQ(gap.shape(), (Shape{2, m}));
  Tensor out = model.trace(x).fcssam.output;
  const std::size_t hw = out.dim(1) * out.dim(2);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < m; ++c) {
      double s = 0.0;
      for (std::size_t p = 0; p < hw; ++p) s += out.at((n * hw + p) * m + c);
      EXPECT_NEAR(gap.at(n * m + c), s / double(hw), 1e-15);
    }
}

TEST(FaNet, GapOfSpatiallyConstantOutput) {
  FaNetConfig cfg;
  cfg.backbone = {1, 1, 8, {}, {}};
  cfg.fcssam.reduction = 4;
  FaNet model(cfg);
  Tensor x = random_tensor({3, 1, 1, 8}, 6);
  ForwardTrace t = model.trace(x);
  EXPECT_EQ(to_vector(t.gap), to_vector(t.fcssam.output));
}

TEST(FaNet, AttentionDiagnostics) {
  FaNet model(small_config(3));
  Tensor img = random_tensor({16, 16, 3}, 7, 0.0, 1.0);
  AttentionDiagnostics d = model.extract_attention_diagnostics(img);
  const std::size_t c = model.feature_channels();
  EXPECT_EQ(d.sam_avg_map.shape(), (Shape{4, 4}));
  EXPECT_EQ(d.sam_max_map.shape(), (Shape{4, 4}));
  EXPECT_EQ(d.cam_weights.size(), c);
  ASSERT_EQ(d.selected_indices.size(), model.retained_channels());
  for (std::size_t i = 0; i < d.selected_indices.size(); ++i) {
    EXPECT_LT(d.selected_indices[i], 2 * c);
    if (i) {
      EXPECT_LT(d.selected_indices[i - 1], d.selected_indices[i]);
    }
  }
  const FcsParams& f = model.fcssam().fcs;
  EXPECT_EQ(d.gate_values,
            to_vector(richards_gate(f.alpha, f.scale, f.steepness, f.location, f.form)));
  for (const Tensor& map : {d.sam_avg_map, d.sam_max_map}) {
    double lo = 1.0, hi = 0.0;
    for (double v : map.values()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    EXPECT_EQ(lo, 0.0);
    EXPECT_TRUE(hi == 1.0 || hi == 0.0);
  }
  EXPECT_THROW(model.extract_attention_diagnostics(random_tensor({2, 16, 16, 3}, 8)),
               ShapeError);
}

TEST(FaNet, NormalizeMinMax) {
  EXPECT_EQ(to_vector(normalize_min_max(Tensor({3}, 0.7))), std::vector<double>(3, 0.0));
  EXPECT_EQ(to_vector(normalize_min_max(Tensor({3}, {2, 4, 3}))),
            (std::vector<double>{0, 1, 0.5}));
}

TEST(FaNet, RegistryUniqueAndDeterministic) {
  FaNet a(small_config(3, 11)), b(small_config(3, 11)), c(small_config(3, 12));
  std::set<std::string> names;
  for (const auto& p : a.parameters()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
  EXPECT_TRUE(names.count("head.weight"));
  EXPECT_TRUE(names.count("fcssam.fcs.alpha"));
  bool differs = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(to_vector(a.parameters()[i].tensor), to_vector(b.parameters()[i].tensor));
    differs = differs ||
              to_vector(a.parameters()[i].tensor) != to_vector(c.parameters()[i].tensor);
  }
  EXPECT_TRUE(differs);
  EXPECT_THROW(a.parameter("nope"), Error);
}

TEST(FaNet, HeadWidthMatchesRetainedChannels) {
  FaNet model(small_config(2));
  EXPECT_EQ(model.retained_channels(), retained_count(0.8, 16));
  EXPECT_EQ(model.head().weight.shape(), (Shape{13, 2}));
}

TEST(FaNet, ConfigValidation) {
  FaNetConfig cfg = small_config();
  cfg.fcssam.reduction = 3;
  EXPECT_THROW(FaNet{cfg}, ConfigError);
  cfg = small_config();
  cfg.fcssam.retention = 0.0;
  EXPECT_THROW(FaNet{cfg}, ConfigError);
  cfg = small_config();
  cfg.num_classes = 1;
  EXPECT_THROW(FaNet{cfg}, ConfigError);
  cfg = small_config();
  cfg.fcssam.sam_kernel = 4;
  EXPECT_THROW(FaNet{cfg}, ConfigError);
}

TEST(GradcheckSuite, AllOpsPassAndCorruptionIsCaught) {
  const auto ops = gradcheck_ops();
  auto outcomes = run_gradcheck_suite(0);
  ASSERT_EQ(outcomes.size(), ops.size());
  for (const auto& o : outcomes) {
    EXPECT_TRUE(o.passed) << o.op << " " << o.max_rel_error;
    EXPECT_LE(o.max_rel_error, kGradcheckTolerance) << o.op;
    EXPECT_GE(o.instances, o.op == "fanet" ? 1u : kGradcheckInstances) << o.op;
  }
  auto corrupt = run_gradcheck_suite(0, "softmax");
  for (const auto& o : corrupt) EXPECT_EQ(o.passed, o.op != "softmax") << o.op;
}

}  // namespace
}  // namespace fanet
