#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "fanet/gradcheck.hpp"
#include "fanet/train.hpp"
#include "synthetic.hpp"
#include "test_util.hpp"

namespace fanet {
namespace {

namespace fs = std::filesystem;
using test::random_parameter;
using test::random_tensor;
using test::TempDir;
using test::to_vector;

TEST(CrossEntropy, UniformLogits) {
  for (std::size_t label : {0u, 1u, 2u}) {
    const std::size_t labels[] = {label};
    EXPECT_NEAR(cross_entropy_loss(Tensor({1, 3}, 0.0), labels).item(), std::log(3.0), 1e-15);
  }
  EXPECT_NEAR(std::log(3.0), 1.098612, 1e-6);
}

TEST(CrossEntropy, SaturatedLogits) {
  const std::size_t labels[] = {0};
  const double loss = cross_entropy_loss(Tensor({1, 2}, {1000, 0}), labels).item();
  EXPECT_GE(loss, 0.0);
  EXPECT_LT(loss, 1e-300);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHot) {
  Tensor logits = random_parameter({4, 3}, 1, -3.0, 3.0);
  const std::size_t labels[] = {0, 2, 1, 2};
  {
    Tape tape;
    TapeScope scope(tape);
    backward(cross_entropy_loss(logits, labels));
  }
  Tensor p = softmax(logits.detach());
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t k = 0; k < 3; ++k)
      EXPECT_NEAR(logits.grad()[r * 3 + k], (p.at(r * 3 + k) - (k == labels[r])) / 4.0, 1e-15);
  logits.zero_grad();
  const Tensor params[] = {logits};
  EXPECT_LE(finite_difference_check([&] { return cross_entropy_loss(logits, labels); },
                                    params)[0],
            1e-6);
}

TEST(CrossEntropy, NonNegativeAndWeighted) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Tensor logits = random_tensor({5, 4}, 100 + s, -20.0, 20.0);
    const std::size_t labels[] = {0, 1, 2, 3, 1};
    EXPECT_GE(cross_entropy_loss(logits, labels).item(), 0.0);
  }
  Tensor logits({2, 2}, {0.0, 1.0, 2.0, 0.0});
  const std::size_t labels[] = {0, 1};
  const double w[] = {3.0, 1.0};
  const double nll0 = std::log(1.0 + std::exp(1.0));
  const double nll1 = std::log(1.0 + std::exp(2.0)) ;
  EXPECT_NEAR(cross_entropy_loss(logits, labels, w).item(), (3 * nll0 + nll1) / 4.0, 1e-15);
}

TEST(CrossEntropy, Errors) {
  const std::size_t bad[] = {3};
  EXPECT_THROW(cross_entropy_loss(Tensor({1, 3}, 0.0), bad), DataError);
  const std::size_t two[] = {0, 1};
  EXPECT_THROW(cross_entropy_loss(Tensor({1, 3}, 0.0), two), ShapeError);
  const std::size_t one[] = {0};
  EXPECT_THROW(cross_entropy_loss(Tensor({3}, 0.0), one), ShapeError);
}

TEST(Adam, ZeroGradientIsNoOp) {
  Tensor p = random_parameter({3, 2}, 2);
  const auto before = to_vector(p);
  AdamState st;
  Tensor params[] = {p};
  const Tensor grads[] = {Tensor({3, 2}, 0.0)};
  adam_step(params, grads, st);
  EXPECT_EQ(to_vector(p), before);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepMagnitude) {
  Tensor p = random_parameter({4}, 3);
  const auto before = to_vector(p);
  AdamState st;
  st.learning_rate = 1e-4;
  Tensor params[] = {p};
  const Tensor grads[] = {Tensor({4}, 1.0)};
  adam_step(params, grads, st);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(p.at(i) - before[i], -1e-4 / (1.0 + 1e-8), 1e-15);
  }
}

TEST(Adam, QuadraticMatchesScalarReference) {
  Tensor w = Tensor::parameter({1}, {1.0});
  AdamState st;
  st.learning_rate = 1e-3;
  double ref = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 200; ++t) {
    Tensor params[] = {w};
    const Tensor grads[] = {Tensor({1}, {2.0 * w.item()})};
    adam_step(params, grads, st);

    const double g = 2.0 * ref;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t)), vh = v / (1.0 - std::pow(0.999, t));
    ref -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
  }
  EXPECT_NEAR(w.item(), ref, 1e-14);
  EXPECT_LT(std::abs(w.item()), 0.9);
  EXPECT_EQ(st.step, 200u);
}

TEST(Adam, ShapeMismatch) {
  AdamState st;
  Tensor params[] = {Tensor::parameter({2}, {0, 0})};
  const Tensor grads[] = {Tensor({3}, 0.0)};
  EXPECT_THROW(adam_step(params, grads, st), ShapeError);
  const Tensor none[] = {Tensor({2}, 0.0), Tensor({2}, 0.0)};
  EXPECT_THROW(adam_step(params, none, st), ShapeError);
}

struct Fixture {
  TempDir dir;
  DatasetIndex all;
  DatasetIndex train;
  DatasetIndex val;

  explicit Fixture(std::size_t per_class = 8, std::size_t size = 16) {
    cli::write_synthetic_dataset(dir / "data", per_class, size, 5);
    all = index_dataset(dir / "data");
    std::tie(train, val) = split_validation(all, 0.25, 1);
  }
};

FaNetConfig tiny_config(std::size_t size = 16) {
  FaNetConfig cfg;
  cfg.backbone = {size, size, 3, {4, 8}, {2, 2}};
  cfg.fcssam.reduction = 4;
  cfg.num_classes = 2;
  cfg.seed = 3;
  return cfg;
}

TrainConfig tiny_train(std::size_t epochs, double lr = 1e-3) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.learning_rate = lr;
  cfg.seed = 9;
  return cfg;
}

std::vector<std::vector<double>> snapshot(const FaNet& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.parameters()) out.push_back(to_vector(p.tensor));
  return out;
}

TEST(Fit, ZeroLearningRateLeavesParameters) {
  Fixture fx;
  FaNet model(tiny_config());
  const auto before = snapshot(model);
  TrainingLog log = fit(model, fx.train, fx.val, tiny_train(3, 0.0));
  EXPECT_EQ(snapshot(model), before);
  ASSERT_EQ(log.epochs.size(), 3u);
  for (const EpochRecord& r : log.epochs) {
    EXPECT_EQ(r.val_loss, log.epochs[0].val_loss);
    EXPECT_NEAR(r.train_loss, log.epochs[0].train_loss, 1e-12);
  }
}

TEST(Fit, BitwiseDeterministic) {
  Fixture fx;
  TrainConfig cfg = tiny_train(3);
  cfg.augment = AugmentConfig{};
  FaNet a(tiny_config()), b(tiny_config());
  TrainingLog la = fit(a, fx.train, fx.val, cfg);
  TrainingLog lb = fit(b, fx.train, fx.val, cfg);
  ASSERT_EQ(la.epochs.size(), lb.epochs.size());
  for (std::size_t i = 0; i < la.epochs.size(); ++i) {
    EXPECT_EQ(la.epochs[i].train_loss, lb.epochs[i].train_loss);
    EXPECT_EQ(la.epochs[i].val_loss, lb.epochs[i].val_loss);
  }
  EXPECT_EQ(snapshot(a), snapshot(b));
}

TEST(Fit, LossMostlyNonIncreasingAfterWarmup) {
  Fixture fx(8, 16);
  FaNet model(tiny_config());
  TrainingLog log = fit(model, fx.all, fx.val, tiny_train(40));
  std::size_t violations = 0, checked = 0;
  for (std::size_t e = 5; e < log.epochs.size(); ++e) {
    ++checked;
    violations += log.epochs[e].train_loss > log.epochs[e - 1].train_loss;
  }
  EXPECT_LE(violations * 10, checked) << violations << " of " << checked;
  EXPECT_LT(log.epochs.back().train_loss, log.epochs.front().train_loss);
}

TEST(Fit, NonFiniteLossNamesBatch) {
  Fixture fx;
  FaNet model(tiny_config());
  for (double& w : Tensor(model.head().weight).mutable_values()) w = std::numeric_limits<double>::quiet_NaN();
  try {
    fit(model, fx.train, fx.val, tiny_train(1));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("batch 1"), std::string::npos) << e.what();
  }
}

TEST(Fit, InputValidation) {
  Fixture fx;
  FaNet model(tiny_config());
  DatasetIndex empty = fx.val;
  empty.samples.clear();
  EXPECT_THROW(fit(model, fx.train, empty, tiny_train(1)), DataError);
  FaNetConfig three = tiny_config();
  three.num_classes = 3;
  FaNet wrong(three);
  EXPECT_THROW(fit(wrong, fx.train, fx.val, tiny_train(1)), DataError);
  TrainConfig bad = tiny_train(0);
  EXPECT_THROW(fit(model, fx.train, fx.val, bad), ConfigError);
}

TEST(Fit, WritesArtifactsAndResumesIdentically) {
  Fixture fx;
  TrainConfig cfg = tiny_train(4);
  cfg.selection = WeightSelection::kFinal;
  cfg.output_dir = fx.dir / "straight";
  FaNet straight(tiny_config());
  TrainingLog full = fit(straight, fx.train, fx.val, cfg);
  for (const char* f : {"best.fant", "last.fant", "training_log.csv"}) {
    EXPECT_TRUE(fs::exists(*cfg.output_dir / f)) << f;
  }

  cfg.output_dir = fx.dir / "split";
  cfg.epochs = 2;
  FaNet first(tiny_config());
  fit(first, fx.train, fx.val, cfg);
  Checkpoint ck;
  FaNet resumed = load_model(*cfg.output_dir / "last.fant", &ck);
  ASSERT_TRUE(ck.state.has_value());
  EXPECT_EQ(ck.state->epochs_done, 2u);
  EXPECT_EQ(ck.state->adam.step, 2u * 3u);
  cfg.epochs = 4;
  TrainingLog rest = fit(resumed, fx.train, fx.val, cfg, ck.state);
  ASSERT_EQ(rest.epochs.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(rest.epochs[i].train_loss, full.epochs[i].train_loss);
    EXPECT_EQ(rest.epochs[i].val_loss, full.epochs[i].val_loss);
  }
  EXPECT_EQ(snapshot(resumed), snapshot(straight));
  const auto rows = read_training_log(*cfg.output_dir / "training_log.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[3].val_acc, full.epochs[3].val_acc);
}

TEST(Fit, EarlyStopping) {
  Fixture fx;
  TrainConfig cfg = tiny_train(50, 0.0);
  cfg.early_stop_patience = 2;
  FaNet model(tiny_config());
  TrainingLog log = fit(model, fx.train, fx.val, cfg);
  EXPECT_TRUE(log.stopped_early);
  EXPECT_EQ(log.epochs.size(), 3u);
  EXPECT_EQ(log.best_epoch, 1u);
}

TEST(TrainingLogCsv, RoundTrip) {
  TempDir dir;
  TrainingLog log;
  log.epochs = {{1, 0.7, 0.5, 0.69, 0.5}, {2, 1.0 / 3.0, 0.75, 0.1234567890123456789, 1.0}};
  write_training_log(dir / "log.csv", log);
  std::ifstream in(dir / "log.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "epoch,train_loss,train_acc,val_loss,val_acc");
  auto rows = read_training_log(dir / "log.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].epoch, 2u);
  EXPECT_EQ(rows[1].train_loss, 1.0 / 3.0);
  EXPECT_EQ(rows[1].val_loss, 0.1234567890123456789);
  std::ofstream(dir / "junk.csv") << "a,b\n";
  EXPECT_THROW(read_training_log(dir / "junk.csv"), DataError);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  TempDir dir;
  FaNet model(tiny_config());
  // Perturb away from initialization so every tensor carries arbitrary bits.
  for (const auto& p : model.parameters()) {
    Rng rng(p.tensor.size());
    for (double& v : Tensor(p.tensor).mutable_values()) v += rng.uniform(-0.01, 0.01);
  }
  TrainState st;
  st.epochs_done = 7;
  st.best_val_loss = 0.25;
  st.adam.step = 11;
  for (const auto& p : model.parameters()) {
    st.adam.m.push_back(test::random_values(p.tensor.size(), 20));
    st.adam.v.push_back(test::random_values(p.tensor.size(), 21, 0.0, 1.0));
  }
  save_checkpoint(dir / "m.fant", model, {"bright", "dark"}, &st);
  Checkpoint info;
  FaNet back = load_model(dir / "m.fant", &info);
  EXPECT_EQ(snapshot(back), snapshot(model));
  EXPECT_EQ(info.class_names, (std::vector<std::string>{"bright", "dark"}));
  ASSERT_TRUE(info.state.has_value());
  EXPECT_EQ(info.state->epochs_done, 7u);
  EXPECT_EQ(info.state->adam.step, 11u);
  EXPECT_EQ(info.state->adam.v, st.adam.v);
  EXPECT_EQ(info.state->best_val_loss, 0.25);
  Tensor x = random_tensor({2, 16, 16, 3}, 4, 0.0, 1.0);
  EXPECT_EQ(to_vector(back.forward(x)), to_vector(model.forward(x)));
}

TEST(Checkpoint, FlippedByteFailsCrc) {
  TempDir dir;
  FaNet model(tiny_config());
  save_checkpoint(dir / "m.fant", model, {"a", "b"});
  std::fstream f(dir / "m.fant", std::ios::in | std::ios::out | std::ios::binary);
  const auto size = fs::file_size(dir / "m.fant");
  f.seekg(std::streamoff(size / 2));
  char c;
  f.get(c);
  f.seekp(std::streamoff(size / 2));
  f.put(char(c ^ 0x01));
  f.close();
  try {
    load_model(dir / "m.fant");
    FAIL();
  } catch (const CorruptContainerError& e) {
    EXPECT_NE(std::string(e.what()).find("CRC"), std::string::npos);
  }
}

TEST(Checkpoint, HeadMismatchIsIncompatible) {
  TempDir dir;
  FaNet two(tiny_config());
  save_checkpoint(dir / "k2.fant", two, {"a", "b"});
  FaNetConfig cfg3 = tiny_config();
  cfg3.num_classes = 3;
  FaNet three(cfg3);
  try {
    load_parameters(dir / "k2.fant", three);
    FAIL();
  } catch (const IncompatibleCheckpointError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("head"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[13x2]"), std::string::npos) << msg;
  }
  FaNetConfig wider = tiny_config();
  wider.backbone.widths = {4, 12};
  wider.fcssam.reduction = 4;
  FaNet other(wider);
  EXPECT_THROW(load_parameters(dir / "k2.fant", other), IncompatibleCheckpointError);
}

TEST(Evaluate, AccuracyAgreesWithPredictions) {
  Fixture fx;
  FaNet model(tiny_config());
  ImageLoader loader(16, 16);
  EvalResult r = evaluate(model, fx.all, 5, loader);
  ASSERT_EQ(r.predictions.size(), fx.all.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    correct += r.labels[i] == r.predictions[i];
    EXPECT_EQ(r.labels[i], fx.all.samples[i].label);
    EXPECT_NEAR(r.probabilities[i][0] + r.probabilities[i][1], 1.0, 1e-12);
  }
  EXPECT_EQ(r.accuracy, double(correct) / double(fx.all.size()));
  EXPECT_GT(r.loss, 0.0);
}

}  // namespace
}  // namespace fanet
