#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fanet/data.hpp"
#include "fanet/model.hpp"
#include "fanet/tensor.hpp"

namespace fanet {

/// Mean over the batch of -log softmax(logits)[label], fused and
/// max-subtracted. Optional per-class weights give
/// sum_i w[y_i] * nll_i / sum_i w[y_i].
Tensor cross_entropy_loss(const Tensor& logits, std::span<const std::size_t> labels,
                          std::span<const double> class_weights = {});

struct AdamState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// Bias-corrected Adam update in place. `grads[i]` must match `params[i]`.
/// Moments are allocated on first use.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state);

/// Gradients of `params` as tensors (zeros where no gradient flowed).
std::vector<Tensor> collect_gradients(std::span<const Tensor> params);

enum class WeightSelection { kBestValidation, kFinal };
enum class ClassWeighting { kNone, kInverseFrequency };

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 48;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 1;  // epochs; 0 disables periodic saves
  std::optional<std::size_t> early_stop_patience;
  WeightSelection selection = WeightSelection::kBestValidation;
  double clip_grad_norm = 0.0;  // 0 disables
  ClassWeighting class_weighting = ClassWeighting::kNone;
  std::optional<AugmentConfig> augment;
  bool cache_images = true;
  /// When set, best.fant / last.fant / training_log.csv are written here.
  std::optional<std::filesystem::path> output_dir;
  std::vector<std::string> class_names;  // recorded in checkpoints

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
};

/// CSV `epoch,train_loss,train_acc,val_loss,val_acc`, 17 significant digits.
void write_training_log(const std::filesystem::path& file, const TrainingLog& log);
std::vector<EpochRecord> read_training_log(const std::filesystem::path& file);

/// Optimizer and progress carried across a resume.
struct TrainState {
  AdamState adam;
  std::size_t epochs_done = 0;
  std::optional<double> best_val_loss;
  std::size_t best_epoch = 0;
  std::size_t epochs_since_best = 0;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> predictions;
  std::vector<std::vector<double>> probabilities;
};

/// Inference pass over an index (no augmentation).
EvalResult evaluate(const FaNet& model, const DatasetIndex& index, std::size_t batch_size,
                    ImageLoader& loader);

/// Trains in place. Throws NumericError naming epoch and batch on a
/// non-finite loss. `resume` continues from a saved state; rows of an
/// existing log up to the resumed epoch are carried over.
TrainingLog fit(FaNet& model, const DatasetIndex& train, const DatasetIndex& val,
                const TrainConfig& cfg, std::optional<TrainState> resume = std::nullopt,
                const std::function<void(const EpochRecord&)>& on_epoch = {});

struct Checkpoint {
  FaNetConfig config;
  std::vector<std::string> class_names;
  std::optional<TrainState> state;
};

/// Writes model config, class names, parameters (f64) and optional
/// optimizer state into one FANT container.
void save_checkpoint(const std::filesystem::path& path, const FaNet& model,
                     const std::vector<std::string>& class_names,
                     const TrainState* state = nullptr);

/// Reads only the header entries (config, classes, state).
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Rebuilds the model recorded in a checkpoint and loads its parameters.
FaNet load_model(const std::filesystem::path& path, Checkpoint* info = nullptr);

/// Copies checkpoint parameters into an existing model. Throws
/// IncompatibleCheckpointError naming the first missing or mis-shaped
/// parameter.
void load_parameters(const std::filesystem::path& path, FaNet& model);

}  // namespace fanet
