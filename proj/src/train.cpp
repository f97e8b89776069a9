#include "fanet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "fanet/container.hpp"
#include "fanet/nn_ops.hpp"

namespace fanet {
namespace fs = std::filesystem;

Tensor cross_entropy_loss(const Tensor& logits, std::span<const std::size_t> labels,
                          std::span<const double> class_weights) {
  if (!logits.defined() || logits.rank() != 2) {
    throw ShapeError("cross_entropy_loss: logits must be N x K");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("cross_entropy_loss: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  }
  if (!class_weights.empty() && class_weights.size() != k) {
    throw ShapeError("cross_entropy_loss: class weight count does not match K");
  }
  std::vector<double> w(n, 1.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) {
      throw DataError("cross_entropy_loss: label " + std::to_string(labels[i]) +
                      " out of range [0," + std::to_string(k) + ")");
    }
    if (!class_weights.empty()) w[i] = class_weights[labels[i]];
    total += w[i];
  }
  if (!all_finite(logits.values())) throw NumericError("cross_entropy_loss: non-finite logits");

  auto lv = logits.values();
  std::vector<double> probs(n * k);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = &lv[r * k];
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += (probs[r * k + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] /= z;
    const double log_p = row[labels[r]] - mx - std::log(z);
    loss -= w[r] * log_p;
  }
  loss /= total;

  auto li = logits.impl();
  std::vector<std::size_t> y(labels.begin(), labels.end());
  return make_result({1}, {loss}, {logits},
                     [li, probs = std::move(probs), y = std::move(y), w = std::move(w),
                      total, n, k](std::span<const double> g) {
                       li->ensure_grad();
                       for (std::size_t r = 0; r < n; ++r) {
                         const double s = g[0] * w[r] / total;
                         for (std::size_t j = 0; j < k; ++j) {
                           const double onehot = j == y[r] ? 1.0 : 0.0;
                           li->grad[r * k + j] += s * (probs[r * k + j] - onehot);
                         }
                       }
                     });
}

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params but " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty()) {
    for (const Tensor& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state tracks a different parameter count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].size() || state.m[i].size() != params[i].size()) {
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i) +
                       " " + to_string(params[i].shape()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_values();
    auto g = grads[i].values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      p[j] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

std::vector<Tensor> collect_gradients(std::span<const Tensor> params) {
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (const Tensor& p : params) {
    if (p.has_grad()) {
      grads.emplace_back(p.shape(), std::vector<double>(p.grad().begin(), p.grad().end()));
    } else {
      grads.emplace_back(p.shape(), 0.0);
    }
  }
  return grads;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be finite and non-negative");
  }
  if (clip_grad_norm < 0.0) throw ConfigError("clip_grad_norm must be non-negative");
  if (early_stop_patience && *early_stop_patience == 0) {
    throw ConfigError("early_stop_patience must be positive when set");
  }
  if (augment) augment->validate();
}

void write_training_log(const fs::path& file, const TrainingLog& log) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw Error("cannot open '" + file.string() + "' for writing");
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  char buf[160];
  for (const EpochRecord& r : log.epochs) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss,
                  r.train_acc, r.val_loss, r.val_acc);
    out << buf;
  }
}

std::vector<EpochRecord> read_training_log(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open training log '" + file.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != "epoch,train_loss,train_acc,val_loss,val_acc") {
    throw DataError("'" + file.string() + "' is not a training log");
  }
  std::vector<EpochRecord> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf", &r.epoch, &r.train_loss, &r.train_acc,
                    &r.val_loss, &r.val_acc) != 5) {
      throw DataError("malformed training log row '" + line + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

namespace {

std::size_t argmax_row(std::span<const double> v, std::size_t row, std::size_t k) {
  const double* p = &v[row * k];
  return static_cast<std::size_t>(std::max_element(p, p + k) - p);
}

std::vector<double> snapshot(const FaNet& model) {
  std::vector<double> out;
  for (const auto& p : model.parameters()) {
    out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
  }
  return out;
}

void restore(const FaNet& model, const std::vector<double>& values) {
  std::size_t offset = 0;
  for (auto p : model.parameters()) {
    auto v = p.tensor.mutable_values();
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), v.size(), v.begin());
    offset += v.size();
  }
}

void clip_by_global_norm(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads)
    for (double v : g.values()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double s = max_norm / norm;
  for (Tensor& g : grads)
    for (double& v : g.mutable_values()) v *= s;
}

}  // namespace

EvalResult evaluate(const FaNet& model, const DatasetIndex& index, std::size_t batch_size,
                    ImageLoader& loader) {
  EvalResult r;
  BatchIterator it(index, batch_size, std::nullopt, loader);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  while (auto batch = it.next()) {
    Tensor logits = model.forward(batch->images);
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    loss_sum += cross_entropy_loss(logits, batch->labels).item() * static_cast<double>(n);
    Tensor probs = softmax(logits);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t pred = argmax_row(probs.values(), i, k);
      correct += pred == batch->labels[i];
      r.labels.push_back(batch->labels[i]);
      r.predictions.push_back(pred);
      r.probabilities.emplace_back(probs.values().begin() + static_cast<std::ptrdiff_t>(i * k),
                                   probs.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
    }
  }
  const auto n = static_cast<double>(r.labels.size());
  r.loss = loss_sum / n;
  r.accuracy = static_cast<double>(correct) / n;
  return r;
}

TrainingLog fit(FaNet& model, const DatasetIndex& train, const DatasetIndex& val,
                const TrainConfig& cfg, std::optional<TrainState> resume,
                const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (train.size() == 0 || val.size() == 0) {
    throw DataError("fit: training and validation indices must be non-empty");
  }
  if (train.num_classes() != model.config().num_classes) {
    throw DataError("fit: dataset has " + std::to_string(train.num_classes()) +
                    " classes but the model head has " +
                    std::to_string(model.config().num_classes));
  }
  TrainState state = resume ? std::move(*resume) : TrainState{};
  if (!resume) state.adam.learning_rate = cfg.learning_rate;

  std::vector<double> class_weights;
  if (cfg.class_weighting == ClassWeighting::kInverseFrequency) {
    std::vector<double> counts(train.num_classes(), 0.0);
    for (const Sample& s : train.samples) counts[s.label] += 1.0;
    for (double c : counts) {
      class_weights.push_back(c > 0 ? static_cast<double>(train.size()) /
                                          (static_cast<double>(counts.size()) * c)
                                    : 0.0);
    }
  }

  const BackboneConfig& bc = model.config().backbone;
  ImageLoader loader(bc.input_height, bc.input_width, cfg.cache_images);
  std::vector<Tensor> params = model.parameter_tensors();
  TrainingLog log;
  // A resumed run keeps the rows written before the interruption.
  if (resume && cfg.output_dir && fs::exists(*cfg.output_dir / "training_log.csv")) {
    for (const EpochRecord& r : read_training_log(*cfg.output_dir / "training_log.csv")) {
      if (r.epoch <= state.epochs_done) log.epochs.push_back(r);
    }
  }
  std::optional<std::vector<double>> best_params;
  const std::vector<std::string>& names =
      cfg.class_names.empty() ? train.class_names : cfg.class_names;
  if (cfg.output_dir) fs::create_directories(*cfg.output_dir);

  for (std::size_t epoch = state.epochs_done + 1; epoch <= cfg.epochs; ++epoch) {
    BatchIterator it(train, cfg.batch_size, cfg.seed, loader, cfg.augment, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0, batch_no = 0;
    while (auto batch = it.next()) {
      ++batch_no;
      Tape tape;
      TapeScope scope(tape);
      Tensor logits, loss;
      try {
        logits = model.forward(batch->images);
        loss = cross_entropy_loss(logits, batch->labels, class_weights);
      } catch (const NumericError& e) {
        throw NumericError("non-finite value at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_no) + ": " + e.what());
      }
      if (!std::isfinite(loss.item())) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_no));
      }
      tape.backward(loss);
      std::vector<Tensor> grads = collect_gradients(params);
      for (Tensor& p : params) p.zero_grad();
      if (cfg.clip_grad_norm > 0.0) clip_by_global_norm(grads, cfg.clip_grad_norm);
      adam_step(params, grads, state.adam);

      const std::size_t n = batch->labels.size(), k = logits.dim(1);
      loss_sum += loss.item() * static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        correct += argmax_row(logits.values(), i, k) == batch->labels[i];
      }
      seen += n;
    }

    EvalResult v = evaluate(model, val, cfg.batch_size, loader);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(seen),
                    static_cast<double>(correct) / static_cast<double>(seen), v.loss,
                    v.accuracy};
    log.epochs.push_back(rec);
    state.epochs_done = epoch;

    if (!state.best_val_loss || v.loss < *state.best_val_loss) {
      state.best_val_loss = v.loss;
      state.best_epoch = epoch;
      state.epochs_since_best = 0;
      best_params = snapshot(model);
      if (cfg.output_dir) save_checkpoint(*cfg.output_dir / "best.fant", model, names, &state);
    } else {
      ++state.epochs_since_best;
    }
    const bool stop = cfg.early_stop_patience &&
                      state.epochs_since_best >= *cfg.early_stop_patience;
    const bool periodic = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
    if (cfg.output_dir && (periodic || stop || epoch == cfg.epochs)) {
      save_checkpoint(*cfg.output_dir / "last.fant", model, names, &state);
    }
    if (on_epoch) on_epoch(rec);
    if (stop) {
      log.stopped_early = true;
      break;
    }
  }

  if (cfg.selection == WeightSelection::kBestValidation) {
    if (best_params) {
      restore(model, *best_params);
    } else if (cfg.output_dir && fs::exists(*cfg.output_dir / "best.fant")) {
      load_parameters(*cfg.output_dir / "best.fant", model);
    }
  }
  log.best_epoch = state.best_epoch;
  log.best_val_loss = state.best_val_loss.value_or(0.0);
  if (cfg.output_dir) write_training_log(*cfg.output_dir / "training_log.csv", log);
  return log;
}

// ---- checkpoints ----

namespace {

constexpr const char* kParamPrefix = "param.";

Tensor vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

std::vector<double> as_vector(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Tensor encode_string_list(const std::vector<std::string>& items) {
  std::vector<double> bytes;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) bytes.push_back('\n');
    for (unsigned char c : items[i]) bytes.push_back(c);
  }
  return vec(std::move(bytes));
}

std::vector<std::string> decode_string_list(const Tensor& t) {
  std::vector<std::string> out;
  if (t.size() == 0) return out;
  out.emplace_back();
  for (double d : t.values()) {
    const auto c = static_cast<char>(static_cast<unsigned char>(d));
    if (c == '\n') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

std::map<std::string, Tensor> by_name(std::vector<ContainerEntry> entries) {
  std::map<std::string, Tensor> m;
  for (auto& e : entries) m.emplace(std::move(e.name), std::move(e.tensor));
  return m;
}

const Tensor& require(const std::map<std::string, Tensor>& m, const std::string& name) {
  auto it = m.find(name);
  if (it == m.end()) {
    throw IncompatibleCheckpointError("checkpoint lacks entry '" + name + "'");
  }
  return it->second;
}

std::vector<std::size_t> as_sizes(const Tensor& t) {
  std::vector<std::size_t> out;
  for (double d : t.values()) out.push_back(static_cast<std::size_t>(d));
  return out;
}

Checkpoint parse_header(const std::map<std::string, Tensor>& m) {
  Checkpoint c;
  const auto input = as_sizes(require(m, "meta.input"));
  if (input.size() != 3) throw IncompatibleCheckpointError("checkpoint meta.input malformed");
  c.config.backbone.input_height = input[0];
  c.config.backbone.input_width = input[1];
  c.config.backbone.input_channels = input[2];
  c.config.backbone.widths = as_sizes(require(m, "meta.backbone.widths"));
  c.config.backbone.strides = as_sizes(require(m, "meta.backbone.strides"));
  const auto f = as_vector(require(m, "meta.fcssam"));
  if (f.size() != 8) throw IncompatibleCheckpointError("checkpoint meta.fcssam malformed");
  FcssamConfig& fc = c.config.fcssam;
  fc.reduction = static_cast<std::size_t>(f[0]);
  fc.retention = f[1];
  fc.wiring = static_cast<Wiring>(static_cast<int>(f[2]));
  fc.gate_form = static_cast<GateForm>(static_cast<int>(f[3]));
  fc.share_cam_dense = f[4] != 0.0;
  fc.share_sc = f[5] != 0.0;
  fc.sc_activation = static_cast<Activation>(static_cast<int>(f[6]));
  fc.sam_kernel = static_cast<std::size_t>(f[7]);
  const auto head = as_sizes(require(m, "meta.head"));
  if (head.size() != 3) throw IncompatibleCheckpointError("checkpoint meta.head malformed");
  c.config.num_classes = head[0];
  c.config.seed = (static_cast<std::uint64_t>(head[1]) << 32) | head[2];
  c.class_names = decode_string_list(require(m, "meta.class_names"));

  if (m.count("train.progress")) {
    TrainState s;
    const auto p = as_vector(m.at("train.progress"));
    const auto a = as_vector(require(m, "adam.hyper"));
    if (p.size() != 5 || a.size() != 5) {
      throw IncompatibleCheckpointError("checkpoint training state malformed");
    }
    s.epochs_done = static_cast<std::size_t>(p[0]);
    if (p[1] != 0.0) s.best_val_loss = p[2];
    s.best_epoch = static_cast<std::size_t>(p[3]);
    s.epochs_since_best = static_cast<std::size_t>(p[4]);
    s.adam.learning_rate = a[0];
    s.adam.beta1 = a[1];
    s.adam.beta2 = a[2];
    s.adam.epsilon = a[3];
    s.adam.step = static_cast<std::uint64_t>(a[4]);
    c.state = std::move(s);
  }
  return c;
}

}  // namespace

void save_checkpoint(const fs::path& path, const FaNet& model,
                     const std::vector<std::string>& class_names, const TrainState* state) {
  const FaNetConfig& cfg = model.config();
  const BackboneConfig& bc = cfg.backbone;
  const FcssamConfig& fc = cfg.fcssam;
  auto sizes = [](const std::vector<std::size_t>& v) {
    return vec(std::vector<double>(v.begin(), v.end()));
  };
  std::vector<ContainerEntry> entries;
  auto put = [&](std::string name, Tensor t) {
    entries.push_back({std::move(name), std::move(t), DType::kF64});
  };
  put("meta.input", vec({static_cast<double>(bc.input_height),
                         static_cast<double>(bc.input_width),
                         static_cast<double>(bc.input_channels)}));
  put("meta.backbone.widths", sizes(bc.widths));
  put("meta.backbone.strides", sizes(bc.strides));
  put("meta.fcssam", vec({static_cast<double>(fc.reduction), fc.retention,
                          static_cast<double>(fc.wiring), static_cast<double>(fc.gate_form),
                          fc.share_cam_dense ? 1.0 : 0.0, fc.share_sc ? 1.0 : 0.0,
                          static_cast<double>(fc.sc_activation),
                          static_cast<double>(fc.sam_kernel)}));
  put("meta.head", vec({static_cast<double>(cfg.num_classes),
                        static_cast<double>(cfg.seed >> 32),
                        static_cast<double>(cfg.seed & 0xffffffffULL)}));
  put("meta.class_names", encode_string_list(class_names));
  for (const auto& p : model.parameters()) put(kParamPrefix + p.name, p.tensor.detach());

  if (state) {
    put("train.progress",
        vec({static_cast<double>(state->epochs_done), state->best_val_loss ? 1.0 : 0.0,
             state->best_val_loss.value_or(0.0), static_cast<double>(state->best_epoch),
             static_cast<double>(state->epochs_since_best)}));
    const AdamState& a = state->adam;
    put("adam.hyper", vec({a.learning_rate, a.beta1, a.beta2, a.epsilon,
                           static_cast<double>(a.step)}));
    const auto& params = model.parameters();
    for (std::size_t i = 0; i < a.m.size() && i < params.size(); ++i) {
      put("adam.m." + params[i].name, Tensor(params[i].tensor.shape(), a.m[i]));
      put("adam.v." + params[i].name, Tensor(params[i].tensor.shape(), a.v[i]));
    }
  }
  write_container(path, entries);
}

Checkpoint read_checkpoint(const fs::path& path) {
  const auto m = by_name(read_container(path));
  return parse_header(m);
}

namespace {

void copy_into(const std::map<std::string, Tensor>& m, FaNet& model) {
  for (const auto& p : model.parameters()) {
    auto it = m.find(kParamPrefix + p.name);
    if (it == m.end()) {
      throw IncompatibleCheckpointError("checkpoint is missing parameter '" + p.name + "'");
    }
    if (it->second.shape() != p.tensor.shape()) {
      throw IncompatibleCheckpointError(
          "parameter '" + p.name + "' has shape " + to_string(it->second.shape()) +
          " in checkpoint but " + to_string(p.tensor.shape()) + " in model");
    }
  }
  for (auto p : model.parameters()) {
    const Tensor& src = m.at(kParamPrefix + p.name);
    std::copy(src.values().begin(), src.values().end(), p.tensor.mutable_values().begin());
  }
}

}  // namespace

void load_parameters(const fs::path& path, FaNet& model) {
  copy_into(by_name(read_container(path)), model);
}

FaNet load_model(const fs::path& path, Checkpoint* info) {
  const auto m = by_name(read_container(path));
  Checkpoint c = parse_header(m);
  FaNet model(c.config);
  copy_into(m, model);
  if (c.state) {
    AdamState& a = c.state->adam;
    bool complete = true;
    for (const auto& p : model.parameters()) {
      auto mi = m.find("adam.m." + p.name);
      auto vi = m.find("adam.v." + p.name);
      if (mi == m.end() || vi == m.end()) {
        complete = false;
        break;
      }
      a.m.push_back(as_vector(mi->second));
      a.v.push_back(as_vector(vi->second));
    }
    if (!complete) {
      a.m.clear();
      a.v.clear();
    }
  }
  if (info) *info = std::move(c);
  return model;
}

}  // namespace fanet
