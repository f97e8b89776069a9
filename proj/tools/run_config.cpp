#include "run_config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "fanet/errors.hpp"

namespace fanet::cli {
namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& v) {
  std::size_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) {
    throw ConfigError("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& v) {
  double out = 0.0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("expected a finite number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

// Comma-separated; "none" or an empty value is the empty list.
std::vector<std::size_t> to_size_list(const std::string& v) {
  std::vector<std::size_t> out;
  if (v.empty() || v == "none") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(trim(item)));
  return out;
}

template <typename E>
E to_enum(const std::string& v, const std::vector<std::pair<std::string, E>>& names) {
  std::string allowed;
  for (const auto& [name, value] : names) {
    if (name == v) return value;
    allowed += (allowed.empty() ? "" : "|") + name;
  }
  throw ConfigError("expected one of " + allowed + ", got '" + v + "'");
}

template <typename E>
std::string enum_name(E value, const std::vector<std::pair<std::string, E>>& names) {
  for (const auto& [name, v] : names) {
    if (v == value) return name;
  }
  return "?";
}

const std::vector<std::pair<std::string, Wiring>> kWirings = {
    {"channel_then_spatial", Wiring::kChannelThenSpatial}, {"parallel", Wiring::kParallel}};
const std::vector<std::pair<std::string, GateForm>> kGates = {
    {"richards", GateForm::kRichards}, {"logistic", GateForm::kLogistic}};
const std::vector<std::pair<std::string, Activation>> kActivations = {
    {"relu", Activation::kRelu}, {"none", Activation::kNone}, {"sigmoid", Activation::kSigmoid}};
const std::vector<std::pair<std::string, WeightSelection>> kSelections = {
    {"best", WeightSelection::kBestValidation}, {"final", WeightSelection::kFinal}};
const std::vector<std::pair<std::string, ClassWeighting>> kWeightings = {
    {"none", ClassWeighting::kNone}, {"inverse_frequency", ClassWeighting::kInverseFrequency}};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string list(const std::vector<std::size_t>& v) {
  if (v.empty()) return "none";
  std::string s;
  for (std::size_t x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
  return s;
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&, const fs::path&)> set;
  std::function<std::string(const RunConfig&)> get;
};

fs::path resolve(const fs::path& base, const std::string& v) {
  if (v.empty()) throw ConfigError("expected a path");
  fs::path p(v);
  return (p.is_absolute() || base.empty() ? p : base / p).lexically_normal();
}

const std::vector<Key>& key_table() {
  static const std::vector<Key> keys = {
      {"data.root", [](RunConfig& c, const std::string& v, const fs::path& b) { c.data_root = resolve(b, v); },
       [](const RunConfig& c) { return c.data_root.string(); }},
      {"data.val_root",
       [](RunConfig& c, const std::string& v, const fs::path& b) {
         if (v == "none" || v.empty()) {
           c.val_root.reset();
         } else {
           c.val_root = resolve(b, v);
         }
       },
       [](const RunConfig& c) { return c.val_root ? c.val_root->string() : std::string("none"); }},
      {"data.val_fraction", [](RunConfig& c, const std::string& v, const fs::path&) { c.val_fraction = to_double(v); },
       [](const RunConfig& c) { return num(c.val_fraction); }},
      {"data.skip_undecodable",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.skip_undecodable = to_bool(v); },
       [](const RunConfig& c) { return std::string(c.skip_undecodable ? "true" : "false"); }},
      {"input.height",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.model.backbone.input_height = to_size(v); },
       [](const RunConfig& c) { return std::to_string(c.model.backbone.input_height); }},
      {"input.width",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.model.backbone.input_width = to_size(v); },
       [](const RunConfig& c) { return std::to_string(c.model.backbone.input_width); }},
      {"input.channels",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.model.backbone.input_channels = to_size(v); },
       [](const RunConfig& c) { return std::to_string(c.model.backbone.input_channels); }},
      {"backbone.widths",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.model.backbone.widths = to_size_list(v); },
       [](const RunConfig& c) { return list(c.model.backbone.widths); }},
      {"backbone.strides",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.model.backbone.strides = to_size_list(v); },
       [](const RunConfig& c) { return list(c.model.backbone.strides); }},
      {"fcssam.reduction",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.model.fcssam.reduction = to_size(v); },
       [](const RunConfig& c) { return std::to_string(c.model.fcssam.reduction); }},
      {"fcssam.retention",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.model.fcssam.retention = to_double(v); },
       [](const RunConfig& c) { return num(c.model.fcssam.retention); }},
      {"fcssam.wiring",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.model.fcssam.wiring = to_enum(v, kWirings); },
       [](const RunConfig& c) { return enum_name(c.model.fcssam.wiring, kWirings); }},
      {"fcssam.gate",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.model.fcssam.gate_form = to_enum(v, kGates); },
       [](const RunConfig& c) { return enum_name(c.model.fcssam.gate_form, kGates); }},
      {"fcssam.share_cam_dense",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.model.fcssam.share_cam_dense = to_bool(v); },
       [](const RunConfig& c) { return std::string(c.model.fcssam.share_cam_dense ? "true" : "false"); }},
      {"fcssam.share_sc",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.model.fcssam.share_sc = to_bool(v); },
       [](const RunConfig& c) { return std::string(c.model.fcssam.share_sc ? "true" : "false"); }},
      {"fcssam.sc_activation",
       [](RunConfig& c, const std::string& v, const fs::path&) {
         c.model.fcssam.sc_activation = to_enum(v, kActivations);
       },
       [](const RunConfig& c) { return enum_name(c.model.fcssam.sc_activation, kActivations); }},
      {"fcssam.sam_kernel",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.model.fcssam.sam_kernel = to_size(v); },
       [](const RunConfig& c) { return std::to_string(c.model.fcssam.sam_kernel); }},
      {"augment.enabled", [](RunConfig& c, const std::string& v, const fs::path&) { c.augment_enabled = to_bool(v); },
       [](const RunConfig& c) { return std::string(c.augment_enabled ? "true" : "false"); }},
      {"augment.rotation_deg",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.augment.rotation_deg = to_double(v); },
       [](const RunConfig& c) { return num(c.augment.rotation_deg); }},
      {"augment.shift", [](RunConfig& c, const std::string& v, const fs::path&) { c.augment.shift = to_double(v); },
       [](const RunConfig& c) { return num(c.augment.shift); }},
      {"augment.flip_prob",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.augment.flip_prob = to_double(v); },
       [](const RunConfig& c) { return num(c.augment.flip_prob); }},
      {"augment.zoom", [](RunConfig& c, const std::string& v, const fs::path&) { c.augment.zoom = to_double(v); },
       [](const RunConfig& c) { return num(c.augment.zoom); }},
      {"train.epochs", [](RunConfig& c, const std::string& v, const fs::path&) { c.train.epochs = to_size(v); },
       [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
      {"train.batch_size",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.train.batch_size = to_size(v); },
       [](const RunConfig& c) { return std::to_string(c.train.batch_size); }},
      {"train.learning_rate",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.train.learning_rate = to_double(v); },
       [](const RunConfig& c) { return num(c.train.learning_rate); }},
      {"train.seed", [](RunConfig& c, const std::string& v, const fs::path&) { c.train.seed = to_size(v); },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      {"train.checkpoint_every",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.train.checkpoint_every = to_size(v); },
       [](const RunConfig& c) { return std::to_string(c.train.checkpoint_every); }},
      {"train.early_stop_patience",
       [](RunConfig& c, const std::string& v, const fs::path&) {
         const std::size_t n = to_size(v);
         if (n == 0) {
           c.train.early_stop_patience.reset();
         } else {
           c.train.early_stop_patience = n;
         }
       },
       [](const RunConfig& c) { return std::to_string(c.train.early_stop_patience.value_or(0)); }},
      {"train.selection",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.train.selection = to_enum(v, kSelections); },
       [](const RunConfig& c) { return enum_name(c.train.selection, kSelections); }},
      {"train.clip_grad_norm",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.train.clip_grad_norm = to_double(v); },
       [](const RunConfig& c) { return num(c.train.clip_grad_norm); }},
      {"train.class_weighting",
       [](RunConfig& c, const std::string& v, const fs::path&) {
         c.train.class_weighting = to_enum(v, kWeightings);
       },
       [](const RunConfig& c) { return enum_name(c.train.class_weighting, kWeightings); }},
      {"train.cache_images",
       [](RunConfig& c, const std::string& v, const fs::path&) { c.train.cache_images = to_bool(v); },
       [](const RunConfig& c) { return std::string(c.train.cache_images ? "true" : "false"); }},
      {"output.dir", [](RunConfig& c, const std::string& v, const fs::path& b) { c.output_dir = resolve(b, v); },
       [](const RunConfig& c) { return c.output_dir.string(); }},
  };
  return keys;
}

}  // namespace

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const Key& k : key_table()) out.push_back(k.name);
    return out;
  }();
  return names;
}

void RunConfig::validate() const {
  if (data_root.empty()) throw ConfigError("data.root is required");
  if (output_dir.empty()) throw ConfigError("output.dir is required");
  if (!val_root && !(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("data.val_fraction must lie in (0, 1)");
  }
  model_config(2).validate();
  if (augment_enabled) augment.validate();
  train_config().validate();
}

FaNetConfig RunConfig::model_config(std::size_t num_classes) const {
  FaNetConfig m = model;
  m.num_classes = num_classes;
  m.seed = train.seed;
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  if (augment_enabled) {
    t.augment = augment;
    t.augment->seed = train.seed;
  } else {
    t.augment.reset();
  }
  t.output_dir = output_dir;
  return t;
}

RunConfig parse_run_config(std::istream& in, const std::string& source,
                           const fs::path& base_dir) {
  std::map<std::string, const Key*> by_name;
  for (const Key& k : key_table()) by_name.emplace(k.name, &k);
  RunConfig cfg;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = by_name.find(key);
    if (it == by_name.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->second->set(cfg, value, base_dir);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config '" + file.string() + "'");
  return parse_run_config(in, file.string(), file.parent_path());
}

std::string format_run_config(const RunConfig& cfg) {
  std::string out;
  for (const Key& k : key_table()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace fanet::cli
