#include "fanet/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "fanet/backbone.hpp"
#include "fanet/random.hpp"

namespace fanet {
namespace fs = std::filesystem;

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kAll: return "all";
  }
  return "all";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  if (name == "all") return Split::kAll;
  throw ConfigError("unknown split '" + name + "' (expected train|val|test|all)");
}

DatasetIndex index_dataset(const fs::path& root, const WarningSink& warn) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    throw DataError("dataset root '" + root.string() + "' is not a directory");
  }
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) {
    throw DataError("dataset root '" + root.string() + "' has no class directories");
  }
  DatasetIndex index;
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    const fs::path& dir = class_dirs[label];
    index.class_names.push_back(dir.filename().string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      if (is_supported_image(entry.path()) || is_feature_file(entry.path())) {
        files.push_back(entry.path());
      } else if (warn) {
        warn("skipping unsupported file '" + entry.path().string() + "'");
      }
    }
    if (files.empty() && warn) {
      warn("class directory '" + dir.string() + "' has no images");
    }
    std::sort(files.begin(), files.end());
    for (auto& f : files) index.samples.push_back({std::move(f), label});
  }
  return index;
}

DatasetIndex drop_undecodable(const DatasetIndex& index, const WarningSink& warn) {
  DatasetIndex out = index;
  out.samples.clear();
  for (const Sample& s : index.samples) {
    try {
      if (is_feature_file(s.path)) {
        (void)load_feature_file(s.path);
      } else {
        (void)decode_image(s.path);
      }
      out.samples.push_back(s);
    } catch (const Error& e) {
      if (warn) warn("skipping '" + s.path.string() + "': " + e.what());
    }
  }
  return out;
}

std::pair<DatasetIndex, DatasetIndex> split_validation(const DatasetIndex& index,
                                                       double fraction,
                                                       std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ConfigError("validation fraction must lie in (0, 1)");
  }
  std::vector<std::vector<std::size_t>> by_class(index.num_classes());
  for (std::size_t i = 0; i < index.samples.size(); ++i) {
    by_class.at(index.samples[i].label).push_back(i);
  }
  std::vector<bool> to_val(index.samples.size(), false);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.size() < 2) {
      throw DataError("class '" + index.class_names[c] + "' has " +
                      std::to_string(members.size()) +
                      " samples; at least 2 are needed to split");
    }
    Rng rng(derive_seed(seed, {c}));
    shuffle(members.begin(), members.end(), rng);
    const auto wanted = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(members.size())));
    const std::size_t n_val = std::clamp<std::size_t>(wanted, 1, members.size() - 1);
    for (std::size_t j = 0; j < n_val; ++j) to_val[members[j]] = true;
  }
  DatasetIndex train, val;
  train.class_names = val.class_names = index.class_names;
  train.split = Split::kTrain;
  val.split = Split::kVal;
  for (std::size_t i = 0; i < index.samples.size(); ++i) {
    (to_val[i] ? val : train).samples.push_back(index.samples[i]);
  }
  return {std::move(train), std::move(val)};
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  return fields;
}

}  // namespace

void write_split_manifest(const fs::path& file,
                          const std::vector<const DatasetIndex*>& parts) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw Error("cannot open '" + file.string() + "' for writing");
  out << "path,class,split\n";
  for (const DatasetIndex* part : parts) {
    for (const Sample& s : part->samples) {
      out << csv_field(s.path.string()) << ','
          << csv_field(part->class_names.at(s.label)) << ',' << to_string(part->split)
          << '\n';
    }
  }
}

DatasetIndex read_split_manifest(const fs::path& file, Split which,
                                 const std::vector<std::string>& class_names) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open manifest '" + file.string() + "'");
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) !=
                                     std::vector<std::string>{"path", "class", "split"}) {
    throw DataError("manifest '" + file.string() + "' lacks header path,class,split");
  }
  DatasetIndex index;
  index.split = which;
  index.class_names = class_names;
  std::set<std::string> seen;
  std::vector<std::pair<std::string, std::string>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 3) {
      throw DataError("manifest '" + file.string() + "' line " + std::to_string(line_no) +
                      ": expected 3 fields");
    }
    parse_split(f[2]);
    if (which != Split::kAll && parse_split(f[2]) != which) continue;
    rows.emplace_back(f[0], f[1]);
    seen.insert(f[1]);
  }
  if (index.class_names.empty()) index.class_names.assign(seen.begin(), seen.end());
  for (auto& [path, cls] : rows) {
    auto it = std::find(index.class_names.begin(), index.class_names.end(), cls);
    if (it == index.class_names.end()) {
      throw DataError("manifest class '" + cls + "' is not a known class");
    }
    index.samples.push_back(
        {fs::path(path), static_cast<std::size_t>(it - index.class_names.begin())});
  }
  return index;
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3 || height == 0 || width == 0) {
    throw ShapeError("resize_bilinear expects H x W x C input and positive target");
  }
  const std::size_t ih = image.dim(0), iw = image.dim(1), c = image.dim(2);
  if (ih == height && iw == width) return image.detach();
  auto src = image.values();
  std::vector<double> out(height * width * c);
  auto axis = [](std::size_t dst, std::size_t in, std::size_t outn) {
    double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) /
                   static_cast<double>(outn) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(s));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    return std::tuple<std::size_t, std::size_t, double>{i0, i1, s - static_cast<double>(i0)};
  };
  for (std::size_t y = 0; y < height; ++y) {
    const auto [y0, y1, wy] = axis(y, ih, height);
    for (std::size_t x = 0; x < width; ++x) {
      const auto [x0, x1, wx] = axis(x, iw, width);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double a = src[(y0 * iw + x0) * c + ch];
        const double b = src[(y0 * iw + x1) * c + ch];
        const double d = src[(y1 * iw + x0) * c + ch];
        const double e = src[(y1 * iw + x1) * c + ch];
        out[(y * width + x) * c + ch] =
            (1 - wy) * ((1 - wx) * a + wx * b) + wy * ((1 - wx) * d + wx * e);
      }
    }
  }
  return Tensor({height, width, c}, std::move(out));
}

bool is_feature_file(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return ext == ".fant";
}

Tensor load_and_preprocess(const fs::path& path, std::size_t height, std::size_t width) {
  Image img = decode_image(path);
  Tensor t({img.height, img.width, img.channels}, std::move(img.pixels));
  Tensor resized = resize_bilinear(t, height, width);
  auto v = resized.values();
  std::vector<double> rgb(height * width * 3);
  const std::size_t c = resized.dim(2);
  for (std::size_t p = 0; p < height * width; ++p) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      rgb[p * 3 + ch] = std::clamp(v[p * c + (c == 1 ? 0 : ch)], 0.0, 1.0);
    }
  }
  return Tensor({height, width, 3}, std::move(rgb));
}

void AugmentConfig::validate() const {
  if (rotation_deg < 0 || shift < 0 || zoom < 0) {
    throw ConfigError("augmentation ranges must be non-negative");
  }
  if (zoom >= 1.0) throw ConfigError("augmentation zoom range must be < 1");
  if (flip_prob < 0 || flip_prob > 1) {
    throw ConfigError("augmentation flip probability must lie in [0, 1]");
  }
}

AugmentDraw draw_augmentation(const AugmentConfig& cfg, std::uint64_t stream_seed) {
  Rng rng(derive_seed(cfg.seed, {stream_seed}));
  AugmentDraw d;
  d.rotation_deg = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg);
  d.shift_y = rng.uniform(-cfg.shift, cfg.shift);
  d.shift_x = rng.uniform(-cfg.shift, cfg.shift);
  d.zoom = rng.uniform(1.0 - cfg.zoom, 1.0 + cfg.zoom);
  d.flip = rng.uniform() < cfg.flip_prob;
  return d;
}

Tensor apply_augmentation(const Tensor& image, const AugmentDraw& draw) {
  if (image.rank() != 3) throw ShapeError("augment expects an H x W x C image");
  if (draw.rotation_deg == 0.0 && draw.shift_x == 0.0 && draw.shift_y == 0.0 &&
      draw.zoom == 1.0 && !draw.flip) {
    return image.detach();
  }
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double theta = draw.rotation_deg * std::acos(-1.0) / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double ty = draw.shift_y * static_cast<double>(h);
  const double tx = draw.shift_x * static_cast<double>(w);
  auto src = image.values();
  std::vector<double> out(image.size(), 0.0);
  auto at = [&](std::ptrdiff_t y, std::ptrdiff_t x, std::size_t ch) {
    if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) ||
        x >= static_cast<std::ptrdiff_t>(w)) {
      return 0.0;
    }
    return src[(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * c + ch];
  };
  for (std::size_t oy = 0; oy < h; ++oy) {
    for (std::size_t ox = 0; ox < w; ++ox) {
      // Undo flip, zoom, shift, rotation in that order.
      double x = static_cast<double>(ox) - cx;
      double y = static_cast<double>(oy) - cy;
      if (draw.flip) x = -x;
      x /= draw.zoom;
      y /= draw.zoom;
      x -= tx;
      y -= ty;
      // Forward rotation is x' = x cos + y sin, y' = -x sin + y cos.
      const double sx = x * cs - y * sn + cx;
      const double sy = x * sn + y * cs + cy;
      const double fy = std::floor(sy), fx = std::floor(sx);
      const double wy = sy - fy, wx = sx - fx;
      const auto y0 = static_cast<std::ptrdiff_t>(fy);
      const auto x0 = static_cast<std::ptrdiff_t>(fx);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = (1 - wy) * ((1 - wx) * at(y0, x0, ch) + wx * at(y0, x0 + 1, ch)) +
                         wy * ((1 - wx) * at(y0 + 1, x0, ch) + wx * at(y0 + 1, x0 + 1, ch));
        out[(oy * w + ox) * c + ch] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return Tensor(image.shape(), std::move(out));
}

Tensor augment(const Tensor& image, const AugmentConfig& cfg, std::uint64_t stream_seed) {
  return apply_augmentation(image, draw_augmentation(cfg, stream_seed));
}

std::vector<std::vector<std::size_t>> plan_batches(std::size_t count,
                                                   std::size_t batch_size,
                                                   std::optional<std::uint64_t> seed) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (count == 0) throw DataError("cannot batch an empty index");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (seed) {
    Rng rng(*seed);
    shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> plans;
  for (std::size_t i = 0; i < count; i += batch_size) {
    plans.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                       order.begin() + static_cast<std::ptrdiff_t>(std::min(count, i + batch_size)));
  }
  return plans;
}

ImageLoader::ImageLoader(std::size_t height, std::size_t width, bool cache)
    : height_(height), width_(width), cache_(cache) {}

Tensor ImageLoader::load(const fs::path& path) {
  if (cache_) {
    auto it = memo_.find(path);
    if (it != memo_.end()) return it->second;
  }
  Tensor t;
  if (is_feature_file(path)) {
    Tensor f = load_feature_file(path);
    if (f.dim(0) != 1 || f.dim(1) != height_ || f.dim(2) != width_) {
      throw DataError("feature file '" + path.string() + "' has shape " + to_string(f.shape()) +
                      ", expected 1x" + std::to_string(height_) + "x" + std::to_string(width_) +
                      "xC");
    }
    t = reshape(f, {f.dim(1), f.dim(2), f.dim(3)});
  } else {
    t = load_and_preprocess(path, height_, width_);
  }
  if (cache_) memo_.emplace(path, t);
  return t;
}

Tensor stack_images(const std::vector<Tensor>& images) {
  if (images.empty()) throw ShapeError("stack_images: no images");
  const Shape& s = images.front().shape();
  std::vector<double> v;
  v.reserve(images.size() * images.front().size());
  for (const Tensor& img : images) {
    if (img.shape() != s) throw ShapeError("stack_images: inconsistent image shapes");
    v.insert(v.end(), img.values().begin(), img.values().end());
  }
  Shape out{images.size()};
  out.insert(out.end(), s.begin(), s.end());
  return Tensor(std::move(out), std::move(v));
}

BatchIterator::BatchIterator(const DatasetIndex& index, std::size_t batch_size,
                             std::optional<std::uint64_t> shuffle_seed,
                             ImageLoader& loader, std::optional<AugmentConfig> augment,
                             std::uint64_t epoch)
    : index_(index), loader_(loader), augment_(std::move(augment)), epoch_(epoch) {
  std::optional<std::uint64_t> seed;
  if (shuffle_seed) seed = derive_seed(*shuffle_seed, {epoch});
  plans_ = plan_batches(index.size(), batch_size, seed);
  if (index.split != Split::kTrain) augment_.reset();
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= plans_.size()) return std::nullopt;
  const auto& plan = plans_[cursor_++];
  Batch b;
  std::vector<Tensor> images;
  images.reserve(plan.size());
  for (std::size_t i : plan) {
    const Sample& s = index_.samples[i];
    Tensor img = loader_.load(s.path);
    if (augment_ && !is_feature_file(s.path)) {
      img = augment(img, *augment_, derive_seed(epoch_, {i}));
    }
    images.push_back(std::move(img));
    b.labels.push_back(s.label);
    b.sample_indices.push_back(i);
  }
  b.images = stack_images(images);
  return b;
}

}  // namespace fanet
