#include "synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <vector>

#include "fanet/errors.hpp"
#include "fanet/image_io.hpp"
#include "fanet/random.hpp"

namespace fanet::cli {

void write_synthetic_dataset(const std::filesystem::path& root, std::size_t per_class,
                             std::size_t size, std::uint64_t seed) {
  if (per_class == 0 || size == 0) {
    throw ConfigError("synthetic dataset needs at least one image of positive size");
  }
  struct Band {
    const char* name;
    double lo, hi;
  };
  const Band bands[] = {{"bright", 0.6, 0.9}, {"dark", 0.1, 0.4}};
  for (std::size_t c = 0; c < 2; ++c) {
    const auto dir = root / bands[c].name;
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < per_class; ++i) {
      Rng rng(derive_seed(seed, {c, i}));
      std::vector<std::uint8_t> px(size * size);
      for (auto& p : px) {
        p = static_cast<std::uint8_t>(std::lround(255.0 * rng.uniform(bands[c].lo, bands[c].hi)));
      }
      char name[32];
      std::snprintf(name, sizeof(name), "%03zu.pgm", i);
      write_pgm(dir / name, size, size, px);
    }
  }
}

}  // namespace fanet::cli
