#include "fanet/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include <zlib.h>

namespace fanet {
namespace {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

constexpr char kMagic[4] = {'F', 'A', 'N', 'T'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t end) : bytes_(b), end_(end) {}

  template <typename T>
  T get() {
    T v;
    take(&v, sizeof(T));
    return v;
  }
  void take(void* out, std::size_t n) {
    if (n > end_ - pos_) throw CorruptContainerError("container truncated");
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return end_ - pos_; }
  void seek(std::size_t p) { pos_ = p; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

}  // namespace

std::vector<std::uint8_t> encode_container(const std::vector<ContainerEntry>& entries) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kContainerVersion);
  const std::size_t crc_start = w.bytes.size();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  std::set<std::string> seen;
  for (const ContainerEntry& e : entries) {
    if (!seen.insert(e.name).second) {
      throw Error("container: duplicate entry name '" + e.name + "'");
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(e.name.size()));
    w.put_bytes(e.name.data(), e.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.dtype));
    const Shape& shape = e.tensor.shape();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) w.put<std::uint64_t>(d);
    for (double v : e.tensor.values()) {
      if (e.dtype == DType::kF32) {
        w.put<float>(static_cast<float>(v));
      } else {
        w.put<double>(v);
      }
    }
  }
  const std::uint32_t crc = crc_of(w.bytes.data() + crc_start, w.bytes.size() - crc_start);
  w.put<std::uint32_t>(crc);
  return std::move(w.bytes);
}

std::vector<ContainerEntry> decode_container(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 + 4 + 4 + 4) throw CorruptContainerError("container truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CorruptContainerError("container: bad magic (expected \"FANT\")");
  }
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kContainerVersion) {
    throw CorruptContainerError("container: unsupported version " +
                                std::to_string(version));
  }
  const std::size_t crc_start = 8, crc_pos = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + crc_pos, 4);
  if (crc_of(bytes.data() + crc_start, crc_pos - crc_start) != stored) {
    throw CorruptContainerError("container: CRC-32 mismatch");
  }

  Reader r(bytes, crc_pos);
  r.seek(crc_start);
  const auto count = r.get<std::uint32_t>();
  std::vector<ContainerEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    ContainerEntry e;
    const auto name_len = r.get<std::uint32_t>();
    if (name_len > r.remaining()) throw CorruptContainerError("container truncated");
    e.name.resize(name_len);
    r.take(e.name.data(), name_len);
    const auto tag = r.get<std::uint8_t>();
    if (tag != static_cast<std::uint8_t>(DType::kF32) &&
        tag != static_cast<std::uint8_t>(DType::kF64)) {
      throw CorruptContainerError("container: unknown dtype tag " + std::to_string(tag));
    }
    e.dtype = static_cast<DType>(tag);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 16) throw CorruptContainerError("container: implausible rank");
    Shape shape(rank);
    std::size_t n = 1;
    const std::size_t width = e.dtype == DType::kF32 ? 4 : 8;
    for (auto& d : shape) {
      d = r.get<std::uint64_t>();
      if (d != 0 && n > r.remaining() / width / d) {
        throw CorruptContainerError("container truncated");
      }
      n *= d;
    }
    std::vector<double> values(n);
    for (double& v : values) {
      v = e.dtype == DType::kF32 ? static_cast<double>(r.get<float>()) : r.get<double>();
    }
    e.tensor = Tensor(std::move(shape), std::move(values));
    entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw CorruptContainerError("container: trailing bytes");
  return entries;
}

void write_container(const std::filesystem::path& path,
                     const std::vector<ContainerEntry>& entries) {
  const auto bytes = encode_container(entries);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

std::vector<ContainerEntry> read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

}  // namespace fanet
