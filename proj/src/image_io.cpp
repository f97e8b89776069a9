#include "fanet/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <optional>
#include <string>

#include <jpeglib.h>
#include <png.h>

namespace fanet {
namespace {

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

Image decode_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw DataError("cannot decode PNG '" + path.string() + "': " + png.message);
  }
  const bool gray = (png.format & PNG_FORMAT_FLAG_COLOR) == 0;
  png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw DataError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  Image img;
  img.height = png.height;
  img.width = png.width;
  img.channels = gray ? 1 : 3;
  img.pixels.resize(buffer.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) img.pixels[i] = buffer[i] / 255.0;
  return img;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

Image decode_jpeg(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> file(std::fopen(path.c_str(), "rb"),
                                                        &std::fclose);
  if (!file) throw DataError("cannot open '" + path.string() + "'");
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  Image img;
  std::vector<std::uint8_t> buffer;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DataError("cannot decode JPEG '" + path.string() + "': " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  img.height = cinfo.output_height;
  img.width = cinfo.output_width;
  img.channels = static_cast<std::size_t>(cinfo.output_components);
  const std::size_t stride = img.width * img.channels;
  buffer.resize(stride * img.height);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = buffer.data() + cinfo.output_scanline * stride;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  img.pixels.resize(buffer.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) img.pixels[i] = buffer[i] / 255.0;
  return img;
}

// Reads the next header token, skipping whitespace and '#' comments.
bool pgm_token(std::istream& in, std::string& tok) {
  tok.clear();
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (!std::isspace(c)) break;
  }
  if (c == EOF) return false;
  tok.push_back(static_cast<char>(c));
  while ((c = in.peek()) != EOF && !std::isspace(c) && c != '#') {
    tok.push_back(static_cast<char>(in.get()));
  }
  return true;
}

std::optional<unsigned long> parse_uint(const std::string& tok) {
  unsigned long v = 0;
  const auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || end != tok.data() + tok.size()) return std::nullopt;
  return v;
}

Image decode_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  auto fail = [&](const std::string& why) {
    return DataError("cannot decode PGM '" + path.string() + "': " + why);
  };
  std::string magic, ws, hs, ms;
  if (!pgm_token(in, magic) || (magic != "P5" && magic != "P2")) throw fail("bad magic");
  if (!pgm_token(in, ws) || !pgm_token(in, hs) || !pgm_token(in, ms)) {
    throw fail("truncated header");
  }
  const auto w = parse_uint(ws), h = parse_uint(hs), mv = parse_uint(ms);
  if (!w || !h || !mv) throw fail("malformed header");
  if (*w == 0 || *h == 0 || *mv == 0 || *mv > 65535 || *w > (1u << 16) || *h > (1u << 16)) {
    throw fail("invalid header values");
  }
  Image img;
  img.width = *w;
  img.height = *h;
  const unsigned long maxval = *mv;
  img.channels = 1;
  const std::size_t n = img.width * img.height;
  img.pixels.resize(n);
  const double scale = 1.0 / static_cast<double>(maxval);
  if (magic == "P5") {
    in.get();  // single whitespace after maxval
    const std::size_t width = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> raw(n * width);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw fail("truncated pixel data");
    for (std::size_t i = 0; i < n; ++i) {
      const unsigned v = width == 1 ? raw[i] : (raw[2 * i] << 8) | raw[2 * i + 1];
      img.pixels[i] = std::min(1.0, v * scale);
    }
  } else {
    std::string tok;
    for (std::size_t i = 0; i < n; ++i) {
      if (!pgm_token(in, tok)) throw fail("truncated pixel data");
      const auto v = parse_uint(tok);
      if (!v || *v > maxval) throw fail("bad sample '" + tok + "'");
      img.pixels[i] = static_cast<double>(*v) * scale;
    }
  }
  return img;
}

}  // namespace

bool is_supported_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".pgm";
}

Image decode_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return decode_png(path);
  if (ext == ".jpg" || ext == ".jpeg") return decode_jpeg(path);
  if (ext == ".pgm") return decode_pgm(path);
  throw DataError("unsupported image format '" + path.string() + "'");
}

void write_pgm(const std::filesystem::path& path, std::size_t height,
               std::size_t width, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

void write_pgm(const std::filesystem::path& path, const Tensor& gray) {
  if (gray.rank() != 2) {
    throw ShapeError("write_pgm expects an H x W tensor, got " + to_string(gray.shape()));
  }
  std::vector<std::uint8_t> bytes(gray.size());
  auto v = gray.values();
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v[i], 0.0, 1.0) * 255.0));
  }
  write_pgm(path, gray.dim(0), gray.dim(1), bytes);
}

}  // namespace fanet
