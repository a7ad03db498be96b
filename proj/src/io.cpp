#include "gflow/io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "gflow/error.hpp"

namespace gflow {

namespace {

constexpr std::array<char, 4> kTensorMagic{'G', 'F', 'T', '1'};
constexpr std::string_view kModule = "core-data";

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw Error(ErrorCode::DimMismatch, kModule, "truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::Io, kModule, "cannot write " + path.string());
  return os;
}

struct FileCloser {
  void operator()(FILE* f) const { if (f) std::fclose(f); }
};

}  // namespace

void save_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  auto os = open_out(path);
  os.write(kTensorMagic.data(), 4);
  const int rank = tensor.rank();
  const auto rank_byte = static_cast<char>(rank);
  os.write(&rank_byte, 1);
  put_u32(os, static_cast<std::uint32_t>(tensor.height()));
  put_u32(os, static_cast<std::uint32_t>(tensor.width()));
  if (rank == 3) put_u32(os, static_cast<std::uint32_t>(tensor.channels()));
  std::vector<unsigned char> payload(tensor.size() * 4);
  for (std::size_t i = 0; i < tensor.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(tensor[i]);
    for (int k = 0; k < 4; ++k) payload[4 * i + k] = static_cast<unsigned char>(bits >> (8 * k));
  }
  os.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!os) throw Error(ErrorCode::Io, kModule, "write failed: " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, kModule, "missing file " + path.string());
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kTensorMagic)
    throw Error(ErrorCode::BadMagic, kModule, path.string());
  char rank_byte = 0;
  if (!is.read(&rank_byte, 1)) throw Error(ErrorCode::DimMismatch, kModule, "truncated header");
  const int rank = static_cast<unsigned char>(rank_byte);
  if (rank != 2 && rank != 3)
    throw Error(ErrorCode::DimMismatch, kModule, "unsupported rank " + std::to_string(rank));
  const auto h = get_u32(is);
  const auto w = get_u32(is);
  const std::uint32_t c = rank == 3 ? get_u32(is) : 1;
  if (h == 0 || w == 0 || c == 0 || h > (1u << 16) || w > (1u << 16) || c > 64)
    throw Error(ErrorCode::DimMismatch, kModule, "implausible dims in " + path.string());
  Tensor t(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
  t.set_rank(rank);
  std::vector<unsigned char> payload(t.size() * 4);
  if (!is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size())))
    throw Error(ErrorCode::DimMismatch, kModule, "payload shorter than declared dims: " + path.string());
  is.peek();
  if (!is.eof()) throw Error(ErrorCode::DimMismatch, kModule, "trailing bytes after payload: " + path.string());
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(payload[4 * i + k]) << (8 * k);
    const float v = std::bit_cast<float>(bits);
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteData, kModule, path.string());
    t[i] = v;
  }
  return t;
}

Image load_png(const std::filesystem::path& path) {
  std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw Error(ErrorCode::Io, kModule, "missing file " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::BadMagic, kModule, "not a readable PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_packing(png);
  png_set_expand(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int ch = png_get_channels(png, info);
  std::vector<png_byte> buf(static_cast<std::size_t>(w) * h * ch);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buf.data() + static_cast<std::size_t>(y) * w * ch;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const int src = ch >= 3 ? c : 0;
        img(y, x, c) = buf[(static_cast<std::size_t>(y) * w + x) * ch + src] / 255.0;
      }
  return img;
}

namespace {

void write_png(const std::filesystem::path& path, int w, int h, int channels,
               const std::vector<png_byte>& buf) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error(ErrorCode::Io, kModule, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::Io, kModule, "png write failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y)
    png_write_row(png, const_cast<png_bytep>(buf.data() + static_cast<std::size_t>(y) * w * channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

png_byte to_byte(double v) {
  return static_cast<png_byte>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void save_png(const std::filesystem::path& path, const Image& img) {
  const int ch = img.channels() >= 3 ? 3 : 1;
  std::vector<png_byte> buf(img.pixels() * ch);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < ch; ++c)
        buf[(static_cast<std::size_t>(y) * img.width() + x) * ch + c] = to_byte(img(y, x, c));
  write_png(path, img.width(), img.height(), ch, buf);
}

Mask load_mask_png(const std::filesystem::path& path) {
  const Image img = load_png(path);
  Mask m(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) m(y, x) = img(y, x, 0) > 0.5 ? 1 : 0;
  return m;
}

void save_mask_png(const std::filesystem::path& path, const Mask& mask) {
  std::vector<png_byte> buf(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) buf[i] = mask[i] ? 255 : 0;
  write_png(path, mask.width(), mask.height(), 1, buf);
}

void save_heatmap_png(const std::filesystem::path& path, const Image& map) {
  double mx = 0.0;
  for (double v : map.data()) mx = std::max(mx, v);
  Image g(map.height(), map.width());
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < map.width(); ++x) g(y, x) = mx > 0 ? map(y, x, 0) / mx : 0.0;
  save_png(path, g);
}

Image load_image(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".gft") return to_image(load_tensor(path));
  return load_png(path);
}

}  // namespace gflow
