#include "elcell/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace elcell {

float GrayImage::sample(double x, double y) const {
  x = std::clamp(x, 0.0, static_cast<double>(width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(height - 1));
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double v00 = at(x0, y0), v10 = at(x1, y0), v01 = at(x0, y1), v11 = at(x1, y1);
  return static_cast<float>((v00 * (1 - fx) + v10 * fx) * (1 - fy) +
                            (v01 * (1 - fx) + v11 * fx) * fy);
}

double Field::sample(double x, double y) const {
  x = std::clamp(x, 0.0, static_cast<double>(width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(height - 1));
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  return (at(x0, y0) * (1 - fx) + at(x1, y0) * fx) * (1 - fy) +
         (at(x0, y1) * (1 - fx) + at(x1, y1) * fx) * fy;
}

size_t BinaryMask::count() const {
  size_t n = 0;
  for (uint8_t v : data) n += (v != 0);
  return n;
}

}  // namespace elcell

namespace elcell::io {
namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

GrayImage read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw Error("cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw Error("libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("failed to decode PNG " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (depth == 16) png_set_swap(png);  // little-endian rows
  png_read_update_info(png, info);
  depth = png_get_bit_depth(png, info);

  GrayImage img(static_cast<int>(w), static_cast<int>(h));
  std::vector<uint8_t> row(png_get_rowbytes(png, info));
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    if (depth == 16) {
      const uint16_t* r16 = reinterpret_cast<const uint16_t*>(row.data());
      for (png_uint_32 x = 0; x < w; ++x) img.at(x, y) = r16[x] / 65535.f;
    } else {
      for (png_uint_32 x = 0; x < w; ++x) img.at(x, y) = row[x] / 255.f;
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

uint32_t get_u32(const uint8_t* p, bool le) {
  return le ? (p[0] | p[1] << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24)
            : (uint32_t(p[0]) << 24 | uint32_t(p[1]) << 16 | p[2] << 8 | p[3]);
}
uint16_t get_u16(const uint8_t* p, bool le) {
  return le ? uint16_t(p[0] | p[1] << 8) : uint16_t(p[0] << 8 | p[1]);
}

// Minimal baseline TIFF: single-channel, uncompressed, strip layout.
GrayImage read_tiff(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 8) throw Error("truncated TIFF " + path);
  const bool le = buf[0] == 'I';
  uint32_t ifd = get_u32(buf.data() + 4, le);
  if (ifd + 2 > buf.size()) throw Error("bad TIFF IFD offset");

  uint32_t width = 0, height = 0, bits = 1, compression = 1, rows_per_strip = 0xffffffff;
  uint16_t samples = 1;
  std::vector<uint32_t> strip_offsets, strip_counts;

  const uint16_t n_entries = get_u16(buf.data() + ifd, le);
  for (uint16_t i = 0; i < n_entries; ++i) {
    const uint8_t* e = buf.data() + ifd + 2 + 12 * i;
    const uint16_t tag = get_u16(e, le);
    const uint16_t type = get_u16(e + 2, le);
    const uint32_t count = get_u32(e + 4, le);
    auto value_at = [&](uint32_t idx) -> uint32_t {
      const uint32_t elem = (type == 3) ? 2 : 4;
      const uint8_t* base = (count * elem <= 4) ? e + 8 : buf.data() + get_u32(e + 8, le);
      const uint8_t* p = base + idx * elem;
      return (type == 3) ? get_u16(p, le) : get_u32(p, le);
    };
    switch (tag) {
      case 256: width = value_at(0); break;
      case 257: height = value_at(0); break;
      case 258: bits = value_at(0); break;
      case 259: compression = value_at(0); break;
      case 273:
        strip_offsets.resize(count);
        for (uint32_t k = 0; k < count; ++k) strip_offsets[k] = value_at(k);
        break;
      case 277: samples = static_cast<uint16_t>(value_at(0)); break;
      case 278: rows_per_strip = value_at(0); break;
      case 279:
        strip_counts.resize(count);
        for (uint32_t k = 0; k < count; ++k) strip_counts[k] = value_at(k);
        break;
      default: break;
    }
  }
  if (width == 0 || height == 0 || strip_offsets.empty())
    throw Error("unsupported TIFF layout in " + path);
  if (compression != 1) throw Error("only uncompressed TIFF supported: " + path);
  if (samples != 1 || (bits != 8 && bits != 16))
    throw Error("only 8/16-bit grayscale TIFF supported: " + path);

  GrayImage img(static_cast<int>(width), static_cast<int>(height));
  const uint32_t bytes_per_px = bits / 8;
  uint32_t row = 0;
  for (size_t s = 0; s < strip_offsets.size() && row < height; ++s) {
    const uint8_t* p = buf.data() + strip_offsets[s];
    const uint32_t rows_here = std::min(rows_per_strip, height - row);
    for (uint32_t r = 0; r < rows_here; ++r, ++row) {
      for (uint32_t x = 0; x < width; ++x) {
        const uint8_t* px = p + (static_cast<size_t>(r) * width + x) * bytes_per_px;
        img.at(static_cast<int>(x), static_cast<int>(row)) =
            (bits == 16) ? get_u16(px, le) / 65535.f : px[0] / 255.f;
      }
    }
  }
  return img;
}

}  // namespace

GrayImage read_image(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  uint8_t magic[4] = {0, 0, 0, 0};
  f.read(reinterpret_cast<char*>(magic), 4);
  f.close();
  if (magic[0] == 0x89 && magic[1] == 'P') return read_png(path);
  if ((magic[0] == 'I' && magic[1] == 'I') || (magic[0] == 'M' && magic[1] == 'M'))
    return read_tiff(path);
  throw Error("unrecognized image format: " + path);
}

void write_png(const std::string& path, const GrayImage& img, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw Error("bit depth must be 8 or 16");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error("cannot write " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw Error("libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("failed to encode PNG " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, bit_depth, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);

  if (bit_depth == 16) {
    std::vector<uint16_t> row(img.width);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x)
        row[x] = static_cast<uint16_t>(std::lround(std::clamp(img.at(x, y), 0.f, 1.f) * 65535.f));
      png_write_row(png, reinterpret_cast<png_bytep>(row.data()));
    }
  } else {
    std::vector<uint8_t> row(img.width);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x)
        row[x] = static_cast<uint8_t>(std::lround(std::clamp(img.at(x, y), 0.f, 1.f) * 255.f));
      png_write_row(png, row.data());
    }
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_png(const std::string& path, const BinaryMask& mask) {
  GrayImage img(mask.width, mask.height);
  for (size_t i = 0; i < mask.data.size(); ++i) img.data[i] = mask.data[i] ? 1.f : 0.f;
  write_png(path, img, 8);
}

}  // namespace elcell::io
