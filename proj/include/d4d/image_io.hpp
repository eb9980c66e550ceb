#pragma once

// Frame export: 8-bit PNG through libpng, and the raw displacement format
//   "D4DD" | u32 version | u32 W | u32 H | u32 T | W*H*T*3 f32
// all little-endian, row-major within a frame, frames in order.

#include "d4d/core.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace d4d {

struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<double> data;  // H x W x channels in [0, 1]
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

inline std::uint8_t to_byte(double v) {
  if (!(v > 0.0)) return 0;  // also maps NaN to 0
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

}  // namespace detail

inline void write_png(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw UsageError("write_png: 1 or 3 channels");
  if (img.data.size() != std::size_t(img.width) * img.height * img.channels)
    throw UsageError("write_png: data size mismatch");
  std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed");
  }
  std::vector<std::uint8_t> row(std::size_t(img.width) * img.channels);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing '" + path + "'");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, img.width, img.height, 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    for (std::size_t i = 0; i < row.size(); ++i)
      row[i] = detail::to_byte(img.data[std::size_t(y) * row.size() + i]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads any PNG as 8-bit RGB (channels = 3) or grayscale (channels = 1).
inline Image read_png(const std::string& path, int channels = 3) {
  if (channels != 1 && channels != 3) throw UsageError("read_png: 1 or 3 channels");
  png_image im;
  std::memset(&im, 0, sizeof im);
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.c_str()))
    throw IoError("cannot read PNG '" + path + "': " + im.message);
  im.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&im);
    throw IoError("cannot decode PNG '" + path + "': " + im.message);
  }
  Image out;
  out.width = static_cast<int>(im.width);
  out.height = static_cast<int>(im.height);
  out.channels = channels;
  out.data.resize(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) out.data[i] = buf[i] / 255.0;
  return out;
}

// ---------------------------------------------------------------------------
// Raw displacement video.

inline constexpr char kDisplacementMagic[4] = {'D', '4', 'D', 'D'};
inline constexpr std::uint32_t kDisplacementVersion = 1;

struct DisplacementVideo {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t frames = 0;
  std::vector<float> data;  // T x H x W x 3
};

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}

inline void put_f32(std::string& s, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(s, bits);
}

inline float get_f32(const unsigned char* p) {
  const std::uint32_t bits = get_u32(p);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace detail

inline std::string encode_displacement(const DisplacementVideo& v) {
  if (v.data.size() != std::size_t(v.width) * v.height * v.frames * 3)
    throw UsageError("displacement video: data size mismatch");
  std::string s(kDisplacementMagic, 4);
  detail::put_u32(s, kDisplacementVersion);
  detail::put_u32(s, v.width);
  detail::put_u32(s, v.height);
  detail::put_u32(s, v.frames);
  s.reserve(s.size() + 4 * v.data.size());
  for (float f : v.data) detail::put_f32(s, f);
  return s;
}

inline DisplacementVideo decode_displacement(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 20) throw LengthError("displacement file shorter than its header");
  if (std::memcmp(p, kDisplacementMagic, 4) != 0) throw FormatError("not a D4DD displacement file");
  if (detail::get_u32(p + 4) != kDisplacementVersion)
    throw FormatError("unsupported displacement file version");
  DisplacementVideo v;
  v.width = detail::get_u32(p + 8);
  v.height = detail::get_u32(p + 12);
  v.frames = detail::get_u32(p + 16);
  const std::size_t n = std::size_t(v.width) * v.height * v.frames * 3;
  if (bytes.size() != 20 + 4 * n) throw LengthError("displacement payload length mismatch");
  v.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) v.data[i] = detail::get_f32(p + 20 + 4 * i);
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

inline void write_displacement(const std::string& path, const DisplacementVideo& v) {
  write_file(path, encode_displacement(v));
}

inline DisplacementVideo read_displacement(const std::string& path) {
  return decode_displacement(read_file(path));
}

}  // namespace d4d
