#pragma once

// Single-channel float rasters and their file formats.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <png.h>

#include "wire4d/error.hpp"

namespace wire4d {

struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // row-major

  ImageBuffer() = default;
  ImageBuffer(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {
    if (w < 0 || h < 0) throw DomainError("image size must be non-negative");
  }

  std::size_t size() const { return data.size(); }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x);
  }
  double& at(int x, int y) { return data[index(x, y)]; }
  double at(int x, int y) const { return data[index(x, y)]; }

  bool same_shape(const ImageBuffer& o) const { return width == o.width && height == o.height; }

  double sum() const {
    double s = 0.0;
    for (double v : data) s += v;
    return s;
  }

  bool operator==(const ImageBuffer&) const = default;
};

/// Writes an 8-bit grayscale PNG; `ink_on_white` maps value v to 255 * (1 - v).
inline void write_png(const std::filesystem::path& path, const ImageBuffer& image, bool ink_on_white = true) {
  std::vector<std::uint8_t> bytes(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    double v = std::clamp(image.data[i], 0.0, 1.0);
    if (ink_on_white) v = 1.0 - v;
    bytes[i] = static_cast<std::uint8_t>(std::lround(255.0 * v));
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
    throw InputError("cannot write PNG " + path.string() + ": " + png.message);
  }
}

/// Reads any PNG as grayscale in [0, 1] (bright = 1).
inline ImageBuffer read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
    throw InputError("cannot read PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr)) {
    throw InputError("cannot decode PNG " + path.string() + ": " + png.message);
  }
  ImageBuffer out(static_cast<int>(png.width), static_cast<int>(png.height));
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = bytes[i] / 255.0;
  return out;
}

namespace detail {

inline void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32_le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

/// Row-major little-endian float32 payload.
inline std::vector<std::uint8_t> encode_float32(const ImageBuffer& image) {
  std::vector<std::uint8_t> out;
  out.reserve(4 * image.size());
  for (double v : image.data) {
    const float f = static_cast<float>(v);
    std::uint32_t bits = 0;
    std::memcpy(&bits, &f, 4);
    detail::put_u32_le(out, bits);
  }
  return out;
}

inline ImageBuffer decode_float32(const std::uint8_t* bytes, std::size_t length, int width, int height) {
  ImageBuffer out(width, height);
  if (length != 4 * out.size()) throw DomainError("float32 payload size does not match image size");
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::uint32_t bits = detail::get_u32_le(bytes + 4 * i);
    float f = 0.0f;
    std::memcpy(&f, &bits, 4);
    out.data[i] = f;
  }
  return out;
}

/// Float buffer file: width, height as little-endian int32, then float32 data.
inline void write_float_buffer(const std::filesystem::path& path, const ImageBuffer& image) {
  std::vector<std::uint8_t> bytes;
  detail::put_u32_le(bytes, static_cast<std::uint32_t>(image.width));
  detail::put_u32_le(bytes, static_cast<std::uint32_t>(image.height));
  const auto payload = encode_float32(image);
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline ImageBuffer read_float_buffer(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw InputError(path.string() + ": truncated float buffer header");
  const auto w = static_cast<std::int32_t>(detail::get_u32_le(bytes.data()));
  const auto h = static_cast<std::int32_t>(detail::get_u32_le(bytes.data() + 4));
  if (w < 0 || h < 0) throw InputError(path.string() + ": negative dimensions");
  try {
    return decode_float32(bytes.data() + 8, bytes.size() - 8, w, h);
  } catch (const DomainError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

/// Mask or target image from PNG or float buffer (.bin / .f32).
inline ImageBuffer read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InputError("missing file " + path.string());
  const auto ext = path.extension().string();
  if (ext == ".png" || ext == ".PNG") return read_png(path);
  return read_float_buffer(path);
}

}  // namespace wire4d
