#pragma once

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace cenlab {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> px;  // row-major, [0,1] for observations

  Image() = default;
  Image(int w, int h) : width(w), height(h), px(static_cast<size_t>(w) * h, 0.0f) {}

  float& at(int x, int y) { return px[static_cast<size_t>(y) * width + x]; }
  float at(int x, int y) const { return px[static_cast<size_t>(y) * width + x]; }
  size_t size() const { return px.size(); }

  bool operator==(const Image&) const = default;
};

inline uint8_t quantize8(float v) {
  float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

namespace detail {

inline void fwrite_all(std::FILE* f, const void* p, size_t n, const std::string& path) {
  if (std::fwrite(p, 1, n, f) != n) {
    std::fclose(f);
    throw std::runtime_error("short write: " + path);
  }
}

inline void put_be32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x >> 24));
  v.push_back(static_cast<uint8_t>(x >> 16));
  v.push_back(static_cast<uint8_t>(x >> 8));
  v.push_back(static_cast<uint8_t>(x));
}

inline void png_chunk(std::vector<uint8_t>& out, const char type[5],
                      const std::vector<uint8_t>& data) {
  put_be32(out, static_cast<uint32_t>(data.size()));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = static_cast<uint32_t>(
      ::crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
  put_be32(out, crc);
}

}  // namespace detail

// Minimal PNG encoder: 8-bit, filter 0 scanlines, one zlib-compressed IDAT.
// channels: 1 = grayscale, 3 = RGB. `data` is row-major, w*h*channels bytes.
inline void write_png(const std::string& path, int w, int h, int channels,
                      const std::vector<uint8_t>& data) {
  if (channels != 1 && channels != 3) throw std::invalid_argument("channels must be 1 or 3");
  if (data.size() != static_cast<size_t>(w) * h * channels)
    throw std::invalid_argument("png data size mismatch");

  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(h) * (1 + static_cast<size_t>(w) * channels));
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);  // filter: none
    const uint8_t* row = data.data() + static_cast<size_t>(y) * w * channels;
    raw.insert(raw.end(), row, row + static_cast<size_t>(w) * channels);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> zbuf(bound);
  if (compress2(zbuf.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("zlib compress failed");
  zbuf.resize(bound);

  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<uint8_t> ihdr;
  detail::put_be32(ihdr, static_cast<uint32_t>(w));
  detail::put_be32(ihdr, static_cast<uint32_t>(h));
  ihdr.push_back(8);
  ihdr.push_back(channels == 1 ? 0 : 2);
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", zbuf);
  detail::png_chunk(out, "IEND", {});

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path);
  detail::fwrite_all(f, out.data(), out.size(), path);
  std::fclose(f);
}

inline void write_png_gray(const std::string& path, const Image& img) {
  std::vector<uint8_t> bytes(img.size());
  for (size_t i = 0; i < img.size(); ++i) bytes[i] = quantize8(img.px[i]);
  write_png(path, img.width, img.height, 1, bytes);
}

// Binary PGM (P5), maxval 255.
inline void write_pgm(const std::string& path, const Image& img) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string header =
      "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  detail::fwrite_all(f, header.data(), header.size(), path);
  std::vector<uint8_t> bytes(img.size());
  for (size_t i = 0; i < img.size(); ++i) bytes[i] = quantize8(img.px[i]);
  detail::fwrite_all(f, bytes.data(), bytes.size(), path);
  std::fclose(f);
}

}  // namespace cenlab
