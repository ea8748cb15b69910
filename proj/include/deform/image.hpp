#pragma once

#include <zlib.h>

#include <array>

#include "deform/io.hpp"

namespace deform {

// RGB image, floats in [0,1], row-major (y, x, channel). Files store 8-bit
// RGB; quantization is round(v*255) clamped to [0,255].
struct Image {
  int w = 0, h = 0;
  std::vector<double> rgb;

  Image() = default;
  Image(int w_, int h_, double fill = 0.0) : w(w_), h(h_), rgb(static_cast<size_t>(w_) * h_ * 3, fill) {}

  double& at(int y, int x, int c) { return rgb[(static_cast<size_t>(y) * w + x) * 3 + c]; }
  double at(int y, int x, int c) const { return rgb[(static_cast<size_t>(y) * w + x) * 3 + c]; }

  std::vector<uint8_t> quantize() const {
    std::vector<uint8_t> out(rgb.size());
    for (size_t i = 0; i < rgb.size(); ++i) {
      const double v = std::round(std::min(1.0, std::max(0.0, rgb[i])) * 255.0);
      out[i] = static_cast<uint8_t>(v);
    }
    return out;
  }

  static Image from_bytes(int w, int h, const std::vector<uint8_t>& bytes) {
    Image img(w, h);
    if (bytes.size() != img.rgb.size()) throw IoError("image byte count mismatch");
    for (size_t i = 0; i < bytes.size(); ++i) img.rgb[i] = bytes[i] / 255.0;
    return img;
  }
};

inline void write_ppm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path);
  os << "P6\n" << img.w << " " << img.h << "\n255\n";
  const auto bytes = img.quantize();
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6") throw IoError(path + ": not a binary PPM (P6) image");
  int w, h, maxv;
  is >> w >> h >> maxv;
  is.get();  // single whitespace after header
  if (!is || w < 1 || h < 1 || maxv != 255) throw IoError(path + ": unsupported PPM header");
  std::vector<uint8_t> bytes(static_cast<size_t>(w) * h * 3);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!is) throw IoError(path + ": truncated PPM payload");
  return Image::from_bytes(w, h, bytes);
}

// Minimal 8-bit RGB PNG writer (filter 0 scanlines, single IDAT).
inline void write_png(const std::string& path, const Image& img) {
  const auto bytes = img.quantize();
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(img.h) * (1 + static_cast<size_t>(img.w) * 3));
  for (int y = 0; y < img.h; ++y) {
    raw.push_back(0);  // filter: none
    const uint8_t* row = bytes.data() + static_cast<size_t>(y) * img.w * 3;
    raw.insert(raw.end(), row, row + static_cast<size_t>(img.w) * 3);
  }
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IoError("png: deflate failed");
  comp.resize(comp_len);

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path);
  auto be32 = [](uint32_t v) {
    return std::array<uint8_t, 4>{static_cast<uint8_t>(v >> 24), static_cast<uint8_t>(v >> 16),
                                  static_cast<uint8_t>(v >> 8), static_cast<uint8_t>(v)};
  };
  auto chunk = [&](const char type[4], const std::vector<uint8_t>& payload) {
    auto len = be32(static_cast<uint32_t>(payload.size()));
    os.write(reinterpret_cast<const char*>(len.data()), 4);
    std::vector<uint8_t> body(type, type + 4);
    body.insert(body.end(), payload.begin(), payload.end());
    os.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, body.data(), static_cast<uInt>(body.size())));
    auto c = be32(crc);
    os.write(reinterpret_cast<const char*>(c.data()), 4);
  };
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  os.write(reinterpret_cast<const char*>(sig), 8);
  std::vector<uint8_t> ihdr;
  auto w4 = be32(static_cast<uint32_t>(img.w)), h4 = be32(static_cast<uint32_t>(img.h));
  ihdr.insert(ihdr.end(), w4.begin(), w4.end());
  ihdr.insert(ihdr.end(), h4.begin(), h4.end());
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // RGB
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  chunk("IHDR", ihdr);
  chunk("IDAT", comp);
  chunk("IEND", {});
}

}  // namespace deform
