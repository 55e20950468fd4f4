#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace cxrgen::png_io {

// Thin libpng wrappers for grayscale images. Label maps are written with
// bit depth 8 (pixel value = palette stored value), radiographs with 16.

struct Gray {
  int width = 0;
  int height = 0;
  int bit_depth = 8;                 // 8 or 16
  std::vector<uint16_t> pixels;      // row-major; 8-bit values occupy 0..255
};

std::vector<uint8_t> encode_gray(const Gray& img);
Gray decode_gray(const uint8_t* bytes, size_t len);

void write_gray(const std::filesystem::path& file, const Gray& img);
Gray read_gray(const std::filesystem::path& file);

}  // namespace cxrgen::png_io
