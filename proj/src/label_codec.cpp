#include "cxrgen/label_codec.hpp"

#include <cmath>
#include <string>

#include "cxrgen/png_io.hpp"

namespace cxrgen {

std::vector<uint8_t> encode_labels(const LabelMap& map, const Palette& palette) {
  if (map.height < 1 || map.width < 1) throw ShapeError("encode_labels: empty map");
  png_io::Gray img;
  img.width = map.width;
  img.height = map.height;
  img.bit_depth = 8;
  img.pixels.resize(map.size());
  for (size_t i = 0; i < map.size(); ++i) {
    img.pixels[i] = palette.stored_value(map.codes[i]);
  }
  return png_io::encode_gray(img);
}

LabelMap decode_labels(const std::vector<uint8_t>& bytes, const Palette& palette) {
  png_io::Gray img = png_io::decode_gray(bytes.data(), bytes.size());
  if (img.bit_depth != 8) throw CodecError("label image must be 8-bit");
  LabelMap map(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      uint16_t v = img.pixels[static_cast<size_t>(y) * img.width + x];
      auto code = palette.code_for(static_cast<uint8_t>(v));
      if (!code) {
        throw CodecError("unknown stored value " + std::to_string(v) + " at pixel (" +
                         std::to_string(y) + "," + std::to_string(x) + ")");
      }
      map.at(y, x) = static_cast<uint8_t>(*code);
    }
  }
  return map;
}

LabelMap resize_nearest(const LabelMap& map, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError("resize_nearest: output dims must be >= 1");
  if (map.height < 1 || map.width < 1) throw ShapeError("resize_nearest: empty input");
  LabelMap out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    int sy = static_cast<int>(static_cast<int64_t>(y) * map.height / out_h);
    for (int x = 0; x < out_w; ++x) {
      int sx = static_cast<int>(static_cast<int64_t>(x) * map.width / out_w);
      out.at(y, x) = map.at(sy, sx);
    }
  }
  return out;
}

ChannelGrid stack_pair(const GrayImage& image, const LabelMap& map) {
  if (image.height != map.height || image.width != map.width) {
    throw ShapeError("stack_pair: image " + std::to_string(image.height) + "x" +
                     std::to_string(image.width) + " vs labels " + std::to_string(map.height) +
                     "x" + std::to_string(map.width));
  }
  ChannelGrid grid(2, image.height, image.width);
  size_t n = image.size();
  for (size_t i = 0; i < n; ++i) grid.values[i] = image.intensities[i];
  for (size_t i = 0; i < n; ++i) grid.values[n + i] = static_cast<double>(map.codes[i]);
  return grid;
}

std::pair<GrayImage, LabelMap> unstack_pair(const ChannelGrid& grid) {
  if (grid.channels != 2) throw ShapeError("unstack_pair: expected 2 channels");
  GrayImage image(grid.height, grid.width);
  LabelMap map(grid.height, grid.width);
  size_t n = image.size();
  for (size_t i = 0; i < n; ++i) image.intensities[i] = grid.values[i];
  for (size_t i = 0; i < n; ++i) {
    double v = grid.values[n + i];
    double r = std::round(v);
    if (r != v || r < 0 || r >= kClassCount) {
      throw CodecError("unstack_pair: channel 1 holds non-code value " + std::to_string(v));
    }
    map.codes[i] = static_cast<uint8_t>(r);
  }
  return {std::move(image), std::move(map)};
}

}  // namespace cxrgen
