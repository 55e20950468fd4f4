#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cxrgen/types.hpp"

namespace cxrgen {

// Serializes a label map to single-channel indexed (8-bit PNG) image bytes,
// pixel value = palette stored value. Exact inverse of decode_labels.
std::vector<uint8_t> encode_labels(const LabelMap& map, const Palette& palette);

// Inverse of encode_labels. Unknown stored values raise CodecError naming the
// value and its pixel location.
LabelMap decode_labels(const std::vector<uint8_t>& bytes, const Palette& palette);

// Nearest-neighbor resize. Source index rule, per axis:
//   src_index = floor(dst_index * src_size / dst_size)
// Never introduces codes absent from the input.
LabelMap resize_nearest(const LabelMap& map, int out_h, int out_w);

// Channel 0 = image intensities, channel 1 = raw label codes.
ChannelGrid stack_pair(const GrayImage& image, const LabelMap& map);
std::pair<GrayImage, LabelMap> unstack_pair(const ChannelGrid& grid);

}  // namespace cxrgen
