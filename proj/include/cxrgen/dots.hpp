#pragma once

#include <map>
#include <utility>
#include <vector>

#include "cxrgen/dataset.hpp"
#include "cxrgen/types.hpp"

namespace cxrgen {

inline constexpr int kDotMapSize = 64;

// Class code -> (row, col) arithmetic mean of that code's pixels, in source
// pixel coordinates. Background and absent classes are omitted.
using CentroidSet = std::map<int, std::pair<double, double>>;

CentroidSet centroids(const LabelMap& labels);

// Rasterizes one filled disk per centroid into a kDotMapSize^2 map. Centers
// are scaled proportionally from (src_h, src_w) and rounded; a cell belongs
// to the disk when its Euclidean distance to the center is <= radius. Disks
// are drawn in ascending code order, so on overlap the higher code wins.
LabelMap render_dots(const CentroidSet& cs, int src_h, int src_w, int radius_px);

struct DotTriple {
  LabelMap dots;     // kDotMapSize x kDotMapSize
  LabelMap labels;   // source resolution
  GrayImage image;   // source resolution
};

// centroids + render per entry, order preserved. Upscale `dots` with
// resize_nearest when assembling translator training pairs.
std::vector<DotTriple> dotify_dataset(const std::vector<DatasetEntry>& entries, int radius_px);

}  // namespace cxrgen
