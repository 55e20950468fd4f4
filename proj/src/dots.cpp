#include "cxrgen/dots.hpp"

#include <cmath>

namespace cxrgen {

CentroidSet centroids(const LabelMap& labels) {
  double sum_y[kClassCount] = {};
  double sum_x[kClassCount] = {};
  int64_t n[kClassCount] = {};
  for (int y = 0; y < labels.height; ++y) {
    for (int x = 0; x < labels.width; ++x) {
      uint8_t c = labels.at(y, x);
      sum_y[c] += y;
      sum_x[c] += x;
      ++n[c];
    }
  }
  CentroidSet cs;
  for (int c = 1; c < kClassCount; ++c) {
    if (n[c] > 0) cs[c] = {sum_y[c] / n[c], sum_x[c] / n[c]};
  }
  return cs;
}

LabelMap render_dots(const CentroidSet& cs, int src_h, int src_w, int radius_px) {
  if (radius_px < 1) throw ConfigError("dot radius must be >= 1");
  if (src_h < 1 || src_w < 1) throw ShapeError("render_dots: source dims must be >= 1");
  LabelMap map(kDotMapSize, kDotMapSize);
  const int r2 = radius_px * radius_px;
  for (const auto& [code, rc] : cs) {  // std::map iterates codes ascending
    int cy = static_cast<int>(std::llround(rc.first * kDotMapSize / src_h));
    int cx = static_cast<int>(std::llround(rc.second * kDotMapSize / src_w));
    cy = std::clamp(cy, 0, kDotMapSize - 1);
    cx = std::clamp(cx, 0, kDotMapSize - 1);
    for (int dy = -radius_px; dy <= radius_px; ++dy) {
      for (int dx = -radius_px; dx <= radius_px; ++dx) {
        if (dy * dy + dx * dx > r2) continue;
        int y = cy + dy, x = cx + dx;
        if (y < 0 || y >= kDotMapSize || x < 0 || x >= kDotMapSize) continue;
        map.at(y, x) = static_cast<uint8_t>(code);
      }
    }
  }
  return map;
}

std::vector<DotTriple> dotify_dataset(const std::vector<DatasetEntry>& entries, int radius_px) {
  std::vector<DotTriple> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    DotTriple t;
    t.dots = render_dots(centroids(e.labels), e.labels.height, e.labels.width, radius_px);
    t.labels = e.labels;
    t.image = e.image;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace cxrgen
