#include "cxrgen/augment.hpp"

#include <algorithm>
#include <cmath>

#include "cxrgen/dataset.hpp"
#include "cxrgen/rng.hpp"

namespace cxrgen {

AugmentParams sample_params(uint64_t rng_seed) {
  Rng rng(mix_seed(rng_seed, 0xa46d1));
  AugmentParams p;
  p.rotation_deg = rng.uniform(-AugmentParams::kRotationMax, AugmentParams::kRotationMax);
  p.shift_y_frac = rng.uniform(-AugmentParams::kShiftMax, AugmentParams::kShiftMax);
  p.shift_x_frac = rng.uniform(-AugmentParams::kShiftMax, AugmentParams::kShiftMax);
  p.noise_variance = rng.uniform(AugmentParams::kNoiseVarMin, AugmentParams::kNoiseVarMax);
  p.seed = rng_seed;
  return p;
}

std::pair<GrayImage, LabelMap> apply_augment(const GrayImage& image, const LabelMap& labels,
                                             const AugmentParams& p) {
  if (image.height != labels.height || image.width != labels.width) {
    throw ShapeError("apply_augment: image and labels differ in shape");
  }
  const int h = image.height, w = image.width;
  const double theta = p.rotation_deg * 3.14159265358979323846 / 180.0;
  const double ca = std::cos(theta), sa = std::sin(theta);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  const double ty = p.shift_y_frac * h, tx = p.shift_x_frac * w;

  GrayImage out_img(h, w);
  LabelMap out_lab(h, w);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Inverse map of translate(rotate(p)): undo shift, rotate by -theta.
      double dy = y - ty - cy;
      double dx = x - tx - cx;
      double sy = ca * dy - sa * dx + cy;
      double sx = sa * dy + ca * dx + cx;

      // Bilinear, missing neighbors contribute zero.
      double fy = std::floor(sy), fx = std::floor(sx);
      int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
      double wy = sy - fy, wx = sx - fx;
      double acc = 0.0;
      for (int oy = 0; oy <= 1; ++oy) {
        for (int ox = 0; ox <= 1; ++ox) {
          int yy = y0 + oy, xx = x0 + ox;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          double wgt = (oy ? wy : 1.0 - wy) * (ox ? wx : 1.0 - wx);
          acc += wgt * image.at(yy, xx);
        }
      }
      out_img.at(y, x) = acc;

      int ny = static_cast<int>(std::lround(sy));
      int nx = static_cast<int>(std::lround(sx));
      out_lab.at(y, x) =
          (ny < 0 || ny >= h || nx < 0 || nx >= w) ? 0 : labels.at(ny, nx);
    }
  }

  if (p.noise_variance > 0.0) {
    Rng rng(mix_seed(p.seed, 0x90153));
    double sigma = std::sqrt(p.noise_variance / 255.0);
    for (auto& v : out_img.intensities) v += sigma * rng.normal();
  }
  for (auto& v : out_img.intensities) v = std::clamp(v, 0.0, 1.0);
  return {std::move(out_img), std::move(out_lab)};
}

}  // namespace cxrgen
