#pragma once

#include <cstdint>
#include <utility>

#include "cxrgen/types.hpp"

namespace cxrgen {

// Pre-generation augmentation parameters. noise_variance lives on the 0-255
// pixel scale: the effective variance in the [0,1] intensity domain is
// (noise_variance * 255) / 255^2 = noise_variance / 255.
struct AugmentParams {
  double rotation_deg = 0.0;   // [-2, 2]
  double shift_y_frac = 0.0;   // [-0.03, 0.03], fraction of height
  double shift_x_frac = 0.0;   // [-0.03, 0.03], fraction of width
  double noise_variance = 0.0; // [0.01, 0.03] when sampled; 0 disables noise
  uint64_t seed = 0;           // drives the noise draw in apply()

  static constexpr double kRotationMax = 2.0;
  static constexpr double kShiftMax = 0.03;
  static constexpr double kNoiseVarMin = 0.01;
  static constexpr double kNoiseVarMax = 0.03;
};

// Uniform draw of every field over its interval; deterministic per seed.
AugmentParams sample_params(uint64_t rng_seed);

// Applies the same geometric transform (rotate about center, then translate)
// to image and labels; bilinear resampling for the image, nearest for labels.
// Positive shifts move content toward larger row/column indices; vacated
// regions fill with background/zero. Gaussian noise is added to the image
// only, then intensities are clamped to [0,1].
std::pair<GrayImage, LabelMap> apply_augment(const GrayImage& image, const LabelMap& labels,
                                             const AugmentParams& p);

// Expands each entry into `variants` entries: "<id>_v0" is the untouched
// original, v1.. are fresh seeded draws. Per-item seeds derive from
// (seed, id, k), so parallel mapping stays deterministic.
std::vector<DatasetEntry> augment_dataset(const std::vector<DatasetEntry>& entries, int variants,
                                          uint64_t seed);

}  // namespace cxrgen
