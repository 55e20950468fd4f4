#pragma once

#include <vector>

#include "cxrgen/types.hpp"

namespace cxrgen {

// Mode-collapse / memorization probes over a generated sample set.
struct DiversityStats {
  double mean_pixel_variance = 0.0;
  double min_pixel_variance = 0.0;
  // Per-sample mean-absolute-difference to the closest training item; empty
  // when no training set was supplied.
  std::vector<double> nn_distances;
  double nn_distance_mean = 0.0;
  double nn_distance_min = 0.0;
};

DiversityStats diversity(const std::vector<GrayImage>& samples,
                         const std::vector<GrayImage>& training = {});

// Structural plausibility checks for generated label maps.
struct LabelSanity {
  int count = 0;
  double frac_lungs_present = 0.0;   // both lung codes occur
  double frac_lungs_disjoint = 0.0;  // no 4-adjacency between the two lungs
  double frac_heart_present = 0.0;
};

LabelSanity label_sanity(const std::vector<LabelMap>& maps);

}  // namespace cxrgen
