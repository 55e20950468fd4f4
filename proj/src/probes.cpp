#include "cxrgen/probes.hpp"

#include <cmath>
#include <limits>

#include "cxrgen/errors.hpp"

namespace cxrgen {

DiversityStats diversity(const std::vector<GrayImage>& samples,
                         const std::vector<GrayImage>& training) {
  if (samples.size() < 2) throw ConfigError("diversity: need at least 2 samples");
  const int h = samples[0].height, w = samples[0].width;
  for (const auto& s : samples) {
    if (s.height != h || s.width != w) throw ShapeError("diversity: sample dims differ");
  }

  DiversityStats stats;
  const size_t n = samples[0].size();
  double var_sum = 0.0, var_min = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (const auto& s : samples) mean += s.intensities[i];
    mean /= samples.size();
    double var = 0.0;
    for (const auto& s : samples) {
      double d = s.intensities[i] - mean;
      var += d * d;
    }
    var /= samples.size();
    var_sum += var;
    var_min = std::min(var_min, var);
  }
  stats.mean_pixel_variance = var_sum / static_cast<double>(n);
  stats.min_pixel_variance = var_min;

  if (!training.empty()) {
    for (const auto& tr : training) {
      if (tr.height != h || tr.width != w) throw ShapeError("diversity: training dims differ");
    }
    stats.nn_distances.reserve(samples.size());
    double total = 0.0, lo = std::numeric_limits<double>::infinity();
    for (const auto& s : samples) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& tr : training) {
        double d = 0.0;
        for (size_t i = 0; i < n; ++i) d += std::abs(s.intensities[i] - tr.intensities[i]);
        best = std::min(best, d / static_cast<double>(n));
      }
      stats.nn_distances.push_back(best);
      total += best;
      lo = std::min(lo, best);
    }
    stats.nn_distance_mean = total / static_cast<double>(samples.size());
    stats.nn_distance_min = lo;
  }
  return stats;
}

LabelSanity label_sanity(const std::vector<LabelMap>& maps) {
  LabelSanity out;
  out.count = static_cast<int>(maps.size());
  if (maps.empty()) return out;
  int lungs_present = 0, lungs_disjoint = 0, heart_present = 0;
  const uint8_t rl = static_cast<uint8_t>(ClassCode::right_lung);
  const uint8_t ll = static_cast<uint8_t>(ClassCode::left_lung);
  const uint8_t he = static_cast<uint8_t>(ClassCode::heart);
  for (const auto& m : maps) {
    bool has_rl = false, has_ll = false, has_he = false, touch = false;
    for (int y = 0; y < m.height; ++y) {
      for (int x = 0; x < m.width; ++x) {
        uint8_t c = m.at(y, x);
        has_rl |= c == rl;
        has_ll |= c == ll;
        has_he |= c == he;
        if (c == rl || c == ll) {
          uint8_t other = c == rl ? ll : rl;
          if ((y + 1 < m.height && m.at(y + 1, x) == other) ||
              (x + 1 < m.width && m.at(y, x + 1) == other)) {
            touch = true;
          }
        }
      }
    }
    if (has_rl && has_ll) ++lungs_present;
    if (!touch) ++lungs_disjoint;
    if (has_he) ++heart_present;
  }
  out.frac_lungs_present = static_cast<double>(lungs_present) / maps.size();
  out.frac_lungs_disjoint = static_cast<double>(lungs_disjoint) / maps.size();
  out.frac_heart_present = static_cast<double>(heart_present) / maps.size();
  return out;
}

}  // namespace cxrgen
