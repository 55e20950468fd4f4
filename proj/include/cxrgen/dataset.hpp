#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cxrgen/types.hpp"

namespace cxrgen {

enum class Split { train, test };

struct DatasetEntry {
  std::string id;
  GrayImage image;
  LabelMap labels;
  Split split = Split::train;
};

// Directory layout (shared by real ingestion, phantom export and every tool):
//   images/<id>.png   16-bit grayscale
//   masks/<id>.png    8-bit indexed per palette
//   split.txt         lines "<id>\t<train|test>"
std::vector<DatasetEntry> load_dataset(const std::filesystem::path& root, const Palette& palette);
void save_dataset(const std::filesystem::path& root, const std::vector<DatasetEntry>& entries,
                  const Palette& palette);

struct PhantomConfig {
  uint64_t seed = 1;
  int size = 128;              // power of two, >= 32
  int count = 8;
  double shape_jitter = 0.08;  // relative variation of organ geometry
  double intensity_jitter = 0.05;
  double noise_sigma = 0.01;

  void validate() const;
};

// Procedural thorax-like image/label pairs: two disjoint lung fields, a heart
// region between them, two thin clavicle bars in the upper third, smooth
// intensity rendering plus seeded noise. Entry i is a pure function of
// (cfg.seed, i); all entries come back with split == train.
std::vector<DatasetEntry> make_phantoms(const PhantomConfig& cfg);

// Seeded uniform choice without replacement of floor(fraction * n) entries,
// returned in their original order.
std::vector<DatasetEntry> subsample_train(const std::vector<DatasetEntry>& entries,
                                          double fraction, uint64_t seed);

GrayImage gray_from_png16(const std::filesystem::path& file);

}  // namespace cxrgen
