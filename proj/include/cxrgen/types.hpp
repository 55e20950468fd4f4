#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cxrgen/errors.hpp"

namespace cxrgen {

// Fixed class codes. 0 is always background; the code<->name mapping below is
// the one serialized everywhere (palette files, confusion matrices, reports).
enum class ClassCode : uint8_t {
  background = 0,
  right_lung = 1,
  left_lung = 2,
  heart = 3,
  right_clavicle = 4,
  left_clavicle = 5,
};

inline constexpr int kClassCount = 6;

const char* class_name(int code);
std::optional<int> class_code_by_name(const std::string& name);

// Per-pixel class codes, row-major.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> codes;

  LabelMap() = default;
  LabelMap(int h, int w, uint8_t fill = 0)
      : height(h), width(w), codes(static_cast<size_t>(h) * w, fill) {}

  uint8_t at(int r, int c) const { return codes[static_cast<size_t>(r) * width + c]; }
  uint8_t& at(int r, int c) { return codes[static_cast<size_t>(r) * width + c]; }
  size_t size() const { return codes.size(); }

  bool operator==(const LabelMap&) const = default;
};

// Normalized radiograph intensities in [0, 1], row-major.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<double> intensities;

  GrayImage() = default;
  GrayImage(int h, int w, double fill = 0.0)
      : height(h), width(w), intensities(static_cast<size_t>(h) * w, fill) {}

  double at(int r, int c) const { return intensities[static_cast<size_t>(r) * width + c]; }
  double& at(int r, int c) { return intensities[static_cast<size_t>(r) * width + c]; }
  size_t size() const { return intensities.size(); }

  bool operator==(const GrayImage&) const = default;
};

// Generic [channels, height, width] grid, channel-major. The interchange
// container between domain types and the network code.
struct ChannelGrid {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;

  ChannelGrid() = default;
  ChannelGrid(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), values(static_cast<size_t>(c) * h * w, fill) {}

  double at(int c, int y, int x) const {
    return values[(static_cast<size_t>(c) * height + y) * width + x];
  }
  double& at(int c, int y, int x) {
    return values[(static_cast<size_t>(c) * height + y) * width + x];
  }
  size_t size() const { return values.size(); }

  bool operator==(const ChannelGrid&) const = default;
};

// Maps class codes to stored pixel values (single-channel label images) and to
// display colors. Injective both ways; validated on construction/load.
class Palette {
 public:
  struct Entry {
    int code = 0;
    std::string name;
    uint8_t stored_value = 0;
    std::array<uint8_t, 3> display_rgb{0, 0, 0};
  };

  static Palette default_palette();
  static Palette load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

  int version() const { return version_; }
  const std::vector<Entry>& entries() const { return entries_; }

  uint8_t stored_value(int code) const;           // throws CodecError if absent
  std::optional<int> code_for(uint8_t stored) const;
  bool has_code(int code) const;

 private:
  Palette(int version, std::vector<Entry> entries);
  void validate() const;

  int version_ = 1;
  std::vector<Entry> entries_;
};

}  // namespace cxrgen
