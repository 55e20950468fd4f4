#include "cxrgen/types.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace cxrgen {

namespace {
constexpr const char* kClassNames[kClassCount] = {
    "background", "right_lung", "left_lung", "heart", "right_clavicle", "left_clavicle",
};
}

const char* class_name(int code) {
  if (code < 0 || code >= kClassCount) throw CodecError("invalid class code " + std::to_string(code));
  return kClassNames[code];
}

std::optional<int> class_code_by_name(const std::string& name) {
  for (int i = 0; i < kClassCount; ++i) {
    if (name == kClassNames[i]) return i;
  }
  return std::nullopt;
}

Palette::Palette(int version, std::vector<Entry> entries)
    : version_(version), entries_(std::move(entries)) {
  validate();
}

void Palette::validate() const {
  if (entries_.size() != static_cast<size_t>(kClassCount)) {
    throw CodecError("palette must declare exactly " + std::to_string(kClassCount) + " entries");
  }
  std::set<int> codes;
  std::set<uint8_t> stored;
  for (const auto& e : entries_) {
    if (e.code < 0 || e.code >= kClassCount) throw CodecError("palette code out of range");
    if (e.name != kClassNames[e.code]) {
      throw CodecError("palette name mismatch for code " + std::to_string(e.code) + ": " + e.name);
    }
    codes.insert(e.code);
    stored.insert(e.stored_value);
  }
  if (codes.size() != entries_.size() || stored.size() != entries_.size()) {
    throw CodecError("palette mappings must be injective");
  }
  if (stored_value(0) != 0) throw CodecError("background must be stored as 0");
}

Palette Palette::default_palette() {
  std::vector<Entry> e{
      {0, "background", 0, {0, 0, 0}},
      {1, "right_lung", 51, {70, 130, 180}},
      {2, "left_lung", 102, {60, 179, 113}},
      {3, "heart", 153, {220, 20, 60}},
      {4, "right_clavicle", 204, {255, 215, 0}},
      {5, "left_clavicle", 255, {186, 85, 211}},
  };
  return Palette(1, std::move(e));
}

Palette Palette::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IngestionError("cannot open palette: " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& ex) {
    throw CodecError("palette parse error: " + std::string(ex.what()));
  }
  std::vector<Entry> entries;
  for (const auto& je : j.at("entries")) {
    Entry e;
    e.code = je.at("code").get<int>();
    e.name = je.at("name").get<std::string>();
    e.stored_value = static_cast<uint8_t>(je.at("stored_value").get<int>());
    auto rgb = je.at("display_rgb");
    for (int i = 0; i < 3; ++i) e.display_rgb[i] = static_cast<uint8_t>(rgb.at(i).get<int>());
    entries.push_back(e);
  }
  return Palette(j.at("version").get<int>(), std::move(entries));
}

void Palette::save(const std::filesystem::path& file) const {
  nlohmann::json j;
  j["version"] = version_;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : entries_) {
    j["entries"].push_back({{"code", e.code},
                            {"name", e.name},
                            {"stored_value", static_cast<int>(e.stored_value)},
                            {"display_rgb", {e.display_rgb[0], e.display_rgb[1], e.display_rgb[2]}}});
  }
  std::ofstream out(file);
  if (!out) throw IngestionError("cannot write palette: " + file.string());
  out << j.dump(2) << "\n";
}

uint8_t Palette::stored_value(int code) const {
  for (const auto& e : entries_) {
    if (e.code == code) return e.stored_value;
  }
  throw CodecError("code " + std::to_string(code) + " missing from palette");
}

std::optional<int> Palette::code_for(uint8_t stored) const {
  for (const auto& e : entries_) {
    if (e.stored_value == stored) return e.code;
  }
  return std::nullopt;
}

bool Palette::has_code(int code) const {
  for (const auto& e : entries_) {
    if (e.code == code) return true;
  }
  return false;
}

}  // namespace cxrgen
