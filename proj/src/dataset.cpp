#include "cxrgen/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "cxrgen/label_codec.hpp"
#include "cxrgen/png_io.hpp"
#include "cxrgen/rng.hpp"

namespace cxrgen {

namespace fs = std::filesystem;

void PhantomConfig::validate() const {
  if (size < 32 || (size & (size - 1)) != 0) {
    throw ConfigError("phantom size must be a power of two >= 32");
  }
  if (count < 1) throw ConfigError("phantom count must be >= 1");
}

GrayImage gray_from_png16(const fs::path& file) {
  png_io::Gray g = png_io::read_gray(file);
  GrayImage img(g.height, g.width);
  double scale = g.bit_depth == 16 ? 65535.0 : 255.0;
  for (size_t i = 0; i < img.size(); ++i) img.intensities[i] = g.pixels[i] / scale;
  return img;
}

static png_io::Gray gray_to_png16(const GrayImage& img) {
  png_io::Gray g;
  g.width = img.width;
  g.height = img.height;
  g.bit_depth = 16;
  g.pixels.resize(img.size());
  for (size_t i = 0; i < img.size(); ++i) {
    double v = std::clamp(img.intensities[i], 0.0, 1.0);
    g.pixels[i] = static_cast<uint16_t>(std::lround(v * 65535.0));
  }
  return g;
}

std::vector<DatasetEntry> load_dataset(const fs::path& root, const Palette& palette) {
  fs::path split_file = root / "split.txt";
  if (!fs::exists(split_file)) {
    throw IngestionError("missing split file: " + split_file.string());
  }
  std::ifstream in(split_file);
  std::vector<std::pair<std::string, Split>> listing;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw IngestionError("split.txt line " + std::to_string(lineno) + ": expected <id>\\t<split>");
    }
    std::string id = line.substr(0, tab);
    std::string which = line.substr(tab + 1);
    if (!which.empty() && which.back() == '\r') which.pop_back();
    if (which != "train" && which != "test") {
      throw IngestionError("split.txt line " + std::to_string(lineno) + ": unknown split '" + which + "'");
    }
    listing.emplace_back(id, which == "train" ? Split::train : Split::test);
  }
  if (listing.empty()) throw IngestionError("empty dataset: " + root.string());

  std::set<std::string> seen;
  std::vector<DatasetEntry> entries;
  entries.reserve(listing.size());
  for (const auto& [id, split] : listing) {
    if (!seen.insert(id).second) throw IngestionError("duplicate id in split.txt: " + id);
    fs::path image_file = root / "images" / (id + ".png");
    fs::path mask_file = root / "masks" / (id + ".png");
    if (!fs::exists(image_file)) throw IngestionError("missing image for id " + id);
    if (!fs::exists(mask_file)) throw IngestionError("missing mask for id " + id);

    DatasetEntry e;
    e.id = id;
    e.split = split;
    e.image = gray_from_png16(image_file);
    std::ifstream mf(mask_file, std::ios::binary);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(mf)), std::istreambuf_iterator<char>());
    try {
      e.labels = decode_labels(bytes, palette);
    } catch (const CodecError& ex) {
      throw CodecError(std::string(ex.what()) + " in " + mask_file.string());
    }
    if (e.image.height != e.labels.height || e.image.width != e.labels.width) {
      throw IngestionError("dimension mismatch for id " + id);
    }
    entries.push_back(std::move(e));
  }
  // Deterministic id order regardless of how the split file was assembled.
  std::sort(entries.begin(), entries.end(),
            [](const DatasetEntry& a, const DatasetEntry& b) { return a.id < b.id; });
  return entries;
}

void save_dataset(const fs::path& root, const std::vector<DatasetEntry>& entries,
                  const Palette& palette) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  std::ofstream split(root / "split.txt");
  if (!split) throw IngestionError("cannot write split.txt under " + root.string());
  for (const auto& e : entries) {
    png_io::write_gray(root / "images" / (e.id + ".png"), gray_to_png16(e.image));
    auto bytes = encode_labels(e.labels, palette);
    std::ofstream mf(root / "masks" / (e.id + ".png"), std::ios::binary);
    mf.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    split << e.id << "\t" << (e.split == Split::train ? "train" : "test") << "\n";
  }
}

namespace {

struct Ellipse {
  double cy, cx;    // center, unit coords
  double ry, rx;    // semi-axes
  double angle;     // radians
  // Normalized squared radius; <= 1 means inside.
  double eval(double y, double x) const {
    double dy = y - cy, dx = x - cx;
    double ca = std::cos(angle), sa = std::sin(angle);
    double u = ca * dx + sa * dy;
    double v = -sa * dx + ca * dy;
    return (u * u) / (rx * rx) + (v * v) / (ry * ry);
  }
};

struct Bar {
  double y0, x0, y1, x1;  // segment endpoints, unit coords
  double half_thickness;
  double dist2(double y, double x) const {
    double vy = y1 - y0, vx = x1 - x0;
    double wy = y - y0, wx = x - x0;
    double t = std::clamp((wy * vy + wx * vx) / (vy * vy + vx * vx), 0.0, 1.0);
    double py = y0 + t * vy, px = x0 + t * vx;
    return (y - py) * (y - py) + (x - px) * (x - px);
  }
};

void box_blur(GrayImage& img) {
  GrayImage tmp = img;
  int h = img.height, w = img.width;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0;
      int n = 0;
      for (int dx = -1; dx <= 1; ++dx) {
        int xx = x + dx;
        if (xx < 0 || xx >= w) continue;
        s += img.at(y, xx);
        ++n;
      }
      tmp.at(y, x) = s / n;
    }
  }
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) {
      double s = 0;
      int n = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        s += tmp.at(yy, x);
        ++n;
      }
      img.at(y, x) = s / n;
    }
  }
}

}  // namespace

std::vector<DatasetEntry> make_phantoms(const PhantomConfig& cfg) {
  cfg.validate();
  std::vector<DatasetEntry> entries;
  entries.reserve(cfg.count);
  const int s = cfg.size;
  const double j = cfg.shape_jitter;

  for (int index = 0; index < cfg.count; ++index) {
    Rng rng(mix_seed(cfg.seed, static_cast<uint64_t>(index) + 0x51ed270b));
    auto jit = [&](double base) { return base * (1.0 + j * rng.uniform(-1.0, 1.0)); };

    Ellipse torso{0.52, 0.50, jit(0.46), jit(0.42), 0.0};
    Ellipse right_lung{0.50 + 0.02 * rng.uniform(-1, 1), 0.30 + 0.02 * rng.uniform(-1, 1),
                       jit(0.26), jit(0.125), -0.14 + 0.08 * rng.uniform(-1, 1)};
    Ellipse left_lung{0.50 + 0.02 * rng.uniform(-1, 1), 0.70 + 0.02 * rng.uniform(-1, 1),
                      jit(0.26), jit(0.125), 0.14 + 0.08 * rng.uniform(-1, 1)};
    Ellipse heart{0.64 + 0.02 * rng.uniform(-1, 1), 0.52 + 0.02 * rng.uniform(-1, 1),
                  jit(0.17), jit(0.15), 0.0};
    Bar right_clav{0.235 + 0.015 * rng.uniform(-1, 1), 0.13, 0.205 + 0.015 * rng.uniform(-1, 1),
                   0.44, 0.013 * (1.0 + 0.25 * rng.uniform(-1, 1))};
    Bar left_clav{0.205 + 0.015 * rng.uniform(-1, 1), 0.56, 0.235 + 0.015 * rng.uniform(-1, 1),
                  0.87, 0.013 * (1.0 + 0.25 * rng.uniform(-1, 1))};

    double body_level = 0.56 + cfg.intensity_jitter * rng.uniform(-1, 1);
    double lung_drop = 0.36 + 0.04 * rng.uniform(-1, 1);
    double heart_lift = 0.11 + 0.03 * rng.uniform(-1, 1);
    double clav_lift = 0.17 + 0.03 * rng.uniform(-1, 1);
    double rib_amp = 0.025 + 0.01 * rng.uniform(0, 1);
    double rib_freq = 28.0 + 6.0 * rng.uniform(-1, 1);
    double rib_phase = rng.uniform(0, 6.283185307179586);

    LabelMap labels(s, s);
    GrayImage image(s, s);
    for (int py = 0; py < s; ++py) {
      double y = (py + 0.5) / s;
      for (int px = 0; px < s; ++px) {
        double x = (px + 0.5) / s;
        uint8_t code = 0;
        bool in_rl = right_lung.eval(y, x) <= 1.0;
        bool in_ll = left_lung.eval(y, x) <= 1.0;
        bool in_heart = heart.eval(y, x) <= 1.0;
        bool in_rc = right_clav.dist2(y, x) <= right_clav.half_thickness * right_clav.half_thickness;
        bool in_lc = left_clav.dist2(y, x) <= left_clav.half_thickness * left_clav.half_thickness;
        // Later draws win: lungs, heart, clavicles.
        if (in_rl) code = 1;
        if (in_ll) code = 2;
        if (in_heart) code = 3;
        if (in_rc) code = 4;
        if (in_lc) code = 5;
        labels.at(py, px) = code;

        double v;
        if (torso.eval(y, x) > 1.0) {
          v = 0.05;
        } else {
          v = body_level;
          // Spine: vertical bright ridge in the mediastinum.
          double sx = (x - 0.5) / 0.045;
          v += 0.12 * std::exp(-sx * sx);
          if (y > 0.82) v += 0.05;  // diaphragm/abdomen
          if (in_rl || in_ll) {
            v -= lung_drop;
            v += rib_amp * std::sin(rib_freq * y * 6.283185307179586 + rib_phase);
          }
          if (in_heart) v += heart_lift;
          if (in_rc || in_lc) v += clav_lift;
        }
        image.at(py, px) = v;
      }
    }
    box_blur(image);
    box_blur(image);
    for (auto& v : image.intensities) {
      v = std::clamp(v + cfg.noise_sigma * rng.normal(), 0.0, 1.0);
    }

    DatasetEntry e;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "phantom_%05d", index);
    e.id = buf;
    e.image = std::move(image);
    e.labels = std::move(labels);
    e.split = Split::train;
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<DatasetEntry> subsample_train(const std::vector<DatasetEntry>& entries,
                                          double fraction, uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw ConfigError("subsample fraction must be in (0, 1]");
  }
  size_t n = entries.size();
  size_t k = static_cast<size_t>(std::floor(fraction * static_cast<double>(n)));
  if (k == 0) throw ConfigError("subsample yields zero entries (fraction too small)");
  if (k == n) return entries;

  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(mix_seed(seed, 0x5ab5a37e));
  for (size_t i = 0; i < k; ++i) {
    size_t pick = i + static_cast<size_t>(rng.uniform_int(static_cast<int>(n - i)));
    std::swap(idx[i], idx[pick]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  std::vector<DatasetEntry> out;
  out.reserve(k);
  for (size_t i : idx) out.push_back(entries[i]);
  return out;
}

}  // namespace cxrgen
