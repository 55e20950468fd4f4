#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cxrgen/types.hpp"

namespace cxrgen {

struct ClassCounts {
  int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  int64_t total() const { return tp + fp + fn + tn; }
};

struct ConfusionCounts {
  std::array<ClassCounts, kClassCount> per_class{};
  int64_t pixels = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o);
};

// One-vs-rest pixel counts per class; exact integers.
ConfusionCounts confusion(const LabelMap& pred, const LabelMap& target);

// Metric value with the empty-class convention: when TP+FP+FN == 0 the class
// is absent from both maps and the value is defined as 1.0 with `empty` set.
struct MetricValue {
  double value = 0.0;
  bool empty = false;
};

MetricValue jaccard(const ConfusionCounts& c, int cls);  // TP / (TP+FP+FN)
MetricValue dice(const ConfusionCounts& c, int cls);     // 2TP / (2TP+FP+FN)

enum class Averaging { micro, macro };

// Table row order for reports; clavicles are computed but excluded from the
// headline average by default.
std::vector<int> default_report_subset();  // {left_lung, heart, right_lung}

struct MetricsReport {
  std::array<MetricValue, kClassCount> j{};
  std::array<MetricValue, kClassCount> dsc{};
  std::vector<int> subset;
  double j_average = 0.0;
  double dsc_average = 0.0;
  Averaging mode = Averaging::micro;
  int64_t pair_count = 0;

  std::string to_json_string() const;   // fixed field order, exact doubles
  static MetricsReport from_json_string(const std::string& s);
};

MetricsReport report(const std::vector<std::pair<const LabelMap*, const LabelMap*>>& pairs,
                     const std::vector<int>& subset = default_report_subset(),
                     Averaging mode = Averaging::micro);
MetricsReport report(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& targets,
                     const std::vector<int>& subset = default_report_subset(),
                     Averaging mode = Averaging::micro);

std::string report_to_markdown(const MetricsReport& r);
std::string report_to_csv(const MetricsReport& r);

}  // namespace cxrgen
