#include "cxrgen/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "json.hpp"

namespace cxrgen {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  for (int c = 0; c < kClassCount; ++c) {
    per_class[c].tp += o.per_class[c].tp;
    per_class[c].fp += o.per_class[c].fp;
    per_class[c].fn += o.per_class[c].fn;
    per_class[c].tn += o.per_class[c].tn;
  }
  pixels += o.pixels;
  return *this;
}

ConfusionCounts confusion(const LabelMap& pred, const LabelMap& target) {
  if (pred.height != target.height || pred.width != target.width) {
    throw ShapeError("confusion: prediction and target dims differ");
  }
  ConfusionCounts c;
  c.pixels = static_cast<int64_t>(pred.size());
  int64_t pred_count[kClassCount] = {};
  int64_t target_count[kClassCount] = {};
  int64_t match[kClassCount] = {};
  for (size_t i = 0; i < pred.size(); ++i) {
    uint8_t p = pred.codes[i], t = target.codes[i];
    ++pred_count[p];
    ++target_count[t];
    if (p == t) ++match[p];
  }
  for (int k = 0; k < kClassCount; ++k) {
    c.per_class[k].tp = match[k];
    c.per_class[k].fp = pred_count[k] - match[k];
    c.per_class[k].fn = target_count[k] - match[k];
    c.per_class[k].tn = c.pixels - c.per_class[k].tp - c.per_class[k].fp - c.per_class[k].fn;
  }
  return c;
}

MetricValue jaccard(const ConfusionCounts& c, int cls) {
  const auto& k = c.per_class[cls];
  int64_t denom = k.tp + k.fp + k.fn;
  if (denom == 0) return {1.0, true};
  return {static_cast<double>(k.tp) / static_cast<double>(denom), false};
}

MetricValue dice(const ConfusionCounts& c, int cls) {
  const auto& k = c.per_class[cls];
  int64_t denom = 2 * k.tp + k.fp + k.fn;
  if (denom == 0) return {1.0, true};
  return {2.0 * static_cast<double>(k.tp) / static_cast<double>(denom), false};
}

std::vector<int> default_report_subset() {
  return {static_cast<int>(ClassCode::left_lung), static_cast<int>(ClassCode::heart),
          static_cast<int>(ClassCode::right_lung)};
}

static MetricsReport report_impl(const std::vector<std::pair<const LabelMap*, const LabelMap*>>& pairs,
                                 const std::vector<int>& subset, Averaging mode) {
  if (pairs.empty()) throw ConfigError("report: no prediction/target pairs");
  MetricsReport r;
  r.subset = subset;
  r.mode = mode;
  r.pair_count = static_cast<int64_t>(pairs.size());

  if (mode == Averaging::micro) {
    ConfusionCounts total;
    for (const auto& [p, t] : pairs) total += confusion(*p, *t);
    for (int c = 0; c < kClassCount; ++c) {
      r.j[c] = jaccard(total, c);
      r.dsc[c] = dice(total, c);
    }
  } else {
    // Macro: per-pair metrics averaged over pairs (empty convention per pair).
    for (int c = 0; c < kClassCount; ++c) {
      double js = 0, ds = 0;
      bool all_empty = true;
      for (const auto& [p, t] : pairs) {
        ConfusionCounts cc = confusion(*p, *t);
        MetricValue jv = jaccard(cc, c), dv = dice(cc, c);
        js += jv.value;
        ds += dv.value;
        all_empty = all_empty && jv.empty;
      }
      r.j[c] = {js / pairs.size(), all_empty};
      r.dsc[c] = {ds / pairs.size(), all_empty};
    }
  }

  double js = 0, ds = 0;
  for (int c : subset) {
    js += r.j[c].value;
    ds += r.dsc[c].value;
  }
  r.j_average = subset.empty() ? 0.0 : js / subset.size();
  r.dsc_average = subset.empty() ? 0.0 : ds / subset.size();
  return r;
}

MetricsReport report(const std::vector<std::pair<const LabelMap*, const LabelMap*>>& pairs,
                     const std::vector<int>& subset, Averaging mode) {
  return report_impl(pairs, subset, mode);
}

MetricsReport report(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& targets,
                     const std::vector<int>& subset, Averaging mode) {
  if (preds.size() != targets.size()) throw ShapeError("report: pred/target count mismatch");
  std::vector<std::pair<const LabelMap*, const LabelMap*>> pairs;
  pairs.reserve(preds.size());
  for (size_t i = 0; i < preds.size(); ++i) pairs.emplace_back(&preds[i], &targets[i]);
  return report_impl(pairs, subset, mode);
}

static std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string MetricsReport::to_json_string() const {
  // Hand-assembled with a fixed field order and %.17g doubles so identical
  // reports serialize to identical bytes.
  std::ostringstream os;
  os << "{\"mode\":\"" << (mode == Averaging::micro ? "micro" : "macro") << "\",";
  os << "\"pair_count\":" << pair_count << ",";
  os << "\"subset\":[";
  for (size_t i = 0; i < subset.size(); ++i) os << (i ? "," : "") << subset[i];
  os << "],\"j\":[";
  for (int c = 0; c < kClassCount; ++c) {
    os << (c ? "," : "") << "{\"value\":" << fmt_double(j[c].value)
       << ",\"empty\":" << (j[c].empty ? "true" : "false") << "}";
  }
  os << "],\"dsc\":[";
  for (int c = 0; c < kClassCount; ++c) {
    os << (c ? "," : "") << "{\"value\":" << fmt_double(dsc[c].value)
       << ",\"empty\":" << (dsc[c].empty ? "true" : "false") << "}";
  }
  os << "],\"j_average\":" << fmt_double(j_average);
  os << ",\"dsc_average\":" << fmt_double(dsc_average) << "}";
  return os.str();
}

MetricsReport MetricsReport::from_json_string(const std::string& s) {
  nlohmann::json jj = nlohmann::json::parse(s);
  MetricsReport r;
  r.mode = jj.at("mode").get<std::string>() == "micro" ? Averaging::micro : Averaging::macro;
  r.pair_count = jj.at("pair_count").get<int64_t>();
  r.subset = jj.at("subset").get<std::vector<int>>();
  for (int c = 0; c < kClassCount; ++c) {
    r.j[c] = {jj.at("j").at(c).at("value").get<double>(), jj.at("j").at(c).at("empty").get<bool>()};
    r.dsc[c] = {jj.at("dsc").at(c).at("value").get<double>(),
                jj.at("dsc").at(c).at("empty").get<bool>()};
  }
  r.j_average = jj.at("j_average").get<double>();
  r.dsc_average = jj.at("dsc_average").get<double>();
  return r;
}

static const char* kRowOrder[] = {"left_lung", "heart", "right_lung"};

static int code_of_row(const char* name) { return *class_code_by_name(name); }

std::string report_to_markdown(const MetricsReport& r) {
  std::ostringstream os;
  os << "| Metric | Class | Value |\n|---|---|---|\n";
  char buf[32];
  for (const char* metric : {"J", "DSC"}) {
    const auto& arr = metric[0] == 'J' ? r.j : r.dsc;
    double avg = metric[0] == 'J' ? r.j_average : r.dsc_average;
    for (const char* row : kRowOrder) {
      int c = code_of_row(row);
      std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * arr[c].value);
      os << "| " << metric << " | " << row << " | " << buf << " |\n";
    }
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * avg);
    os << "| " << metric << " | average | " << buf << " |\n";
  }
  return os.str();
}

std::string report_to_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "metric,class,value\n";
  for (const char* metric : {"J", "DSC"}) {
    const auto& arr = metric[0] == 'J' ? r.j : r.dsc;
    double avg = metric[0] == 'J' ? r.j_average : r.dsc_average;
    for (const char* row : kRowOrder) {
      int c = code_of_row(row);
      os << metric << "," << row << "," << fmt_double(arr[c].value) << "\n";
    }
    os << metric << ",average," << fmt_double(avg) << "\n";
  }
  return os.str();
}

}  // namespace cxrgen
