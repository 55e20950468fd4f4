#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "json.hpp"

#include "cxrgen/dataset.hpp"
#include "cxrgen/metrics.hpp"

namespace cxrgen {

enum class Pipeline { single_stage, two_stage, three_stage, real_only };
enum class Regime { full, tiny, custom };

std::string pipeline_name(Pipeline p);
Pipeline pipeline_from_name(const std::string& s);
std::string regime_name(Regime r);
Regime regime_from_name(const std::string& s);

struct DataSourceSpec {
  std::string kind = "phantom";  // phantom | real
  PhantomConfig phantom;         // phantom.count = train pool size
  int phantom_test_count = 40;
  std::filesystem::path real_root;
};

struct Budgets {
  int gan_stage_steps = 60;
  int gan_batch = 8;
  double gan_lr = 1e-3;
  int translator_steps = 200;
  int translator_batch = 2;
  double translator_lr = 2e-4;
  int translator_base_filters = 16;
  int translator_res_blocks = 2;
  int translator_disc_scales = 2;
  double fm_weight = 10.0;
  int seg_steps = 400;
  int seg_batch = 4;
  double seg_lr = 1e-4;
  int seg_crop = 377;
  int seg_base_width = 16;
  int finetune_steps = 100;
};

// Declarative description of one experiment. Counts default to the reference
// protocol (FULL: 124 real -> 744 augmented; pool 10,000 split 7500/2500;
// TINY: 11 real -> 66 augmented); `scale` shrinks the synthetic counts for
// desk-sized runs without touching the protocol arithmetic.
struct ExperimentManifest {
  std::string name = "experiment";
  Pipeline pipeline = Pipeline::three_stage;
  Regime regime = Regime::custom;
  double custom_fraction = 1.0;
  int synth_train_count = 7500;
  int synth_val_count = 2500;
  int generation_pool = 10000;
  bool finetune = true;
  uint64_t master_seed = 1;
  int image_res = 128;
  int dot_res = 64;
  int dot_radius = 2;
  int variants = 6;  // per selected real image, original included
  double scale = 1.0;
  bool stub_generation = false;
  int latent_dim = 64;
  DataSourceSpec data;
  Budgets budgets;
  std::filesystem::path output_dir = "runs/experiment";

  int scaled(int count) const;
  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentManifest from_json(const nlohmann::json& j);
  static ExperimentManifest load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;
};

// Per-stage seed derivation: every stage draws its stream from the master
// seed mixed with the stage name, so stages can be re-run independently.
uint64_t stage_seed(uint64_t master_seed, const std::string& stage_name);

struct RunCounts {
  int real_train = 0;
  int real_test = 0;
  int selected_train = 0;
  int augmented_train = 0;
  int pool = 0;
  int synth_train = 0;
  int synth_val = 0;
};

struct RunRecord {
  nlohmann::json manifest;
  std::string pipeline_label;
  bool finetuned = false;
  std::map<std::string, std::string> checkpoints;  // stage -> path
  RunCounts counts;
  MetricsReport pretrain_metrics;
  std::optional<MetricsReport> finetune_metrics;
  nlohmann::json probes;
  std::map<std::string, double> wall_clock_s;
  std::string eval_fingerprint;
  double synth_val_loss = 0.0;
  std::string note;

  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& file) const;
  static RunRecord load(const std::filesystem::path& file);
};

}  // namespace cxrgen
