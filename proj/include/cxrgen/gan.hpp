#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include "json.hpp"

#include "cxrgen/nn/checkpoint.hpp"
#include "cxrgen/nn/layers.hpp"
#include "cxrgen/types.hpp"

namespace cxrgen {

// Resolution doubles per stage from start_res up to target_res; each stage
// owns a step budget, and new blocks fade in over fade_fraction of it.
struct GrowthSchedule {
  int start_res = 4;
  int target_res = 64;
  std::vector<int> stage_steps;  // one entry per stage
  double fade_fraction = 0.5;

  std::vector<int> resolutions() const;
  int stages() const;
  void validate() const;

  nlohmann::json to_json() const;
  static GrowthSchedule from_json(const nlohmann::json& j);
};

struct GanConfig {
  int latent_dim = 64;
  int out_channels = 1;        // 1 = label/dot maps, 2 = stacked image+label
  int max_feature_maps = 64;   // hard cap on every layer's width
  int fmap_base = 1024;        // nf(res) = clamp(fmap_base / res, 1, cap)
  GrowthSchedule schedule;
  uint64_t seed = 1;
  int batch = 8;
  double lr = 1e-3;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.99;
  double drift_weight = 1e-3;  // keeps real scores from drifting

  int nf(int res) const;
  void validate() const;
  nlohmann::json to_json() const;
  static GanConfig from_json(const nlohmann::json& j);
};

class PgGenerator : public nn::Module {
 public:
  PgGenerator(const GanConfig& cfg, Rng& rng);
  // z is [latent_dim]; output [out_channels, res, res] at the stage's
  // resolution. At alpha=0 right after a grow, the output is exactly the
  // nearest-upsampled previous-stage output.
  nn::Var forward(nn::Tape& t, const nn::Var& z, int stage, double alpha) const;
  std::vector<int> feature_widths() const;

 private:
  GanConfig cfg_;
  nn::Linear fc_;
  nn::Conv2d conv0_;
  std::vector<nn::Conv2d> conv_a_, conv_b_;  // stage k lives at index k-1
  std::vector<nn::Conv2d> to_rgb_;           // per stage
};

class PgDiscriminator : public nn::Module {
 public:
  PgDiscriminator(const GanConfig& cfg, Rng& rng);
  nn::Var forward(nn::Tape& t, const nn::Var& x, int stage, double alpha) const;
  std::vector<int> feature_widths() const;

 private:
  GanConfig cfg_;
  std::vector<nn::Conv2d> from_rgb_;
  std::vector<nn::Conv2d> conv_a_, conv_b_;
  nn::Conv2d conv0_;
  nn::Linear fc1_, fc2_;
};

struct GanStepLog {
  int64_t step = 0;  // global step counter
  int stage = 0;
  double alpha = 1.0;
  double d_loss = 0.0;
  double g_loss = 0.0;
};

// Least-squares adversarial objective on symmetric grower pairs; see
// train_adversarial for the schedule/fade bookkeeping.
class ProgressiveGan {
 public:
  explicit ProgressiveGan(const GanConfig& cfg);

  using StepCallback = std::function<void(const GanStepLog&)>;
  using StageCallback = std::function<void(int stage)>;

  // data: grids at target resolution, channels == out_channels, values in the
  // [-1,1] network domain. Runs the remaining budget (resumable).
  std::vector<GanStepLog> train_adversarial(const std::vector<ChannelGrid>& data,
                                            const StepCallback& on_step = {},
                                            const StageCallback& on_stage_end = {});

  void grow();  // StateError past the final stage

  // Deterministic per (state, seed); grids come back in the [-1,1] domain.
  std::vector<ChannelGrid> sample(int n, uint64_t seed) const;

  void save(const std::filesystem::path& file, const nlohmann::json& extra_meta = {}) const;
  static std::unique_ptr<ProgressiveGan> load(const std::filesystem::path& file);

  const GanConfig& config() const { return cfg_; }
  int stage() const { return stage_; }
  int current_resolution() const;
  double alpha() const;
  int64_t total_steps() const { return total_steps_; }
  int64_t steps_in_stage() const { return step_in_stage_; }
  const PgGenerator& generator() const { return *gen_; }
  const PgDiscriminator& discriminator() const { return *disc_; }
  PgGenerator& generator() { return *gen_; }

 private:
  GanConfig cfg_;
  std::unique_ptr<PgGenerator> gen_;
  std::unique_ptr<PgDiscriminator> disc_;
  std::unique_ptr<nn::Adam> opt_g_, opt_d_;
  int stage_ = 0;
  int64_t step_in_stage_ = 0;
  int64_t total_steps_ = 0;
  Rng train_rng_;
};

// Value-domain helpers shared by every stage that feeds the GAN.
double code_to_level(int code);
int level_to_code(double level);
ChannelGrid labels_to_gan(const LabelMap& labels);
ChannelGrid stacked_to_gan(const GrayImage& image, const LabelMap& labels);
LabelMap gan_to_labels(const ChannelGrid& grid, int channel);
GrayImage gan_to_image(const ChannelGrid& grid, int channel);
ChannelGrid downsample2_grid(const ChannelGrid& g);

}  // namespace cxrgen
