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

enum class OutputKind { label, image };

// source: one-hot class stack (0/1); target: one-hot class stack for label
// output, or a single [0,1] intensity channel for image output.
struct TranslationPair {
  ChannelGrid source;
  ChannelGrid target;
};

struct TranslatorConfig {
  int class_count = 6;
  OutputKind output_kind = OutputKind::image;
  int gen_levels = 1;    // coarse-to-fine generator levels
  int disc_scales = 2;   // multi-scale patch discriminators
  double fm_weight = 10.0;
  int steps = 200;
  int batch = 2;
  uint64_t seed = 1;
  int base_filters = 16;
  int res_blocks = 2;
  double lr = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;

  int source_channels() const { return class_count; }
  int output_channels() const { return output_kind == OutputKind::label ? class_count : 1; }
  void validate() const;
  nlohmann::json to_json() const;
  static TranslatorConfig from_json(const nlohmann::json& j);
};

ChannelGrid one_hot(const LabelMap& map, int class_count);
// Ties resolve to the lowest code.
LabelMap argmax_decode(const ChannelGrid& grid);

// Coarse-to-fine generator: a global encoder/resblock/decoder core plus
// optional finer-level enhancers that fuse their downsampled features with the
// coarser level's output features. Output passes through tanh.
class TranslatorGenerator : public nn::Module {
 public:
  TranslatorGenerator(const TranslatorConfig& cfg, Rng& rng);
  nn::Var forward(nn::Tape& t, const nn::Var& source) const;

 private:
  struct Level {
    nn::Conv2d stem;
    nn::InstanceNorm stem_norm;
    std::vector<nn::Conv2d> down;
    std::vector<nn::InstanceNorm> down_norm;
    std::vector<nn::Conv2d> res_a, res_b;
    std::vector<nn::InstanceNorm> res_a_norm, res_b_norm;
    std::vector<nn::Conv2d> up;
    std::vector<nn::InstanceNorm> up_norm;
  };
  TranslatorConfig cfg_;
  std::vector<Level> levels_;  // coarse first
  nn::Conv2d out_conv_;
};

// PatchGAN discriminator; exposes intermediate features for the
// feature-matching loss.
class PatchDiscriminator : public nn::Module {
 public:
  PatchDiscriminator(const std::string& prefix, int in_channels, int base_filters, Rng& rng);
  struct Result {
    nn::Var score;                 // patch score map
    std::vector<nn::Var> features;
  };
  Result forward(nn::Tape& t, const nn::Var& pair) const;

 private:
  std::vector<nn::Conv2d> convs_;
  std::vector<nn::InstanceNorm> norms_;  // no norm on the first layer
  nn::Conv2d out_;
};

struct TranslatorStepLog {
  int64_t step = 0;
  double d_loss = 0.0;
  double g_adv = 0.0;
  double g_fm = 0.0;   // unweighted feature-matching term
  double g_total = 0.0;
};

class Translator {
 public:
  explicit Translator(const TranslatorConfig& cfg);

  using StepCallback = std::function<void(const TranslatorStepLog&)>;
  std::vector<TranslatorStepLog> train_translation(const std::vector<TranslationPair>& pairs,
                                                   const StepCallback& on_step = {});

  // Adversarial and (unweighted) feature-matching losses of the generator for
  // one pair, on the given tape. Training composes total = adv + w * fm.
  std::pair<nn::Var, nn::Var> generator_adv_fm(nn::Tape& t, const TranslationPair& pair) const;

  ChannelGrid translate_raw(const ChannelGrid& source) const;  // tanh domain
  LabelMap translate_to_labels(const ChannelGrid& source) const;
  GrayImage translate_to_image(const ChannelGrid& source) const;

  void save(const std::filesystem::path& file, const nlohmann::json& extra_meta = {}) const;
  static std::unique_ptr<Translator> load(const std::filesystem::path& file);

  const TranslatorConfig& config() const { return cfg_; }
  TranslatorGenerator& generator() { return *gen_; }
  int64_t total_steps() const { return total_steps_; }

 private:
  void check_source(const ChannelGrid& source) const;

  TranslatorConfig cfg_;
  std::unique_ptr<TranslatorGenerator> gen_;
  std::vector<std::unique_ptr<PatchDiscriminator>> discs_;  // one per scale
  std::unique_ptr<nn::Adam> opt_g_, opt_d_;
  int64_t total_steps_ = 0;
  Rng train_rng_;
};

ChannelGrid image_to_domain(const GrayImage& img);         // [0,1] -> [-1,1]
ChannelGrid target_to_domain(const ChannelGrid& target);   // 2t - 1

}  // namespace cxrgen
