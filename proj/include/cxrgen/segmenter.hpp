#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "cxrgen/dataset.hpp"
#include "cxrgen/nn/checkpoint.hpp"
#include "cxrgen/nn/layers.hpp"
#include "cxrgen/types.hpp"

namespace cxrgen {

struct SegmenterConfig {
  int class_count = kClassCount;
  int crop = 377;
  int batch = 17;
  double lr = 1e-4;
  int encoder_blocks = 2;   // residual blocks per encoder stage
  bool attention = true;    // false selects the pooling-pyramid fallback
  int decoder_levels = 2;
  int steps = 300;
  uint64_t seed = 1;
  int base_width = 16;
  std::vector<double> class_weights;  // empty = uniform
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;

  void validate() const;
  nlohmann::json to_json() const;
  static SegmenterConfig from_json(const nlohmann::json& j);
};

struct SegPrediction {
  ChannelGrid scores;  // per-class logits, window-averaged
  LabelMap labels;     // argmax of scores
};

// Window offsets along one axis: stride = window, with the last window shifted
// back to abut the border. A length not exceeding the window yields {0}.
std::vector<int> sliding_offsets(int len, int window);

// Stitches per-window class scores over the full image, averaging overlaps.
// The score function receives the crop and its (row, col) offset.
using WindowScoreFn = std::function<ChannelGrid(const GrayImage& crop, int oy, int ox)>;
SegPrediction predict_sliding_with(const GrayImage& image, int window, int class_count,
                                   const WindowScoreFn& fn);

// Dilated-encoder segmentation network with a multi-scale attention context
// block and a two-level convolutional decoder. Output dims equal input dims
// for any input of at least 8x8.
class SegNet : public nn::Module {
 public:
  SegNet(const SegmenterConfig& cfg, Rng& rng);
  nn::Var forward(nn::Tape& t, const nn::Var& image) const;  // [1,H,W] -> [C,H,W]

 private:
  struct Block {
    nn::Conv2d conv1, conv2, proj;
    nn::InstanceNorm n1, n2, nproj;
    bool has_proj = false;
  };
  nn::Var run_block(nn::Tape& t, const Block& b, const nn::Var& x) const;

  SegmenterConfig cfg_;
  nn::Conv2d stem_;
  nn::InstanceNorm stem_norm_;
  std::vector<Block> stage1_, stage2_, stage3_;
  // attention path
  std::vector<nn::Conv2d> attn_ctx_;
  nn::Conv2d attn_gate_;
  // pyramid-pooling fallback path
  std::vector<nn::Conv2d> psp_reduce_;
  std::vector<nn::InstanceNorm> psp_norm_;
  nn::Conv2d psp_fuse_;
  nn::InstanceNorm psp_fuse_norm_;
  // decoder
  nn::Conv2d dec1_, dec2_, head_;
  nn::InstanceNorm dec1_norm_, dec2_norm_;
};

struct SegStepLog {
  int64_t step = 0;
  double loss = 0.0;
};

class Segmenter {
 public:
  explicit Segmenter(const SegmenterConfig& cfg);

  using StepCallback = std::function<void(const SegStepLog&)>;
  // Runs `steps` optimizer steps on random crops; appends a provenance phase
  // tagged with data_tag to the checkpoint metadata.
  std::vector<SegStepLog> train(const std::vector<DatasetEntry>& data, int steps,
                                const std::string& data_tag, const StepCallback& on_step = {});

  ChannelGrid score_crop(const GrayImage& crop) const;             // logits
  SegPrediction predict_sliding(const GrayImage& image) const;
  int inference_window() const { return window_; }
  void set_inference_window(int w) { window_ = w; }

  double eval_loss(const std::vector<DatasetEntry>& data, int max_items = 0) const;

  void save(const std::filesystem::path& file, const nlohmann::json& extra_meta = {}) const;
  static std::unique_ptr<Segmenter> load(const std::filesystem::path& file);

  const SegmenterConfig& config() const { return cfg_; }
  const nlohmann::json& phases() const { return phases_; }
  SegNet& network() { return *net_; }
  int64_t total_steps() const { return total_steps_; }

 private:
  SegmenterConfig cfg_;
  std::unique_ptr<SegNet> net_;
  std::unique_ptr<nn::Adam> opt_;
  nlohmann::json phases_ = nlohmann::json::array();
  int64_t total_steps_ = 0;
  int window_ = 377;
  Rng train_rng_;
};

// Reflect-pads to at least (size x size); used when an image is smaller than
// the requested crop.
GrayImage pad_reflect(const GrayImage& img, int size);
LabelMap pad_reflect(const LabelMap& map, int size);

std::unique_ptr<Segmenter> train_segmenter(const std::vector<DatasetEntry>& data,
                                           const SegmenterConfig& cfg,
                                           const std::string& data_tag = "real",
                                           const Segmenter::StepCallback& on_step = {});
void finetune_segmenter(Segmenter& seg, const std::vector<DatasetEntry>& real_data, int steps,
                        const Segmenter::StepCallback& on_step = {});

}  // namespace cxrgen
