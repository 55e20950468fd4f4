#include "cxrgen/segmenter.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cxrgen/errors.hpp"

namespace cxrgen {

using nn::Conv2dSpec;
using nn::Tape;
using nn::Var;

void SegmenterConfig::validate() const {
  if (class_count < 2) throw ConfigError("class_count must be >= 2");
  if (crop < 8) throw ConfigError("crop must be >= 8");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (encoder_blocks < 1) throw ConfigError("encoder_blocks must be >= 1");
  if (decoder_levels < 1 || decoder_levels > 2) throw ConfigError("decoder_levels must be 1 or 2");
  if (base_width < 2) throw ConfigError("base_width must be >= 2");
  if (!class_weights.empty() && static_cast<int>(class_weights.size()) != class_count) {
    throw ConfigError("class_weights must match class_count");
  }
}

nlohmann::json SegmenterConfig::to_json() const {
  return {{"class_count", class_count},
          {"crop", crop},
          {"batch", batch},
          {"lr", lr},
          {"encoder_blocks", encoder_blocks},
          {"attention", attention},
          {"decoder_levels", decoder_levels},
          {"steps", steps},
          {"seed", seed},
          {"base_width", base_width},
          {"class_weights", class_weights},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2}};
}

SegmenterConfig SegmenterConfig::from_json(const nlohmann::json& j) {
  SegmenterConfig c;
  c.class_count = j.value("class_count", kClassCount);
  c.crop = j.value("crop", 377);
  c.batch = j.value("batch", 17);
  c.lr = j.value("lr", 1e-4);
  c.encoder_blocks = j.value("encoder_blocks", 2);
  c.attention = j.value("attention", true);
  c.decoder_levels = j.value("decoder_levels", 2);
  c.steps = j.value("steps", 300);
  c.seed = j.value("seed", uint64_t{1});
  c.base_width = j.value("base_width", 16);
  c.class_weights = j.value("class_weights", std::vector<double>{});
  c.adam_beta1 = j.value("adam_beta1", 0.9);
  c.adam_beta2 = j.value("adam_beta2", 0.999);
  return c;
}

// ---- sliding window ------------------------------------------------------------

std::vector<int> sliding_offsets(int len, int window) {
  if (len < 1 || window < 1) throw ShapeError("sliding_offsets: bad lengths");
  if (window >= len) return {0};
  std::vector<int> offs;
  for (int o = 0; o + window <= len; o += window) offs.push_back(o);
  if (offs.back() + window < len) offs.push_back(len - window);
  return offs;
}

SegPrediction predict_sliding_with(const GrayImage& image, int window, int class_count,
                                   const WindowScoreFn& fn) {
  const int h = image.height, w = image.width;
  const int win_h = std::min(window, h), win_w = std::min(window, w);
  auto offs_y = sliding_offsets(h, win_h);
  auto offs_x = sliding_offsets(w, win_w);

  ChannelGrid sum(class_count, h, w);
  std::vector<int> counts(static_cast<size_t>(h) * w, 0);
  for (int oy : offs_y) {
    for (int ox : offs_x) {
      GrayImage crop(win_h, win_w);
      for (int y = 0; y < win_h; ++y) {
        for (int x = 0; x < win_w; ++x) crop.at(y, x) = image.at(oy + y, ox + x);
      }
      ChannelGrid scores = fn(crop, oy, ox);
      if (scores.channels != class_count || scores.height != win_h || scores.width != win_w) {
        throw ShapeError("predict_sliding: window score shape mismatch");
      }
      for (int c = 0; c < class_count; ++c) {
        for (int y = 0; y < win_h; ++y) {
          for (int x = 0; x < win_w; ++x) {
            sum.at(c, oy + y, ox + x) += scores.at(c, y, x);
          }
        }
      }
      for (int y = 0; y < win_h; ++y) {
        for (int x = 0; x < win_w; ++x) {
          ++counts[static_cast<size_t>(oy + y) * w + ox + x];
        }
      }
    }
  }
  for (int c = 0; c < class_count; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        sum.at(c, y, x) /= counts[static_cast<size_t>(y) * w + x];
      }
    }
  }

  SegPrediction pred;
  pred.labels = LabelMap(h, w);
  size_t plane = pred.labels.size();
  for (size_t i = 0; i < plane; ++i) {
    int best = 0;
    double best_v = sum.values[i];
    for (int c = 1; c < class_count; ++c) {
      double v = sum.values[c * plane + i];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    pred.labels.codes[i] = static_cast<uint8_t>(best);
  }
  pred.scores = std::move(sum);
  return pred;
}

// ---- network --------------------------------------------------------------------

SegNet::SegNet(const SegmenterConfig& cfg, Rng& rng) : cfg_(cfg) {
  const int b = cfg.base_width;
  auto make_stage = [&](std::vector<Block>& stage, const std::string& name, int in_c, int out_c,
                        int stride, int dilation) {
    for (int i = 0; i < cfg.encoder_blocks; ++i) {
      Block blk;
      int ic = i == 0 ? in_c : out_c;
      int s = i == 0 ? stride : 1;
      std::string p = name + std::to_string(i);
      blk.conv1 = nn::Conv2d(*this, p + ".c1", ic, out_c, 3, {s, dilation, dilation}, rng);
      blk.n1 = nn::InstanceNorm(*this, p + ".n1", out_c);
      blk.conv2 = nn::Conv2d(*this, p + ".c2", out_c, out_c, 3, {1, dilation, dilation}, rng);
      blk.n2 = nn::InstanceNorm(*this, p + ".n2", out_c);
      blk.has_proj = ic != out_c || s != 1;
      if (blk.has_proj) {
        blk.proj = nn::Conv2d(*this, p + ".proj", ic, out_c, 1, {s, 0, 1}, rng);
        blk.nproj = nn::InstanceNorm(*this, p + ".nproj", out_c);
      }
      stage.push_back(std::move(blk));
    }
  };

  stem_ = nn::Conv2d(*this, "stem", 1, b, 3, {2, 1, 1}, rng);
  stem_norm_ = nn::InstanceNorm(*this, "stem_norm", b);
  make_stage(stage1_, "s1b", b, 2 * b, 2, 1);
  make_stage(stage2_, "s2b", 2 * b, 3 * b, 1, 2);  // dilated, no further downsampling
  make_stage(stage3_, "s3b", 3 * b, 4 * b, 1, 4);

  const int fc = 4 * b;
  if (cfg.attention) {
    for (int s = 0; s < 3; ++s) {
      attn_ctx_.emplace_back(*this, "attn.ctx" + std::to_string(s), fc, fc, 1, Conv2dSpec{1, 0, 1},
                             rng);
    }
    attn_gate_ = nn::Conv2d(*this, "attn.gate", fc, fc, 3, {1, 1, 1}, rng, false, 1.0);
  } else {
    for (int s = 0; s < 4; ++s) {
      psp_reduce_.emplace_back(*this, "psp.red" + std::to_string(s), fc, b, 1, Conv2dSpec{1, 0, 1},
                               rng);
      psp_norm_.emplace_back(*this, "psp.norm" + std::to_string(s), b);
    }
    psp_fuse_ = nn::Conv2d(*this, "psp.fuse", fc + 4 * b, fc, 3, {1, 1, 1}, rng);
    psp_fuse_norm_ = nn::InstanceNorm(*this, "psp.fuse_norm", fc);
  }

  if (cfg.decoder_levels == 2) {
    dec1_ = nn::Conv2d(*this, "dec1", fc + b, 2 * b, 3, {1, 1, 1}, rng);
    dec1_norm_ = nn::InstanceNorm(*this, "dec1_norm", 2 * b);
    dec2_ = nn::Conv2d(*this, "dec2", 2 * b, b, 3, {1, 1, 1}, rng);
    dec2_norm_ = nn::InstanceNorm(*this, "dec2_norm", b);
    head_ = nn::Conv2d(*this, "head", b, cfg.class_count, 1, {1, 0, 1}, rng, false, 1.0);
  } else {
    dec2_ = nn::Conv2d(*this, "dec2", fc, b, 3, {1, 1, 1}, rng);
    dec2_norm_ = nn::InstanceNorm(*this, "dec2_norm", b);
    head_ = nn::Conv2d(*this, "head", b, cfg.class_count, 1, {1, 0, 1}, rng, false, 1.0);
  }
}

Var SegNet::run_block(Tape& t, const Block& blk, const Var& x) const {
  Var h = nn::relu(t, blk.n1(t, blk.conv1(t, x)));
  h = blk.n2(t, blk.conv2(t, h));
  Var skip = blk.has_proj ? blk.nproj(t, blk.proj(t, x)) : x;
  return nn::relu(t, nn::add(t, h, skip));
}

Var SegNet::forward(Tape& t, const Var& image) const {
  const int H = image->dim(1), W = image->dim(2);
  Var stem = nn::relu(t, stem_norm_(t, stem_(t, image)));
  Var h = stem;
  for (const auto& blk : stage1_) h = run_block(t, blk, h);
  for (const auto& blk : stage2_) h = run_block(t, blk, h);
  for (const auto& blk : stage3_) h = run_block(t, blk, h);

  const int fh = h->dim(1), fw = h->dim(2);
  if (cfg_.attention) {
    // Multi-scale context maps gate the features channelwise.
    const int bins[3] = {1, 2, 4};
    Var ctx;
    for (int s = 0; s < 3; ++s) {
      Var p = nn::adaptive_avg_pool(t, h, std::min(bins[s], fh), std::min(bins[s], fw));
      p = attn_ctx_[static_cast<size_t>(s)](t, p);
      p = nn::upsample_nearest_to(t, p, fh, fw);
      ctx = ctx ? nn::add(t, ctx, p) : p;
    }
    Var gate = nn::sigmoid_op(t, attn_gate_(t, ctx));
    h = nn::add(t, h, nn::mul(t, h, gate));
  } else {
    const int bins[4] = {1, 2, 3, 6};
    Var cat = h;
    for (int s = 0; s < 4; ++s) {
      Var p = nn::adaptive_avg_pool(t, h, std::min(bins[s], fh), std::min(bins[s], fw));
      p = nn::relu(t, psp_norm_[static_cast<size_t>(s)](t, psp_reduce_[static_cast<size_t>(s)](t, p)));
      p = nn::upsample_nearest_to(t, p, fh, fw);
      cat = nn::concat_ch(t, cat, p);
    }
    h = nn::relu(t, psp_fuse_norm_(t, psp_fuse_(t, cat)));
  }

  if (cfg_.decoder_levels == 2) {
    h = nn::upsample_nearest_to(t, h, stem->dim(1), stem->dim(2));
    h = nn::concat_ch(t, h, stem);
    h = nn::relu(t, dec1_norm_(t, dec1_(t, h)));
    h = nn::upsample_nearest_to(t, h, H, W);
    h = nn::relu(t, dec2_norm_(t, dec2_(t, h)));
  } else {
    h = nn::upsample_nearest_to(t, h, H, W);
    h = nn::relu(t, dec2_norm_(t, dec2_(t, h)));
  }
  return head_(t, h);
}

// ---- padding / crops -------------------------------------------------------------

template <typename T, typename Get, typename Set>
static void reflect_into(int h, int w, int size, const Get& get, const Set& set) {
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    int period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
  };
  int oh = std::max(h, size), ow = std::max(w, size);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) set(y, x, get(reflect(y, h), reflect(x, w)));
  }
  (void)size;
}

GrayImage pad_reflect(const GrayImage& img, int size) {
  if (img.height >= size && img.width >= size) return img;
  GrayImage out(std::max(img.height, size), std::max(img.width, size));
  reflect_into<double>(img.height, img.width, size,
                       [&](int y, int x) { return img.at(y, x); },
                       [&](int y, int x, double v) { out.at(y, x) = v; });
  return out;
}

LabelMap pad_reflect(const LabelMap& map, int size) {
  if (map.height >= size && map.width >= size) return map;
  LabelMap out(std::max(map.height, size), std::max(map.width, size));
  reflect_into<uint8_t>(map.height, map.width, size,
                        [&](int y, int x) { return map.at(y, x); },
                        [&](int y, int x, uint8_t v) { out.at(y, x) = v; });
  return out;
}

// ---- segmenter -------------------------------------------------------------------

Segmenter::Segmenter(const SegmenterConfig& cfg)
    : cfg_(cfg), window_(cfg.crop), train_rng_(mix_seed(cfg.seed, 0x5e6)) {
  cfg_.validate();
  Rng init_rng(mix_seed(cfg_.seed, 0x5e60));
  net_ = std::make_unique<SegNet>(cfg_, init_rng);
  opt_ = std::make_unique<nn::Adam>(net_->params(),
                                    nn::AdamConfig{cfg_.lr, cfg_.adam_beta1, cfg_.adam_beta2, 1e-8});
}

std::vector<SegStepLog> Segmenter::train(const std::vector<DatasetEntry>& data, int steps,
                                         const std::string& data_tag,
                                         const StepCallback& on_step) {
  if (data.empty()) throw ConfigError("segmenter train: empty dataset");
  int min_dim = 1 << 30;
  for (const auto& e : data) {
    if (e.image.height != e.labels.height || e.image.width != e.labels.width) {
      throw ShapeError("segmenter train: entry " + e.id + " has mismatched dims");
    }
    min_dim = std::min({min_dim, e.image.height, e.image.width});
  }
  const int crop = std::min(cfg_.crop, min_dim);
  window_ = crop;

  std::vector<SegStepLog> logs;
  auto params = net_->params();

  for (int step = 0; step < steps; ++step) {
    struct Draw {
      int idx, cy, cx;
    };
    std::vector<Draw> draws(static_cast<size_t>(cfg_.batch));
    for (auto& d : draws) {
      // Uniform with replacement; datasets smaller than the batch are fine.
      d.idx = train_rng_.uniform_int(static_cast<int>(data.size()));
      const auto& e = data[static_cast<size_t>(d.idx)];
      int hr = std::max(1, e.image.height - crop + 1);
      int wr = std::max(1, e.image.width - crop + 1);
      d.cy = train_rng_.uniform_int(hr);
      d.cx = train_rng_.uniform_int(wr);
    }

    std::vector<Tape> tapes(static_cast<size_t>(cfg_.batch));
    std::vector<double> losses(static_cast<size_t>(cfg_.batch), 0.0);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < cfg_.batch; ++i) {
      Tape& t = tapes[static_cast<size_t>(i)];
      const auto& d = draws[static_cast<size_t>(i)];
      const auto& e = data[static_cast<size_t>(d.idx)];
      GrayImage img = pad_reflect(e.image, crop);
      LabelMap lab = pad_reflect(e.labels, crop);

      Var x = nn::make_var({1, crop, crop});
      auto target = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(crop) * crop);
      for (int y = 0; y < crop; ++y) {
        for (int xx = 0; xx < crop; ++xx) {
          x->data[static_cast<size_t>(y) * crop + xx] = 2.0 * img.at(d.cy + y, d.cx + xx) - 1.0;
          (*target)[static_cast<size_t>(y) * crop + xx] = lab.at(d.cy + y, d.cx + xx);
        }
      }
      Var logits = net_->forward(t, x);
      Var loss = nn::softmax_cross_entropy(t, logits, target, cfg_.class_weights);
      losses[static_cast<size_t>(i)] = loss->data[0];
      t.backward(loss);
    }
    opt_->zero_grad();
    nn::reduce_tape_grads(params, tapes, 1.0 / cfg_.batch);
    opt_->step();

    double loss = 0;
    for (double l : losses) loss += l / cfg_.batch;
    ++total_steps_;
    if (!std::isfinite(loss)) throw TrainingDiverged("non-finite segmentation loss", total_steps_);
    SegStepLog log{total_steps_, loss};
    logs.push_back(log);
    if (on_step) on_step(log);
  }

  phases_.push_back({{"data", data_tag}, {"steps", steps}, {"crop", crop}});
  return logs;
}

ChannelGrid Segmenter::score_crop(const GrayImage& crop) const {
  Tape t;
  t.set_recording(false);
  Var x = nn::make_var({1, crop.height, crop.width});
  for (size_t i = 0; i < crop.size(); ++i) x->data[i] = 2.0 * crop.intensities[i] - 1.0;
  return nn::to_grid(net_->forward(t, x));
}

SegPrediction Segmenter::predict_sliding(const GrayImage& image) const {
  return predict_sliding_with(image, window_, cfg_.class_count,
                              [this](const GrayImage& crop, int, int) { return score_crop(crop); });
}

double Segmenter::eval_loss(const std::vector<DatasetEntry>& data, int max_items) const {
  if (data.empty()) throw ConfigError("eval_loss: empty dataset");
  int n = max_items > 0 ? std::min<int>(max_items, static_cast<int>(data.size()))
                        : static_cast<int>(data.size());
  double total = 0;
  for (int i = 0; i < n; ++i) {
    const auto& e = data[static_cast<size_t>(i)];
    Tape t;
    t.set_recording(false);
    Var x = nn::make_var({1, e.image.height, e.image.width});
    for (size_t k = 0; k < e.image.size(); ++k) x->data[k] = 2.0 * e.image.intensities[k] - 1.0;
    Var logits = net_->forward(t, x);
    auto target = std::make_shared<std::vector<uint8_t>>(e.labels.codes);
    Tape lt;  // loss needs a live tape even without recording
    lt.set_recording(false);
    Var loss = nn::softmax_cross_entropy(lt, logits, target, cfg_.class_weights);
    total += loss->data[0];
  }
  return total / n;
}

void Segmenter::save(const std::filesystem::path& file, const nlohmann::json& extra_meta) const {
  nlohmann::json meta = extra_meta;
  meta["kind"] = "segmenter";
  meta["phases"] = phases_;
  meta["window"] = window_;
  nn::save_checkpoint(file, cfg_.to_json(), meta, 0, total_steps_, *net_, opt_->state_blob(),
                      opt_->steps_taken());
}

std::unique_ptr<Segmenter> Segmenter::load(const std::filesystem::path& file) {
  nn::Checkpoint ckpt = nn::load_checkpoint(file);
  if (ckpt.meta.value("kind", "") != "segmenter") throw StateError("not a segmenter checkpoint");
  auto seg = std::make_unique<Segmenter>(SegmenterConfig::from_json(ckpt.config));
  nn::load_into_module(ckpt, *seg->net_);
  seg->total_steps_ = ckpt.step;
  seg->phases_ = ckpt.meta.value("phases", nlohmann::json::array());
  seg->window_ = ckpt.meta.value("window", seg->cfg_.crop);
  if (!ckpt.opt_state.empty()) seg->opt_->load_state_blob(ckpt.opt_state, ckpt.opt_steps);
  return seg;
}

std::unique_ptr<Segmenter> train_segmenter(const std::vector<DatasetEntry>& data,
                                           const SegmenterConfig& cfg, const std::string& data_tag,
                                           const Segmenter::StepCallback& on_step) {
  auto seg = std::make_unique<Segmenter>(cfg);
  seg->train(data, cfg.steps, data_tag, on_step);
  return seg;
}

void finetune_segmenter(Segmenter& seg, const std::vector<DatasetEntry>& real_data, int steps,
                        const Segmenter::StepCallback& on_step) {
  seg.train(real_data, steps, "real", on_step);
}

}  // namespace cxrgen
