#include "cxrgen/gan.hpp"

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

// ---- schedule / config -------------------------------------------------------

std::vector<int> GrowthSchedule::resolutions() const {
  std::vector<int> out;
  for (int r = start_res; r <= target_res; r *= 2) out.push_back(r);
  return out;
}

int GrowthSchedule::stages() const { return static_cast<int>(resolutions().size()); }

void GrowthSchedule::validate() const {
  auto pow2 = [](int v) { return v >= 1 && (v & (v - 1)) == 0; };
  if (!pow2(start_res) || !pow2(target_res)) {
    throw ConfigError("schedule resolutions must be powers of two");
  }
  if (target_res < start_res) throw ConfigError("target resolution below start resolution");
  if (!(fade_fraction > 0.0 && fade_fraction < 1.0)) {
    throw ConfigError("fade_fraction must lie in (0,1)");
  }
  if (stage_steps.size() != static_cast<size_t>(stages())) {
    throw ConfigError("stage_steps must have one entry per stage");
  }
  for (int s : stage_steps) {
    if (s < 1) throw ConfigError("stage step budgets must be >= 1");
  }
}

nlohmann::json GrowthSchedule::to_json() const {
  return {{"start_res", start_res},
          {"target_res", target_res},
          {"stage_steps", stage_steps},
          {"fade_fraction", fade_fraction}};
}

GrowthSchedule GrowthSchedule::from_json(const nlohmann::json& j) {
  GrowthSchedule s;
  s.start_res = j.value("start_res", 4);
  s.target_res = j.at("target_res").get<int>();
  s.fade_fraction = j.value("fade_fraction", 0.5);
  if (j.contains("stage_steps")) {
    if (j["stage_steps"].is_number()) {
      s.stage_steps.assign(static_cast<size_t>(s.stages()), j["stage_steps"].get<int>());
    } else {
      s.stage_steps = j["stage_steps"].get<std::vector<int>>();
    }
  }
  return s;
}

int GanConfig::nf(int res) const {
  int n = fmap_base / res;
  return std::clamp(n, 1, max_feature_maps);
}

void GanConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  if (out_channels != 1 && out_channels != 2) throw ConfigError("out_channels must be 1 or 2");
  if (max_feature_maps < 1) throw ConfigError("max_feature_maps must be >= 1");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  schedule.validate();
}

nlohmann::json GanConfig::to_json() const {
  return {{"latent_dim", latent_dim},
          {"out_channels", out_channels},
          {"max_feature_maps", max_feature_maps},
          {"fmap_base", fmap_base},
          {"schedule", schedule.to_json()},
          {"seed", seed},
          {"batch", batch},
          {"lr", lr},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"drift_weight", drift_weight}};
}

GanConfig GanConfig::from_json(const nlohmann::json& j) {
  GanConfig c;
  c.latent_dim = j.value("latent_dim", 64);
  c.out_channels = j.value("out_channels", 1);
  c.max_feature_maps = j.value("max_feature_maps", 64);
  c.fmap_base = j.value("fmap_base", 1024);
  c.schedule = GrowthSchedule::from_json(j.at("schedule"));
  c.seed = j.value("seed", uint64_t{1});
  c.batch = j.value("batch", 8);
  c.lr = j.value("lr", 1e-3);
  c.adam_beta1 = j.value("adam_beta1", 0.0);
  c.adam_beta2 = j.value("adam_beta2", 0.99);
  c.drift_weight = j.value("drift_weight", 1e-3);
  return c;
}

// ---- generator ----------------------------------------------------------------

PgGenerator::PgGenerator(const GanConfig& cfg, Rng& rng) : cfg_(cfg) {
  const auto res = cfg.schedule.resolutions();
  const int base = cfg.schedule.start_res;
  fc_ = nn::Linear(*this, "fc", cfg.latent_dim, cfg.nf(base) * base * base, rng, true);
  conv0_ = nn::Conv2d(*this, "conv0", cfg.nf(base), cfg.nf(base), 3, {1, 1, 1}, rng, true);
  for (size_t k = 1; k < res.size(); ++k) {
    int r = res[k];
    conv_a_.emplace_back(*this, "stage" + std::to_string(k) + ".a", cfg.nf(r / 2), cfg.nf(r), 3,
                         Conv2dSpec{1, 1, 1}, rng, true);
    conv_b_.emplace_back(*this, "stage" + std::to_string(k) + ".b", cfg.nf(r), cfg.nf(r), 3,
                         Conv2dSpec{1, 1, 1}, rng, true);
  }
  for (size_t k = 0; k < res.size(); ++k) {
    to_rgb_.emplace_back(*this, "to_rgb" + std::to_string(k), cfg.nf(res[k]), cfg.out_channels, 1,
                         Conv2dSpec{1, 0, 1}, rng, true, 1.0);
  }
}

Var PgGenerator::forward(Tape& t, const Var& z, int stage, double alpha) const {
  const int base = cfg_.schedule.start_res;
  Var zz = nn::reshape_copy(t, z, {cfg_.latent_dim, 1, 1});
  zz = nn::pixel_norm(t, zz);
  Var h = fc_(t, zz);
  h = nn::reshape_copy(t, h, {cfg_.nf(base), base, base});
  h = nn::pixel_norm(t, nn::leaky_relu(t, h, 0.2));
  h = nn::pixel_norm(t, nn::leaky_relu(t, conv0_(t, h), 0.2));

  Var prev;
  for (int k = 1; k <= stage; ++k) {
    prev = h;
    h = nn::upsample_nearest2(t, h);
    h = nn::pixel_norm(t, nn::leaky_relu(t, conv_a_[static_cast<size_t>(k - 1)](t, h), 0.2));
    h = nn::pixel_norm(t, nn::leaky_relu(t, conv_b_[static_cast<size_t>(k - 1)](t, h), 0.2));
  }
  Var out = to_rgb_[static_cast<size_t>(stage)](t, h);
  if (stage > 0 && alpha < 1.0) {
    Var old = nn::upsample_nearest2(t, to_rgb_[static_cast<size_t>(stage - 1)](t, prev));
    out = nn::lerp(t, out, old, alpha);
  }
  return out;
}

std::vector<int> PgGenerator::feature_widths() const {
  std::vector<int> w;
  w.push_back(cfg_.nf(cfg_.schedule.start_res));  // fc output feature maps
  w.push_back(conv0_.w->dim(0));
  for (const auto& c : conv_a_) w.push_back(c.w->dim(0));
  for (const auto& c : conv_b_) w.push_back(c.w->dim(0));
  return w;
}

// ---- discriminator --------------------------------------------------------------

PgDiscriminator::PgDiscriminator(const GanConfig& cfg, Rng& rng) : cfg_(cfg) {
  const auto res = cfg.schedule.resolutions();
  const int base = cfg.schedule.start_res;
  for (size_t k = 0; k < res.size(); ++k) {
    from_rgb_.emplace_back(*this, "from_rgb" + std::to_string(k), cfg.out_channels,
                           cfg.nf(res[k]), 1, Conv2dSpec{1, 0, 1}, rng, true);
  }
  for (size_t k = 1; k < res.size(); ++k) {
    int r = res[k];
    conv_a_.emplace_back(*this, "dstage" + std::to_string(k) + ".a", cfg.nf(r), cfg.nf(r), 3,
                         Conv2dSpec{1, 1, 1}, rng, true);
    conv_b_.emplace_back(*this, "dstage" + std::to_string(k) + ".b", cfg.nf(r), cfg.nf(r / 2), 3,
                         Conv2dSpec{1, 1, 1}, rng, true);
  }
  conv0_ = nn::Conv2d(*this, "dconv0", cfg.nf(base), cfg.nf(base), 3, {1, 1, 1}, rng, true);
  fc1_ = nn::Linear(*this, "dfc1", cfg.nf(base) * base * base, cfg.nf(base), rng, true);
  fc2_ = nn::Linear(*this, "dfc2", cfg.nf(base), 1, rng, true, 1.0);
}

Var PgDiscriminator::forward(Tape& t, const Var& x, int stage, double alpha) const {
  Var h = nn::leaky_relu(t, from_rgb_[static_cast<size_t>(stage)](t, x), 0.2);
  if (stage > 0) {
    h = nn::leaky_relu(t, conv_a_[static_cast<size_t>(stage - 1)](t, h), 0.2);
    h = nn::leaky_relu(t, conv_b_[static_cast<size_t>(stage - 1)](t, h), 0.2);
    h = nn::avg_pool2(t, h);
    if (alpha < 1.0) {
      Var skip = nn::leaky_relu(
          t, from_rgb_[static_cast<size_t>(stage - 1)](t, nn::avg_pool2(t, x)), 0.2);
      h = nn::lerp(t, h, skip, alpha);
    }
    for (int k = stage - 1; k >= 1; --k) {
      h = nn::leaky_relu(t, conv_a_[static_cast<size_t>(k - 1)](t, h), 0.2);
      h = nn::leaky_relu(t, conv_b_[static_cast<size_t>(k - 1)](t, h), 0.2);
      h = nn::avg_pool2(t, h);
    }
  }
  h = nn::leaky_relu(t, conv0_(t, h), 0.2);
  h = nn::leaky_relu(t, fc1_(t, h), 0.2);
  return fc2_(t, h);
}

std::vector<int> PgDiscriminator::feature_widths() const {
  std::vector<int> w;
  for (const auto& c : from_rgb_) w.push_back(c.w->dim(0));
  for (const auto& c : conv_a_) w.push_back(c.w->dim(0));
  for (const auto& c : conv_b_) w.push_back(c.w->dim(0));
  w.push_back(conv0_.w->dim(0));
  w.push_back(fc1_.w->dim(0));
  return w;
}

// ---- training -------------------------------------------------------------------

ProgressiveGan::ProgressiveGan(const GanConfig& cfg)
    : cfg_(cfg), train_rng_(mix_seed(cfg.seed, 0x6a11)) {
  cfg_.validate();
  Rng init_rng(mix_seed(cfg_.seed, 0x11117));
  gen_ = std::make_unique<PgGenerator>(cfg_, init_rng);
  disc_ = std::make_unique<PgDiscriminator>(cfg_, init_rng);
  nn::AdamConfig ac{cfg_.lr, cfg_.adam_beta1, cfg_.adam_beta2, 1e-8};
  opt_g_ = std::make_unique<nn::Adam>(gen_->params(), ac);
  opt_d_ = std::make_unique<nn::Adam>(disc_->params(), ac);
}

int ProgressiveGan::current_resolution() const {
  return cfg_.schedule.resolutions()[static_cast<size_t>(stage_)];
}

double ProgressiveGan::alpha() const {
  if (stage_ == 0) return 1.0;
  int64_t budget = cfg_.schedule.stage_steps[static_cast<size_t>(stage_)];
  int64_t fade_steps = std::max<int64_t>(1, static_cast<int64_t>(cfg_.schedule.fade_fraction * budget));
  return std::min(1.0, static_cast<double>(step_in_stage_) / static_cast<double>(fade_steps));
}

void ProgressiveGan::grow() {
  if (stage_ + 1 >= cfg_.schedule.stages()) {
    throw StateError("grow: already at the final stage");
  }
  ++stage_;
  step_in_stage_ = 0;
}

ChannelGrid downsample2_grid(const ChannelGrid& g) {
  ChannelGrid out(g.channels, g.height / 2, g.width / 2);
  for (int c = 0; c < g.channels; ++c) {
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) {
        out.at(c, y, x) = 0.25 * (g.at(c, 2 * y, 2 * x) + g.at(c, 2 * y, 2 * x + 1) +
                                  g.at(c, 2 * y + 1, 2 * x) + g.at(c, 2 * y + 1, 2 * x + 1));
      }
    }
  }
  return out;
}

std::vector<GanStepLog> ProgressiveGan::train_adversarial(const std::vector<ChannelGrid>& data,
                                                          const StepCallback& on_step,
                                                          const StageCallback& on_stage_end) {
  if (data.empty()) throw ConfigError("train_adversarial: empty training data");
  const int target = cfg_.schedule.target_res;
  for (const auto& g : data) {
    if (g.channels != cfg_.out_channels || g.height != target || g.width != target) {
      throw ShapeError("train_adversarial: data must be [out_channels, target, target]");
    }
  }

  // Reals per resolution, built by repeated box downsampling.
  const auto resolutions = cfg_.schedule.resolutions();
  std::vector<std::vector<ChannelGrid>> pyramid(resolutions.size());
  pyramid.back() = data;
  for (size_t k = resolutions.size() - 1; k > 0; --k) {
    pyramid[k - 1].reserve(data.size());
    for (const auto& g : pyramid[k]) pyramid[k - 1].push_back(downsample2_grid(g));
  }

  std::vector<GanStepLog> logs;
  const int batch = std::min<int>(cfg_.batch, static_cast<int>(data.size()) * 4);
  auto g_params = gen_->params();
  auto d_params = disc_->params();

  while (true) {
    const int64_t budget = cfg_.schedule.stage_steps[static_cast<size_t>(stage_)];
    if (step_in_stage_ >= budget) {
      if (on_stage_end) on_stage_end(stage_);
      if (stage_ + 1 >= cfg_.schedule.stages()) break;
      grow();
      continue;
    }
    const double a = alpha();
    const auto& reals = pyramid[static_cast<size_t>(stage_)];

    // Pre-draw all per-sample randomness so threading never touches the rng.
    std::vector<int> real_idx(static_cast<size_t>(batch));
    std::vector<uint64_t> z_seed_d(static_cast<size_t>(batch)), z_seed_g(static_cast<size_t>(batch));
    for (int i = 0; i < batch; ++i) {
      real_idx[static_cast<size_t>(i)] = train_rng_.uniform_int(static_cast<int>(reals.size()));
      z_seed_d[static_cast<size_t>(i)] = train_rng_.next_u64();
      z_seed_g[static_cast<size_t>(i)] = train_rng_.next_u64();
    }

    double d_loss = 0.0, g_loss = 0.0;

    {  // discriminator step
      std::vector<Tape> tapes(static_cast<size_t>(batch));
      std::vector<double> losses(static_cast<size_t>(batch), 0.0);
#pragma omp parallel for schedule(static)
      for (int i = 0; i < batch; ++i) {
        Tape& t = tapes[static_cast<size_t>(i)];
        Rng zr(z_seed_d[static_cast<size_t>(i)]);
        Var z = nn::randn_var({cfg_.latent_dim}, zr);
        Var fake;
        {
          Tape nograd;
          nograd.set_recording(false);
          fake = gen_->forward(nograd, z, stage_, a);
          fake->requires_grad = false;
        }
        Var real = nn::from_grid(reals[static_cast<size_t>(real_idx[static_cast<size_t>(i)])]);
        Var score_real = disc_->forward(t, real, stage_, a);
        Var score_fake = disc_->forward(t, fake, stage_, a);
        Var loss = nn::add(t, nn::scale(t, nn::mse_to_const(t, score_real, 1.0), 0.5),
                           nn::scale(t, nn::mse_to_const(t, score_fake, 0.0), 0.5));
        loss = nn::add(t, loss,
                       nn::scale(t, nn::mse_to_const(t, score_real, 0.0), cfg_.drift_weight));
        losses[static_cast<size_t>(i)] = loss->data[0];
        t.backward(loss);
      }
      opt_d_->zero_grad();
      nn::reduce_tape_grads(d_params, tapes, 1.0 / batch);
      opt_d_->step();
      for (double l : losses) d_loss += l / batch;
    }

    {  // generator step; discriminator weights frozen but still on the path
      disc_->set_trainable(false);
      std::vector<Tape> tapes(static_cast<size_t>(batch));
      std::vector<double> losses(static_cast<size_t>(batch), 0.0);
#pragma omp parallel for schedule(static)
      for (int i = 0; i < batch; ++i) {
        Tape& t = tapes[static_cast<size_t>(i)];
        Rng zr(z_seed_g[static_cast<size_t>(i)]);
        Var z = nn::randn_var({cfg_.latent_dim}, zr);
        Var fake = gen_->forward(t, z, stage_, a);
        Var score = disc_->forward(t, fake, stage_, a);
        Var loss = nn::scale(t, nn::mse_to_const(t, score, 1.0), 0.5);
        losses[static_cast<size_t>(i)] = loss->data[0];
        t.backward(loss);
      }
      opt_g_->zero_grad();
      nn::reduce_tape_grads(g_params, tapes, 1.0 / batch);
      opt_g_->step();
      disc_->set_trainable(true);
      for (double l : losses) g_loss += l / batch;
    }

    ++step_in_stage_;
    ++total_steps_;
    if (!std::isfinite(d_loss) || !std::isfinite(g_loss)) {
      throw TrainingDiverged("non-finite adversarial loss", total_steps_);
    }
    GanStepLog log{total_steps_, stage_, a, d_loss, g_loss};
    logs.push_back(log);
    if (on_step) on_step(log);
  }
  return logs;
}

std::vector<ChannelGrid> ProgressiveGan::sample(int n, uint64_t seed) const {
  std::vector<ChannelGrid> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng zr(mix_seed(seed, static_cast<uint64_t>(i) + 0xbeef));
    Var z = nn::randn_var({cfg_.latent_dim}, zr);
    Tape t;
    t.set_recording(false);
    Var g = gen_->forward(t, z, stage_, 1.0);
    out.push_back(nn::to_grid(g));
  }
  return out;
}

void ProgressiveGan::save(const std::filesystem::path& file, const nlohmann::json& extra_meta) const {
  nn::ParamBag bag;
  bag.absorb("g.", *gen_);
  bag.absorb("d.", *disc_);
  nlohmann::json meta = extra_meta;
  meta["step_in_stage"] = step_in_stage_;
  meta["kind"] = "pggan";
  std::vector<nn::Scalar> opt = opt_g_->state_blob();
  auto od = opt_d_->state_blob();
  meta["opt_g_len"] = opt.size();
  meta["opt_g_steps"] = opt_g_->steps_taken();
  meta["opt_d_steps"] = opt_d_->steps_taken();
  opt.insert(opt.end(), od.begin(), od.end());
  nn::save_checkpoint(file, cfg_.to_json(), meta, stage_, total_steps_, bag, opt,
                      opt_g_->steps_taken());
}

std::unique_ptr<ProgressiveGan> ProgressiveGan::load(const std::filesystem::path& file) {
  nn::Checkpoint ckpt = nn::load_checkpoint(file);
  if (ckpt.meta.value("kind", "") != "pggan") throw StateError("not a pggan checkpoint");
  auto gan = std::make_unique<ProgressiveGan>(GanConfig::from_json(ckpt.config));
  nn::ParamBag bag;
  bag.absorb("g.", *gan->gen_);
  bag.absorb("d.", *gan->disc_);
  nn::load_into_module(ckpt, bag);
  gan->stage_ = ckpt.stage;
  gan->total_steps_ = ckpt.step;
  gan->step_in_stage_ = ckpt.meta.value("step_in_stage", int64_t{0});
  if (!ckpt.opt_state.empty()) {
    size_t gl = ckpt.meta.at("opt_g_len").get<size_t>();
    std::vector<nn::Scalar> gblob(ckpt.opt_state.begin(), ckpt.opt_state.begin() + gl);
    std::vector<nn::Scalar> dblob(ckpt.opt_state.begin() + gl, ckpt.opt_state.end());
    gan->opt_g_->load_state_blob(gblob, ckpt.meta.value("opt_g_steps", int64_t{0}));
    gan->opt_d_->load_state_blob(dblob, ckpt.meta.value("opt_d_steps", int64_t{0}));
  }
  return gan;
}

// ---- value domain ---------------------------------------------------------------

double code_to_level(int code) {
  return 2.0 * static_cast<double>(code) / (kClassCount - 1) - 1.0;
}

int level_to_code(double level) {
  int best = 0;
  double best_d = 1e300;
  for (int c = 0; c < kClassCount; ++c) {
    double d = std::abs(level - code_to_level(c));
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

ChannelGrid labels_to_gan(const LabelMap& labels) {
  ChannelGrid g(1, labels.height, labels.width);
  for (size_t i = 0; i < labels.size(); ++i) g.values[i] = code_to_level(labels.codes[i]);
  return g;
}

ChannelGrid stacked_to_gan(const GrayImage& image, const LabelMap& labels) {
  if (image.height != labels.height || image.width != labels.width) {
    throw ShapeError("stacked_to_gan: dims mismatch");
  }
  ChannelGrid g(2, image.height, image.width);
  size_t n = image.size();
  for (size_t i = 0; i < n; ++i) g.values[i] = 2.0 * image.intensities[i] - 1.0;
  for (size_t i = 0; i < n; ++i) g.values[n + i] = code_to_level(labels.codes[i]);
  return g;
}

LabelMap gan_to_labels(const ChannelGrid& grid, int channel) {
  LabelMap m(grid.height, grid.width);
  size_t off = static_cast<size_t>(channel) * grid.height * grid.width;
  for (size_t i = 0; i < m.size(); ++i) {
    m.codes[i] = static_cast<uint8_t>(level_to_code(grid.values[off + i]));
  }
  return m;
}

GrayImage gan_to_image(const ChannelGrid& grid, int channel) {
  GrayImage img(grid.height, grid.width);
  size_t off = static_cast<size_t>(channel) * grid.height * grid.width;
  for (size_t i = 0; i < img.size(); ++i) {
    img.intensities[i] = std::clamp(0.5 * (grid.values[off + i] + 1.0), 0.0, 1.0);
  }
  return img;
}

}  // namespace cxrgen
