#include "cxrgen/translator.hpp"

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

void TranslatorConfig::validate() const {
  if (class_count < 2) throw ConfigError("class_count must be >= 2");
  if (gen_levels < 1) throw ConfigError("gen_levels must be >= 1");
  if (disc_scales < 1) throw ConfigError("disc_scales must be >= 1");
  if (fm_weight < 0) throw ConfigError("fm_weight must be >= 0");
  if (batch < 1 || steps < 0) throw ConfigError("bad translator budgets");
  if (base_filters < 1 || res_blocks < 0) throw ConfigError("bad translator widths");
}

nlohmann::json TranslatorConfig::to_json() const {
  return {{"class_count", class_count},
          {"output_kind", output_kind == OutputKind::label ? "label" : "image"},
          {"gen_levels", gen_levels},
          {"disc_scales", disc_scales},
          {"fm_weight", fm_weight},
          {"steps", steps},
          {"batch", batch},
          {"seed", seed},
          {"base_filters", base_filters},
          {"res_blocks", res_blocks},
          {"lr", lr},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2}};
}

TranslatorConfig TranslatorConfig::from_json(const nlohmann::json& j) {
  TranslatorConfig c;
  c.class_count = j.value("class_count", 6);
  c.output_kind = j.value("output_kind", "image") == std::string("label") ? OutputKind::label
                                                                          : OutputKind::image;
  c.gen_levels = j.value("gen_levels", 1);
  c.disc_scales = j.value("disc_scales", 2);
  c.fm_weight = j.value("fm_weight", 10.0);
  c.steps = j.value("steps", 200);
  c.batch = j.value("batch", 2);
  c.seed = j.value("seed", uint64_t{1});
  c.base_filters = j.value("base_filters", 16);
  c.res_blocks = j.value("res_blocks", 2);
  c.lr = j.value("lr", 2e-4);
  c.adam_beta1 = j.value("adam_beta1", 0.5);
  c.adam_beta2 = j.value("adam_beta2", 0.999);
  return c;
}

ChannelGrid one_hot(const LabelMap& map, int class_count) {
  ChannelGrid g(class_count, map.height, map.width);
  size_t plane = map.size();
  for (size_t i = 0; i < plane; ++i) {
    uint8_t c = map.codes[i];
    if (c >= class_count) {
      throw CodecError("one_hot: code " + std::to_string(c) + " >= class_count " +
                       std::to_string(class_count));
    }
    g.values[c * plane + i] = 1.0;
  }
  return g;
}

LabelMap argmax_decode(const ChannelGrid& grid) {
  LabelMap m(grid.height, grid.width);
  size_t plane = m.size();
  for (size_t i = 0; i < plane; ++i) {
    int best = 0;
    double best_v = grid.values[i];
    for (int c = 1; c < grid.channels; ++c) {
      double v = grid.values[c * plane + i];
      if (v > best_v) {  // strict: ties keep the lowest code
        best_v = v;
        best = c;
      }
    }
    m.codes[i] = static_cast<uint8_t>(best);
  }
  return m;
}

ChannelGrid image_to_domain(const GrayImage& img) {
  ChannelGrid g(1, img.height, img.width);
  for (size_t i = 0; i < img.size(); ++i) g.values[i] = 2.0 * img.intensities[i] - 1.0;
  return g;
}

ChannelGrid target_to_domain(const ChannelGrid& target) {
  ChannelGrid g = target;
  for (auto& v : g.values) v = 2.0 * v - 1.0;
  return g;
}

// ---- generator -----------------------------------------------------------------

TranslatorGenerator::TranslatorGenerator(const TranslatorConfig& cfg, Rng& rng) : cfg_(cfg) {
  const int levels = cfg.gen_levels;
  levels_.resize(static_cast<size_t>(levels));
  for (int l = 0; l < levels; ++l) {
    // Coarsest level first; finer levels run at half-width feature counts.
    int ngf = cfg.base_filters << (levels - 1 - l);
    auto& lv = levels_[static_cast<size_t>(l)];
    std::string p = "g.l" + std::to_string(l) + ".";
    lv.stem = nn::Conv2d(*this, p + "stem", cfg.source_channels(), ngf, 7, {1, 3, 1}, rng);
    lv.stem_norm = nn::InstanceNorm(*this, p + "stem_norm", ngf);
    int downs = l == 0 ? 2 : 1;
    int ch = ngf;
    for (int d = 0; d < downs; ++d) {
      lv.down.emplace_back(*this, p + "down" + std::to_string(d), ch, ch * 2, 3,
                           Conv2dSpec{2, 1, 1}, rng);
      lv.down_norm.emplace_back(*this, p + "down" + std::to_string(d) + "_norm", ch * 2);
      ch *= 2;
    }
    for (int r = 0; r < cfg.res_blocks; ++r) {
      std::string rp = p + "res" + std::to_string(r);
      lv.res_a.emplace_back(*this, rp + "a", ch, ch, 3, Conv2dSpec{1, 1, 1}, rng);
      lv.res_a_norm.emplace_back(*this, rp + "a_norm", ch);
      lv.res_b.emplace_back(*this, rp + "b", ch, ch, 3, Conv2dSpec{1, 1, 1}, rng);
      lv.res_b_norm.emplace_back(*this, rp + "b_norm", ch);
    }
    for (int d = 0; d < downs; ++d) {
      lv.up.emplace_back(*this, p + "up" + std::to_string(d), ch, ch / 2, 3, Conv2dSpec{1, 1, 1},
                         rng);
      lv.up_norm.emplace_back(*this, p + "up" + std::to_string(d) + "_norm", ch / 2);
      ch /= 2;
    }
  }
  out_conv_ = nn::Conv2d(*this, "g.out", cfg.base_filters, cfg.output_channels(), 7, {1, 3, 1},
                         rng, false, 1.0);
}

Var TranslatorGenerator::forward(Tape& t, const Var& source) const {
  const int levels = cfg_.gen_levels;
  // Source pyramid, coarsest first.
  std::vector<Var> pyramid(static_cast<size_t>(levels));
  pyramid.back() = source;
  for (int l = levels - 2; l >= 0; --l) {
    pyramid[static_cast<size_t>(l)] = nn::avg_pool2(t, pyramid[static_cast<size_t>(l + 1)]);
  }

  Var feat;
  for (int l = 0; l < levels; ++l) {
    const auto& lv = levels_[static_cast<size_t>(l)];
    Var h = nn::relu(t, lv.stem_norm(t, lv.stem(t, pyramid[static_cast<size_t>(l)])));
    for (size_t d = 0; d < lv.down.size(); ++d) {
      h = nn::relu(t, lv.down_norm[d](t, lv.down[d](t, h)));
    }
    if (l > 0) h = nn::add(t, h, feat);  // fuse with coarser-level features
    for (size_t r = 0; r < lv.res_a.size(); ++r) {
      Var y = nn::relu(t, lv.res_a_norm[r](t, lv.res_a[r](t, h)));
      y = lv.res_b_norm[r](t, lv.res_b[r](t, y));
      h = nn::add(t, h, y);
    }
    for (size_t d = 0; d < lv.up.size(); ++d) {
      h = nn::upsample_nearest2(t, h);
      h = nn::relu(t, lv.up_norm[d](t, lv.up[d](t, h)));
    }
    feat = h;
  }
  return nn::tanh_op(t, out_conv_(t, feat));
}

// ---- discriminator --------------------------------------------------------------

PatchDiscriminator::PatchDiscriminator(const std::string& prefix, int in_channels,
                                       int base_filters, Rng& rng) {
  int ch = in_channels;
  int ndf = base_filters;
  const int strides[4] = {2, 2, 2, 1};
  for (int i = 0; i < 4; ++i) {
    int out = ndf * (1 << std::min(i, 2));
    convs_.emplace_back(*this, prefix + "conv" + std::to_string(i), ch, out, 4,
                        Conv2dSpec{strides[i], 1, 1}, rng);
    if (i > 0) norms_.emplace_back(*this, prefix + "norm" + std::to_string(i), out);
    ch = out;
  }
  out_ = nn::Conv2d(*this, prefix + "out", ch, 1, 4, Conv2dSpec{1, 1, 1}, rng, false, 1.0);
}

PatchDiscriminator::Result PatchDiscriminator::forward(Tape& t, const Var& pair) const {
  Result r;
  Var h = pair;
  for (size_t i = 0; i < convs_.size(); ++i) {
    h = convs_[i](t, h);
    if (i > 0) h = norms_[i - 1](t, h);
    h = nn::leaky_relu(t, h, 0.2);
    r.features.push_back(h);
  }
  r.score = out_(t, h);
  return r;
}

// ---- translator -----------------------------------------------------------------

Translator::Translator(const TranslatorConfig& cfg)
    : cfg_(cfg), train_rng_(mix_seed(cfg.seed, 0x7a2151)) {
  cfg_.validate();
  Rng init_rng(mix_seed(cfg_.seed, 0x20b1));
  gen_ = std::make_unique<TranslatorGenerator>(cfg_, init_rng);
  int pair_ch = cfg_.source_channels() + cfg_.output_channels();
  for (int s = 0; s < cfg_.disc_scales; ++s) {
    discs_.push_back(std::make_unique<PatchDiscriminator>("d" + std::to_string(s) + ".", pair_ch,
                                                          cfg_.base_filters, init_rng));
  }
  nn::AdamConfig ac{cfg_.lr, cfg_.adam_beta1, cfg_.adam_beta2, 1e-8};
  opt_g_ = std::make_unique<nn::Adam>(gen_->params(), ac);
  std::vector<Var> d_params;
  for (auto& d : discs_) {
    auto p = d->params();
    d_params.insert(d_params.end(), p.begin(), p.end());
  }
  opt_d_ = std::make_unique<nn::Adam>(d_params, ac);
}

void Translator::check_source(const ChannelGrid& source) const {
  if (source.channels != cfg_.source_channels()) {
    throw ShapeError("translator: source has " + std::to_string(source.channels) +
                     " channels, expected " + std::to_string(cfg_.source_channels()));
  }
  int div = 4 << (cfg_.gen_levels - 1);
  if (source.height % div || source.width % div) {
    throw ShapeError("translator: source dims must be divisible by " + std::to_string(div));
  }
}

std::pair<Var, Var> Translator::generator_adv_fm(Tape& t, const TranslationPair& pair) const {
  Var src = nn::from_grid(pair.source);
  ChannelGrid tgt_dom = target_to_domain(pair.target);

  Var fake = gen_->forward(t, src);
  Var adv, fm;
  const int scales = cfg_.disc_scales;
  Var fake_pair = nn::concat_ch(t, src, fake);

  for (int s = 0; s < scales; ++s) {
    if (s > 0) fake_pair = nn::avg_pool2(t, fake_pair);
    auto res = discs_[static_cast<size_t>(s)]->forward(t, fake_pair);
    Var a = nn::scale(t, nn::mse_to_const(t, res.score, 1.0), 0.5 / scales);
    adv = adv ? nn::add(t, adv, a) : a;

    // Real-pair features are constants for the generator objective.
    Tape nograd;
    nograd.set_recording(false);
    Var rp = nn::concat_ch(nograd, nn::from_grid(pair.source), nn::from_grid(tgt_dom));
    for (int k = 0; k < s; ++k) rp = nn::avg_pool2(nograd, rp);
    auto real_res = discs_[static_cast<size_t>(s)]->forward(nograd, rp);

    int layers = static_cast<int>(real_res.features.size());
    for (int i = 0; i < layers; ++i) {
      auto ref = std::make_shared<const std::vector<nn::Scalar>>(real_res.features[i]->data);
      Var term = nn::scale(t, nn::l1_to_ref(t, res.features[static_cast<size_t>(i)], ref),
                           1.0 / (scales * layers));
      fm = fm ? nn::add(t, fm, term) : term;
    }
  }
  return {adv, fm};
}

std::vector<TranslatorStepLog> Translator::train_translation(
    const std::vector<TranslationPair>& pairs, const StepCallback& on_step) {
  if (pairs.empty()) throw ConfigError("train_translation: no pairs");
  for (const auto& p : pairs) {
    check_source(p.source);
    if (p.target.channels != cfg_.output_channels()) {
      throw ShapeError("train_translation: target channel count mismatch");
    }
    if (p.target.height != p.source.height || p.target.width != p.source.width) {
      throw ShapeError("train_translation: source/target dims differ");
    }
    if (p.source.height != pairs[0].source.height || p.source.width != pairs[0].source.width) {
      throw ShapeError("train_translation: inconsistent pair shapes");
    }
  }

  std::vector<TranslatorStepLog> logs;
  const int batch = cfg_.batch;
  auto g_params = gen_->params();
  std::vector<Var> d_params;
  for (auto& d : discs_) {
    auto p = d->params();
    d_params.insert(d_params.end(), p.begin(), p.end());
  }

  for (int step = 0; step < cfg_.steps; ++step) {
    std::vector<int> idx(static_cast<size_t>(batch));
    for (int i = 0; i < batch; ++i) {
      idx[static_cast<size_t>(i)] = train_rng_.uniform_int(static_cast<int>(pairs.size()));
    }

    double d_loss = 0.0, g_adv = 0.0, g_fm = 0.0;

    {  // discriminator step
      std::vector<Tape> tapes(static_cast<size_t>(batch));
      std::vector<double> losses(static_cast<size_t>(batch), 0.0);
#pragma omp parallel for schedule(static)
      for (int i = 0; i < batch; ++i) {
        Tape& t = tapes[static_cast<size_t>(i)];
        const auto& pair = pairs[static_cast<size_t>(idx[static_cast<size_t>(i)])];
        Var src = nn::from_grid(pair.source);
        ChannelGrid tgt_dom = target_to_domain(pair.target);
        Var fake;
        {
          Tape nograd;
          nograd.set_recording(false);
          fake = gen_->forward(nograd, nn::from_grid(pair.source));
          fake->requires_grad = false;
        }
        Var real_pair = nn::concat_ch(t, src, nn::from_grid(tgt_dom));
        Var fake_pair = nn::concat_ch(t, src, fake);
        Var loss;
        for (int s = 0; s < cfg_.disc_scales; ++s) {
          if (s > 0) {
            real_pair = nn::avg_pool2(t, real_pair);
            fake_pair = nn::avg_pool2(t, fake_pair);
          }
          auto rr = discs_[static_cast<size_t>(s)]->forward(t, real_pair);
          auto rf = discs_[static_cast<size_t>(s)]->forward(t, fake_pair);
          Var l = nn::add(t, nn::scale(t, nn::mse_to_const(t, rr.score, 1.0), 0.5),
                          nn::scale(t, nn::mse_to_const(t, rf.score, 0.0), 0.5));
          l = nn::scale(t, l, 1.0 / cfg_.disc_scales);
          loss = loss ? nn::add(t, loss, l) : l;
        }
        losses[static_cast<size_t>(i)] = loss->data[0];
        t.backward(loss);
      }
      opt_d_->zero_grad();
      nn::reduce_tape_grads(d_params, tapes, 1.0 / batch);
      opt_d_->step();
      for (double l : losses) d_loss += l / batch;
    }

    {  // generator step
      for (auto& d : discs_) d->set_trainable(false);
      std::vector<Tape> tapes(static_cast<size_t>(batch));
      std::vector<double> advs(static_cast<size_t>(batch), 0.0), fms(static_cast<size_t>(batch), 0.0);
#pragma omp parallel for schedule(static)
      for (int i = 0; i < batch; ++i) {
        Tape& t = tapes[static_cast<size_t>(i)];
        const auto& pair = pairs[static_cast<size_t>(idx[static_cast<size_t>(i)])];
        auto [adv, fm] = generator_adv_fm(t, pair);
        Var total = cfg_.fm_weight > 0 ? nn::add(t, adv, nn::scale(t, fm, cfg_.fm_weight)) : adv;
        advs[static_cast<size_t>(i)] = adv->data[0];
        fms[static_cast<size_t>(i)] = fm->data[0];
        t.backward(total);
      }
      opt_g_->zero_grad();
      nn::reduce_tape_grads(g_params, tapes, 1.0 / batch);
      opt_g_->step();
      for (auto& d : discs_) d->set_trainable(true);
      for (int i = 0; i < batch; ++i) {
        g_adv += advs[static_cast<size_t>(i)] / batch;
        g_fm += fms[static_cast<size_t>(i)] / batch;
      }
    }

    ++total_steps_;
    double g_total = g_adv + cfg_.fm_weight * g_fm;
    if (!std::isfinite(d_loss) || !std::isfinite(g_total)) {
      throw TrainingDiverged("non-finite translation loss", total_steps_);
    }
    TranslatorStepLog log{total_steps_, d_loss, g_adv, g_fm, g_total};
    logs.push_back(log);
    if (on_step) on_step(log);
  }
  return logs;
}

ChannelGrid Translator::translate_raw(const ChannelGrid& source) const {
  check_source(source);
  Tape t;
  t.set_recording(false);
  Var out = gen_->forward(t, nn::from_grid(source));
  return nn::to_grid(out);
}

LabelMap Translator::translate_to_labels(const ChannelGrid& source) const {
  if (cfg_.output_kind != OutputKind::label) throw StateError("translator output kind is image");
  return argmax_decode(translate_raw(source));
}

GrayImage Translator::translate_to_image(const ChannelGrid& source) const {
  if (cfg_.output_kind != OutputKind::image) throw StateError("translator output kind is label");
  ChannelGrid raw = translate_raw(source);
  GrayImage img(raw.height, raw.width);
  for (size_t i = 0; i < img.size(); ++i) {
    img.intensities[i] = std::clamp(0.5 * (raw.values[i] + 1.0), 0.0, 1.0);
  }
  return img;
}

void Translator::save(const std::filesystem::path& file, const nlohmann::json& extra_meta) const {
  nn::ParamBag bag;
  bag.absorb("", *gen_);
  for (size_t s = 0; s < discs_.size(); ++s) bag.absorb("", *discs_[s]);
  nlohmann::json meta = extra_meta;
  meta["kind"] = "translator";
  nn::save_checkpoint(file, cfg_.to_json(), meta, 0, total_steps_, bag);
}

std::unique_ptr<Translator> Translator::load(const std::filesystem::path& file) {
  nn::Checkpoint ckpt = nn::load_checkpoint(file);
  if (ckpt.meta.value("kind", "") != "translator") throw StateError("not a translator checkpoint");
  auto tr = std::make_unique<Translator>(TranslatorConfig::from_json(ckpt.config));
  nn::ParamBag bag;
  bag.absorb("", *tr->gen_);
  for (auto& d : tr->discs_) bag.absorb("", *d);
  nn::load_into_module(ckpt, bag);
  tr->total_steps_ = ckpt.step;
  return tr;
}

}  // namespace cxrgen
