#include "cxrgen/manifest.hpp"

#include <cmath>
#include <fstream>

#include "cxrgen/rng.hpp"

namespace cxrgen {

std::string pipeline_name(Pipeline p) {
  switch (p) {
    case Pipeline::single_stage: return "single_stage";
    case Pipeline::two_stage: return "two_stage";
    case Pipeline::three_stage: return "three_stage";
    case Pipeline::real_only: return "real_only";
  }
  throw ConfigError("bad pipeline enum");
}

Pipeline pipeline_from_name(const std::string& s) {
  if (s == "single_stage") return Pipeline::single_stage;
  if (s == "two_stage") return Pipeline::two_stage;
  if (s == "three_stage") return Pipeline::three_stage;
  if (s == "real_only") return Pipeline::real_only;
  throw ConfigError("unknown pipeline: " + s);
}

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::full: return "full";
    case Regime::tiny: return "tiny";
    case Regime::custom: return "custom";
  }
  throw ConfigError("bad regime enum");
}

Regime regime_from_name(const std::string& s) {
  if (s == "full") return Regime::full;
  if (s == "tiny") return Regime::tiny;
  if (s == "custom") return Regime::custom;
  throw ConfigError("unknown regime: " + s);
}

int ExperimentManifest::scaled(int count) const {
  if (count == 0) return 0;
  return std::max(1, static_cast<int>(std::lround(count * scale)));
}

void ExperimentManifest::validate() const {
  if (synth_train_count < 0 || synth_val_count < 0 || generation_pool < 0) {
    throw ConfigError("synthetic counts must be >= 0");
  }
  if (synth_train_count + synth_val_count > generation_pool) {
    throw ConfigError("synth_train + synth_val must not exceed generation_pool");
  }
  if (regime == Regime::custom && !(custom_fraction > 0.0 && custom_fraction <= 1.0)) {
    throw ConfigError("custom_fraction must be in (0, 1]");
  }
  if (image_res < 32 || (image_res & (image_res - 1)) != 0) {
    throw ConfigError("image_res must be a power of two >= 32");
  }
  if (dot_res < 4 || (dot_res & (dot_res - 1)) != 0) {
    throw ConfigError("dot_res must be a power of two >= 4");
  }
  if (variants < 1) throw ConfigError("variants must be >= 1");
  if (!(scale > 0.0 && scale <= 1.0)) throw ConfigError("scale must be in (0, 1]");
  if (data.kind != "phantom" && data.kind != "real") {
    throw ConfigError("data.kind must be phantom or real");
  }
  if (output_dir.empty()) throw ConfigError("output_dir must be set");
}

static nlohmann::json budgets_to_json(const Budgets& b) {
  return {{"gan_stage_steps", b.gan_stage_steps},
          {"gan_batch", b.gan_batch},
          {"gan_lr", b.gan_lr},
          {"translator_steps", b.translator_steps},
          {"translator_batch", b.translator_batch},
          {"translator_lr", b.translator_lr},
          {"translator_base_filters", b.translator_base_filters},
          {"translator_res_blocks", b.translator_res_blocks},
          {"translator_disc_scales", b.translator_disc_scales},
          {"fm_weight", b.fm_weight},
          {"seg_steps", b.seg_steps},
          {"seg_batch", b.seg_batch},
          {"seg_lr", b.seg_lr},
          {"seg_crop", b.seg_crop},
          {"seg_base_width", b.seg_base_width},
          {"finetune_steps", b.finetune_steps}};
}

static Budgets budgets_from_json(const nlohmann::json& j) {
  Budgets b;
  b.gan_stage_steps = j.value("gan_stage_steps", b.gan_stage_steps);
  b.gan_batch = j.value("gan_batch", b.gan_batch);
  b.gan_lr = j.value("gan_lr", b.gan_lr);
  b.translator_steps = j.value("translator_steps", b.translator_steps);
  b.translator_batch = j.value("translator_batch", b.translator_batch);
  b.translator_lr = j.value("translator_lr", b.translator_lr);
  b.translator_base_filters = j.value("translator_base_filters", b.translator_base_filters);
  b.translator_res_blocks = j.value("translator_res_blocks", b.translator_res_blocks);
  b.translator_disc_scales = j.value("translator_disc_scales", b.translator_disc_scales);
  b.fm_weight = j.value("fm_weight", b.fm_weight);
  b.seg_steps = j.value("seg_steps", b.seg_steps);
  b.seg_batch = j.value("seg_batch", b.seg_batch);
  b.seg_lr = j.value("seg_lr", b.seg_lr);
  b.seg_crop = j.value("seg_crop", b.seg_crop);
  b.seg_base_width = j.value("seg_base_width", b.seg_base_width);
  b.finetune_steps = j.value("finetune_steps", b.finetune_steps);
  return b;
}

nlohmann::json ExperimentManifest::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["pipeline"] = pipeline_name(pipeline);
  j["regime"] = regime_name(regime);
  j["custom_fraction"] = custom_fraction;
  j["synth_train_count"] = synth_train_count;
  j["synth_val_count"] = synth_val_count;
  j["generation_pool"] = generation_pool;
  j["finetune"] = finetune;
  j["master_seed"] = master_seed;
  j["image_res"] = image_res;
  j["dot_res"] = dot_res;
  j["dot_radius"] = dot_radius;
  j["variants"] = variants;
  j["scale"] = scale;
  j["stub_generation"] = stub_generation;
  j["latent_dim"] = latent_dim;
  j["data"] = {{"kind", data.kind},
               {"phantom",
                {{"seed", data.phantom.seed},
                 {"size", data.phantom.size},
                 {"count", data.phantom.count},
                 {"shape_jitter", data.phantom.shape_jitter},
                 {"intensity_jitter", data.phantom.intensity_jitter},
                 {"noise_sigma", data.phantom.noise_sigma}}},
               {"phantom_test_count", data.phantom_test_count},
               {"real_root", data.real_root.string()}};
  j["budgets"] = budgets_to_json(budgets);
  j["output_dir"] = output_dir.string();
  return j;
}

ExperimentManifest ExperimentManifest::from_json(const nlohmann::json& j) {
  ExperimentManifest m;
  m.name = j.value("name", m.name);
  m.pipeline = pipeline_from_name(j.value("pipeline", "three_stage"));
  m.regime = regime_from_name(j.value("regime", "custom"));
  m.custom_fraction = j.value("custom_fraction", m.custom_fraction);
  m.synth_train_count = j.value("synth_train_count", m.synth_train_count);
  m.synth_val_count = j.value("synth_val_count", m.synth_val_count);
  m.generation_pool = j.value("generation_pool", m.generation_pool);
  m.finetune = j.value("finetune", m.finetune);
  m.master_seed = j.value("master_seed", m.master_seed);
  m.image_res = j.value("image_res", m.image_res);
  m.dot_res = j.value("dot_res", m.dot_res);
  m.dot_radius = j.value("dot_radius", m.dot_radius);
  m.variants = j.value("variants", m.variants);
  m.scale = j.value("scale", m.scale);
  m.stub_generation = j.value("stub_generation", m.stub_generation);
  m.latent_dim = j.value("latent_dim", m.latent_dim);
  if (j.contains("data")) {
    const auto& d = j["data"];
    m.data.kind = d.value("kind", "phantom");
    if (d.contains("phantom")) {
      const auto& p = d["phantom"];
      m.data.phantom.seed = p.value("seed", uint64_t{1});
      m.data.phantom.size = p.value("size", 128);
      m.data.phantom.count = p.value("count", 8);
      m.data.phantom.shape_jitter = p.value("shape_jitter", 0.08);
      m.data.phantom.intensity_jitter = p.value("intensity_jitter", 0.05);
      m.data.phantom.noise_sigma = p.value("noise_sigma", 0.01);
    }
    m.data.phantom_test_count = d.value("phantom_test_count", 40);
    m.data.real_root = d.value("real_root", std::string{});
  }
  if (j.contains("budgets")) m.budgets = budgets_from_json(j["budgets"]);
  m.output_dir = j.value("output_dir", std::string("runs/experiment"));
  return m;
}

ExperimentManifest ExperimentManifest::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open manifest: " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& ex) {
    throw ConfigError("manifest parse error: " + std::string(ex.what()));
  }
  auto m = from_json(j);
  m.validate();
  return m;
}

void ExperimentManifest::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write manifest: " + file.string());
  out << to_json().dump(2) << "\n";
}

uint64_t stage_seed(uint64_t master_seed, const std::string& stage_name) {
  return mix_seed(master_seed, fnv1a64(stage_name));
}

nlohmann::json RunRecord::to_json() const {
  nlohmann::json j;
  j["manifest"] = manifest;
  j["pipeline_label"] = pipeline_label;
  j["finetuned"] = finetuned;
  j["checkpoints"] = checkpoints;
  j["counts"] = {{"real_train", counts.real_train},
                 {"real_test", counts.real_test},
                 {"selected_train", counts.selected_train},
                 {"augmented_train", counts.augmented_train},
                 {"pool", counts.pool},
                 {"synth_train", counts.synth_train},
                 {"synth_val", counts.synth_val}};
  j["pretrain_metrics"] = nlohmann::json::parse(pretrain_metrics.to_json_string());
  if (finetune_metrics) {
    j["finetune_metrics"] = nlohmann::json::parse(finetune_metrics->to_json_string());
  }
  j["probes"] = probes;
  j["wall_clock_s"] = wall_clock_s;
  j["eval_fingerprint"] = eval_fingerprint;
  j["synth_val_loss"] = synth_val_loss;
  j["note"] = note;
  return j;
}

RunRecord RunRecord::from_json(const nlohmann::json& j) {
  RunRecord r;
  r.manifest = j.at("manifest");
  r.pipeline_label = j.at("pipeline_label").get<std::string>();
  r.finetuned = j.at("finetuned").get<bool>();
  r.checkpoints = j.value("checkpoints", std::map<std::string, std::string>{});
  const auto& c = j.at("counts");
  r.counts.real_train = c.value("real_train", 0);
  r.counts.real_test = c.value("real_test", 0);
  r.counts.selected_train = c.value("selected_train", 0);
  r.counts.augmented_train = c.value("augmented_train", 0);
  r.counts.pool = c.value("pool", 0);
  r.counts.synth_train = c.value("synth_train", 0);
  r.counts.synth_val = c.value("synth_val", 0);
  r.pretrain_metrics = MetricsReport::from_json_string(j.at("pretrain_metrics").dump());
  if (j.contains("finetune_metrics")) {
    r.finetune_metrics = MetricsReport::from_json_string(j["finetune_metrics"].dump());
  }
  r.probes = j.value("probes", nlohmann::json::object());
  r.wall_clock_s = j.value("wall_clock_s", std::map<std::string, double>{});
  r.eval_fingerprint = j.value("eval_fingerprint", std::string{});
  r.synth_val_loss = j.value("synth_val_loss", 0.0);
  r.note = j.value("note", std::string{});
  return r;
}

void RunRecord::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write run record: " + file.string());
  out << to_json().dump(2) << "\n";
}

RunRecord RunRecord::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open run record: " + file.string());
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

}  // namespace cxrgen
