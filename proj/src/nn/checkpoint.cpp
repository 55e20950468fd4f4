#include "cxrgen/nn/checkpoint.hpp"

#include <cstdio>
#include <fstream>

#include "cxrgen/errors.hpp"
#include "cxrgen/rng.hpp"

namespace cxrgen::nn {

static constexpr char kMagic[8] = {'C', 'X', 'R', 'G', 'C', 'K', 'P', '1'};

std::string config_fingerprint(const nlohmann::json& config) {
  uint64_t h = fnv1a64(config.dump());
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_checkpoint(const std::filesystem::path& file, const nlohmann::json& config,
                     const nlohmann::json& meta, int stage, int64_t step, const Module& module,
                     const std::vector<Scalar>& opt_state, int64_t opt_steps) {
  nlohmann::json header;
  header["config"] = config;
  header["meta"] = meta;
  header["stage"] = stage;
  header["step"] = step;
  header["fingerprint"] = config_fingerprint(config);
  header["opt_steps"] = opt_steps;
  header["opt_state_len"] = opt_state.size();
  auto tensors = nlohmann::json::array();
  for (const auto& [name, v] : module.named_params()) {
    tensors.push_back({{"name", name}, {"shape", v->shape}});
  }
  header["tensors"] = tensors;

  std::string hs = header.dump();
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IngestionError("cannot write checkpoint: " + file.string());
  out.write(kMagic, 8);
  uint64_t hl = hs.size();
  out.write(reinterpret_cast<const char*>(&hl), 8);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, v] : module.named_params()) {
    out.write(reinterpret_cast<const char*>(v->data.data()),
              static_cast<std::streamsize>(v->data.size() * sizeof(Scalar)));
  }
  if (!opt_state.empty()) {
    out.write(reinterpret_cast<const char*>(opt_state.data()),
              static_cast<std::streamsize>(opt_state.size() * sizeof(Scalar)));
  }
  if (!out) throw IngestionError("checkpoint write failed: " + file.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint: " + file.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw StateError("not a checkpoint file: " + file.string());
  }
  uint64_t hl = 0;
  in.read(reinterpret_cast<char*>(&hl), 8);
  std::string hs(hl, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hl));
  if (!in) throw StateError("truncated checkpoint header: " + file.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const std::exception& ex) {
    throw StateError("corrupt checkpoint header: " + std::string(ex.what()));
  }

  Checkpoint ckpt;
  ckpt.config = header.at("config");
  ckpt.meta = header.value("meta", nlohmann::json::object());
  ckpt.stage = header.at("stage").get<int>();
  ckpt.step = header.at("step").get<int64_t>();
  ckpt.fingerprint = header.at("fingerprint").get<std::string>();
  if (ckpt.fingerprint != config_fingerprint(ckpt.config)) {
    throw StateError("checkpoint fingerprint does not match its config: " + file.string());
  }
  ckpt.opt_steps = header.value("opt_steps", int64_t{0});

  for (const auto& t : header.at("tensors")) {
    std::string name = t.at("name").get<std::string>();
    std::vector<int> shape = t.at("shape").get<std::vector<int>>();
    int64_t n = 1;
    for (int d : shape) n *= d;
    std::vector<Scalar> data(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(Scalar)));
    if (!in) throw StateError("truncated checkpoint tensor " + name);
    ckpt.tensors.emplace(std::move(name), std::make_pair(std::move(shape), std::move(data)));
  }
  size_t opt_len = header.value("opt_state_len", size_t{0});
  if (opt_len > 0) {
    ckpt.opt_state.resize(opt_len);
    in.read(reinterpret_cast<char*>(ckpt.opt_state.data()),
            static_cast<std::streamsize>(opt_len * sizeof(Scalar)));
    if (!in) throw StateError("truncated optimizer state in " + file.string());
  }
  return ckpt;
}

void load_into_module(const Checkpoint& ckpt, Module& module) {
  for (const auto& [name, v] : module.named_params()) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw StateError("checkpoint missing tensor " + name);
    if (it->second.first != v->shape) throw StateError("checkpoint shape mismatch for " + name);
    v->data = it->second.second;
  }
}

}  // namespace cxrgen::nn
