#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "cxrgen/nn/layers.hpp"

namespace cxrgen::nn {

// On-disk network snapshot: JSON header (config + metadata + tensor manifest +
// fingerprint) followed by raw little-endian doubles. The fingerprint pins the
// builder config so a checkpoint can never silently load into a mismatched
// network.
struct Checkpoint {
  nlohmann::json config;
  nlohmann::json meta;        // provenance, free-form
  int stage = 0;
  int64_t step = 0;
  std::string fingerprint;
  std::map<std::string, std::pair<std::vector<int>, std::vector<Scalar>>> tensors;
  std::vector<Scalar> opt_state;
  int64_t opt_steps = 0;
};

std::string config_fingerprint(const nlohmann::json& config);

void save_checkpoint(const std::filesystem::path& file, const nlohmann::json& config,
                     const nlohmann::json& meta, int stage, int64_t step, const Module& module,
                     const std::vector<Scalar>& opt_state = {}, int64_t opt_steps = 0);

Checkpoint load_checkpoint(const std::filesystem::path& file);

// Copies tensors into the module by name; StateError on missing names or
// shape mismatches.
void load_into_module(const Checkpoint& ckpt, Module& module);

}  // namespace cxrgen::nn
