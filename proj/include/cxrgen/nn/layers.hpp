#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cxrgen/nn/tensor.hpp"

namespace cxrgen::nn {

// Flat named-parameter registry. Composite networks register their layers'
// parameters under prefixed names; checkpoints serialize by name.
class Module {
 public:
  virtual ~Module() = default;

  const std::vector<std::pair<std::string, Var>>& named_params() const { return params_; }
  std::vector<Var> params() const {
    std::vector<Var> out;
    out.reserve(params_.size());
    for (const auto& [n, v] : params_) out.push_back(v);
    return out;
  }
  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& [name, v] : params_) n += v->size();
    return n;
  }
  void set_trainable(bool on) {
    for (auto& [name, v] : params_) v->requires_grad = on;
  }

  Var add_param(const std::string& name, std::vector<int> shape) {
    auto v = make_var(std::move(shape), true);
    params_.emplace_back(name, v);
    return v;
  }

 protected:
  std::vector<std::pair<std::string, Var>> params_;
};

// Aggregates parameters of several modules under name prefixes, e.g. for
// saving a generator/discriminator pair as one checkpoint.
class ParamBag : public Module {
 public:
  void absorb(const std::string& prefix, const Module& m) {
    for (const auto& [n, v] : m.named_params()) params_.emplace_back(prefix + n, v);
  }
};

struct Conv2d {
  Var w, b;
  Conv2dSpec spec;
  Scalar wscale = 1.0;

  Conv2d() = default;
  // equalized: unit-variance init with the He constant applied at runtime;
  // otherwise the constant is baked into the init.
  Conv2d(Module& m, const std::string& name, int in_c, int out_c, int k, Conv2dSpec spec,
         Rng& rng, bool equalized = false, Scalar gain = std::sqrt(2.0));

  Var operator()(Tape& t, const Var& x) const { return conv2d(t, x, w, b, spec, wscale); }
};

struct Linear {
  Var w, b;
  Scalar wscale = 1.0;

  Linear() = default;
  Linear(Module& m, const std::string& name, int in_dim, int out_dim, Rng& rng,
         bool equalized = false, Scalar gain = std::sqrt(2.0));

  Var operator()(Tape& t, const Var& x) const { return linear(t, x, w, b, wscale); }
};

struct InstanceNorm {
  Var gamma, beta;

  InstanceNorm() = default;
  InstanceNorm(Module& m, const std::string& name, int channels);

  Var operator()(Tape& t, const Var& x) const { return instance_norm(t, x, gamma, beta); }
};

struct AdamConfig {
  Scalar lr = 1e-3;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Var> params, AdamConfig cfg);

  // Consumes the gradients accumulated in each parameter's grad buffer.
  void step();
  void zero_grad();
  int64_t steps_taken() const { return t_; }

  // Moment serialization for checkpoint resume.
  std::vector<Scalar> state_blob() const;
  void load_state_blob(const std::vector<Scalar>& blob, int64_t steps);

 private:
  std::vector<Var> params_;
  AdamConfig cfg_;
  std::vector<std::vector<Scalar>> m_, v_;
  int64_t t_ = 0;
};

// Reduces per-sample tape gradients into the parameters' grad buffers in
// ascending sample order, so parallel batch evaluation stays bit-stable.
void reduce_tape_grads(const std::vector<Var>& params, std::vector<Tape>& tapes, Scalar scale);

}  // namespace cxrgen::nn
