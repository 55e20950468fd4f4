#include "cxrgen/nn/layers.hpp"

#include <cmath>

#include "cxrgen/errors.hpp"

namespace cxrgen::nn {

Conv2d::Conv2d(Module& m, const std::string& name, int in_c, int out_c, int k, Conv2dSpec sp,
               Rng& rng, bool equalized, Scalar gain) {
  spec = sp;
  w = m.add_param(name + ".w", {out_c, in_c, k, k});
  b = m.add_param(name + ".b", {out_c});
  Scalar fan_in = static_cast<Scalar>(in_c) * k * k;
  Scalar he = gain / std::sqrt(fan_in);
  if (equalized) {
    wscale = he;
    for (auto& v : w->data) v = rng.normal();
  } else {
    wscale = 1.0;
    for (auto& v : w->data) v = he * rng.normal();
  }
}

Linear::Linear(Module& m, const std::string& name, int in_dim, int out_dim, Rng& rng,
               bool equalized, Scalar gain) {
  w = m.add_param(name + ".w", {out_dim, in_dim});
  b = m.add_param(name + ".b", {out_dim});
  Scalar he = gain / std::sqrt(static_cast<Scalar>(in_dim));
  if (equalized) {
    wscale = he;
    for (auto& v : w->data) v = rng.normal();
  } else {
    wscale = 1.0;
    for (auto& v : w->data) v = he * rng.normal();
  }
}

InstanceNorm::InstanceNorm(Module& m, const std::string& name, int channels) {
  gamma = m.add_param(name + ".gamma", {channels});
  beta = m.add_param(name + ".beta", {channels});
  for (auto& v : gamma->data) v = 1.0;
}

Adam::Adam(std::vector<Var> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i]->data.size(), 0);
    v_[i].assign(params_[i]->data.size(), 0);
  }
}

void Adam::step() {
  ++t_;
  Scalar bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<Scalar>(t_));
  Scalar bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<Scalar>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    if (p.grad.size() != p.data.size()) continue;  // never touched this step
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < p.data.size(); ++j) {
      Scalar g = p.grad[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      Scalar mhat = m[j] / bc1;
      Scalar vhat = v[j] / bc2;
      p.data[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

std::vector<Scalar> Adam::state_blob() const {
  std::vector<Scalar> blob;
  for (size_t i = 0; i < params_.size(); ++i) {
    blob.insert(blob.end(), m_[i].begin(), m_[i].end());
    blob.insert(blob.end(), v_[i].begin(), v_[i].end());
  }
  return blob;
}

void Adam::load_state_blob(const std::vector<Scalar>& blob, int64_t steps) {
  size_t off = 0;
  for (size_t i = 0; i < params_.size(); ++i) {
    size_t n = params_[i]->data.size();
    if (off + 2 * n > blob.size()) throw StateError("optimizer state blob too short");
    std::copy(blob.begin() + off, blob.begin() + off + n, m_[i].begin());
    off += n;
    std::copy(blob.begin() + off, blob.begin() + off + n, v_[i].begin());
    off += n;
  }
  if (off != blob.size()) throw StateError("optimizer state blob size mismatch");
  t_ = steps;
}

void reduce_tape_grads(const std::vector<Var>& params, std::vector<Tape>& tapes, Scalar scale) {
  for (const auto& p : params) {
    p->ensure_grad();
    for (auto& tape : tapes) {
      const auto* g = tape.find_grad(p.get());
      if (!g) continue;
      for (size_t j = 0; j < p->grad.size(); ++j) p->grad[j] += scale * (*g)[j];
    }
  }
}

}  // namespace cxrgen::nn
