#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "cxrgen/rng.hpp"
#include "cxrgen/types.hpp"

namespace cxrgen::nn {

// All network math runs in double: bit-stable reruns and comfortable headroom
// for finite-difference verification.
using Scalar = double;

struct Tensor {
  std::vector<int> shape;
  std::vector<Scalar> data;
  // Optimizer-facing gradient buffer. Per-sample gradients live in the Tape;
  // training loops reduce them into here in a fixed sample order.
  std::vector<Scalar> grad;
  bool requires_grad = false;

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0);
  }
  void zero_grad() { grad.assign(data.size(), 0); }
};

using Var = std::shared_ptr<Tensor>;

Var make_var(std::vector<int> shape, bool requires_grad = false);
Var make_var_like(const Var& v, bool requires_grad = false);
Var from_grid(const ChannelGrid& g, bool requires_grad = false);
ChannelGrid to_grid(const Var& v);
Var randn_var(std::vector<int> shape, Rng& rng, Scalar stddev = 1.0, bool requires_grad = false);

// Reverse-mode tape. One Tape per forward pass; gradients of every tensor
// (shared parameters included) are keyed off the tensor identity inside the
// tape, so concurrent tapes over shared parameters never race.
class Tape {
 public:
  Tape() = default;
  // Backward closures capture the tape address; never relocate a live tape.
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  void set_recording(bool r) { recording_ = r; }

  void record(std::function<void()> fn) {
    if (recording_) ops_.push_back(std::move(fn));
  }

  std::vector<Scalar>& grad(const Var& t) {
    auto& g = grads_[t.get()];
    if (g.size() != t->data.size()) g.assign(t->data.size(), 0);
    return g;
  }
  // Null when the tensor never received a gradient.
  const std::vector<Scalar>* find_grad(const Tensor* t) const {
    auto it = grads_.find(t);
    return it == grads_.end() ? nullptr : &it->second;
  }

  // Seeds d(loss)/d(loss) = 1 and replays recorded ops in reverse.
  void backward(const Var& loss);

  void clear() {
    ops_.clear();
    grads_.clear();
  }

 private:
  bool recording_ = true;
  std::vector<std::function<void()>> ops_;
  std::unordered_map<const Tensor*, std::vector<Scalar>> grads_;
};

// ---- ops ------------------------------------------------------------------
// Tensors are [C,H,W] grids unless noted; scalars are [1].

struct Conv2dSpec {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
};

// x [Cin,H,W], w [Cout,Cin,k,k], b [Cout] (may be null). Weights enter the
// product scaled by wscale (runtime equalized-scale hook).
Var conv2d(Tape& t, const Var& x, const Var& w, const Var& b, const Conv2dSpec& spec,
           Scalar wscale = 1.0);

// x treated as flat [in], w [out,in], b [out] (may be null).
Var linear(Tape& t, const Var& x, const Var& w, const Var& b, Scalar wscale = 1.0);

Var leaky_relu(Tape& t, const Var& x, Scalar slope);
inline Var relu(Tape& t, const Var& x) { return leaky_relu(t, x, 0.0); }
Var tanh_op(Tape& t, const Var& x);
Var sigmoid_op(Tape& t, const Var& x);

Var add(Tape& t, const Var& a, const Var& b);
Var mul(Tape& t, const Var& a, const Var& b);
Var scale(Tape& t, const Var& x, Scalar s);
// alpha*a + (1-alpha)*b, shapes equal.
Var lerp(Tape& t, const Var& a, const Var& b, Scalar alpha);
Var concat_ch(Tape& t, const Var& a, const Var& b);
Var reshape_copy(Tape& t, const Var& x, std::vector<int> shape);

// Per-position feature normalization: x / sqrt(mean_c x^2 + eps).
Var pixel_norm(Tape& t, const Var& x, Scalar eps = 1e-8);
// Per-channel normalization over H*W with affine params gamma/beta [C].
Var instance_norm(Tape& t, const Var& x, const Var& gamma, const Var& beta, Scalar eps = 1e-5);

Var upsample_nearest2(Tape& t, const Var& x);
Var upsample_nearest_to(Tape& t, const Var& x, int out_h, int out_w);
Var avg_pool2(Tape& t, const Var& x);
Var adaptive_avg_pool(Tape& t, const Var& x, int bins_h, int bins_w);

Var mean_all(Tape& t, const Var& x);
// mean((x - target)^2)
Var mse_to_const(Tape& t, const Var& x, Scalar target);
// mean |x - ref|, ref detached.
Var l1_to_ref(Tape& t, const Var& x, std::shared_ptr<const std::vector<Scalar>> ref);

// logits [C,H,W], target codes [H*W]; optional per-class weights (size C).
// Weighted mean of -log softmax(target), normalized by the summed weights.
Var softmax_cross_entropy(Tape& t, const Var& logits, std::shared_ptr<const std::vector<uint8_t>> target,
                          const std::vector<Scalar>& class_weights = {});

// Inference-only helpers (no tape).
void softmax_channels(ChannelGrid& g);

bool all_finite(const Var& v);

}  // namespace cxrgen::nn
