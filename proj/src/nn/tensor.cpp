#include "cxrgen/nn/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numeric>

#include "cxrgen/errors.hpp"

namespace cxrgen::nn {

using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

static int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

Var make_var(std::vector<int> shape, bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data.assign(static_cast<size_t>(shape_size(t->shape)), 0);
  t->requires_grad = requires_grad;
  return t;
}

Var make_var_like(const Var& v, bool requires_grad) {
  return make_var(v->shape, requires_grad);
}

Var from_grid(const ChannelGrid& g, bool requires_grad) {
  auto t = make_var({g.channels, g.height, g.width}, requires_grad);
  t->data = g.values;
  return t;
}

ChannelGrid to_grid(const Var& v) {
  if (v->shape.size() != 3) throw ShapeError("to_grid: expected a [C,H,W] tensor");
  ChannelGrid g(v->dim(0), v->dim(1), v->dim(2));
  g.values = v->data;
  return g;
}

Var randn_var(std::vector<int> shape, Rng& rng, Scalar stddev, bool requires_grad) {
  auto t = make_var(std::move(shape), requires_grad);
  for (auto& v : t->data) v = stddev * rng.normal();
  return t;
}

void Tape::backward(const Var& loss) {
  if (loss->size() != 1) throw ShapeError("backward: loss must be scalar");
  grad(loss)[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

bool all_finite(const Var& v) {
  for (Scalar x : v->data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// ---- convolution ------------------------------------------------------------

static int conv_out_dim(int in, int k, int stride, int pad, int dil) {
  return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

// cols is [C*k*k, Ho*Wo] row-major.
static void im2col(const Scalar* x, int C, int H, int W, int k, const Conv2dSpec& s, int Ho,
                   int Wo, Scalar* cols) {
  const int64_t plane = static_cast<int64_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    const Scalar* xc = x + static_cast<int64_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Scalar* row = cols + ((static_cast<int64_t>(c) * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * s.stride - s.pad + ky * s.dilation;
          Scalar* dst = row + static_cast<int64_t>(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wo, Scalar(0));
            continue;
          }
          const Scalar* src = xc + static_cast<int64_t>(iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * s.stride - s.pad + kx * s.dilation;
            dst[ox] = (ix < 0 || ix >= W) ? Scalar(0) : src[ix];
          }
        }
      }
    }
  }
}

static void col2im_acc(const Scalar* cols, int C, int H, int W, int k, const Conv2dSpec& s,
                       int Ho, int Wo, Scalar* dx) {
  const int64_t plane = static_cast<int64_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    Scalar* xc = dx + static_cast<int64_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* row = cols + ((static_cast<int64_t>(c) * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * s.stride - s.pad + ky * s.dilation;
          if (iy < 0 || iy >= H) continue;
          const Scalar* src = row + static_cast<int64_t>(oy) * Wo;
          Scalar* dst = xc + static_cast<int64_t>(iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * s.stride - s.pad + kx * s.dilation;
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

Var conv2d(Tape& t, const Var& x, const Var& w, const Var& b, const Conv2dSpec& spec,
           Scalar wscale) {
  if (x->shape.size() != 3 || w->shape.size() != 4) throw ShapeError("conv2d: bad ranks");
  const int C = x->dim(0), H = x->dim(1), W = x->dim(2);
  const int Cout = w->dim(0), k = w->dim(2);
  if (w->dim(1) != C || w->dim(3) != k) {
    throw ShapeError("conv2d: weight shape does not match input channels");
  }
  const int Ho = conv_out_dim(H, k, spec.stride, spec.pad, spec.dilation);
  const int Wo = conv_out_dim(W, k, spec.stride, spec.pad, spec.dilation);
  if (Ho < 1 || Wo < 1) throw ShapeError("conv2d: output would be empty");

  const int64_t K = static_cast<int64_t>(C) * k * k;
  const int64_t L = static_cast<int64_t>(Ho) * Wo;
  std::vector<Scalar> cols(static_cast<size_t>(K * L));
  im2col(x->data.data(), C, H, W, k, spec, Ho, Wo, cols.data());

  auto out = make_var({Cout, Ho, Wo}, x->requires_grad || w->requires_grad);
  {
    ConstMapRM wm(w->data.data(), Cout, K);
    ConstMapRM cm(cols.data(), K, L);
    MapRM om(out->data.data(), Cout, L);
    om.noalias() = wm * cm;
    if (wscale != 1.0) om *= wscale;
    if (b) {
      for (int co = 0; co < Cout; ++co) om.row(co).array() += b->data[static_cast<size_t>(co)];
    }
  }

  t.record([&t, x, w, b, out, spec, wscale, C, H, W, k, Ho, Wo, K, L]() {
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    ConstMapRM gy(og->data(), w->dim(0), L);
    if (b && b->requires_grad) {
      auto& gb = t.grad(b);
      for (int co = 0; co < w->dim(0); ++co) gb[static_cast<size_t>(co)] += gy.row(co).sum();
    }
    std::vector<Scalar> cols(static_cast<size_t>(K * L));
    im2col(x->data.data(), C, H, W, k, spec, Ho, Wo, cols.data());
    if (w->requires_grad) {
      ConstMapRM cm(cols.data(), K, L);
      MapRM gw(t.grad(w).data(), w->dim(0), K);
      gw.noalias() += wscale * (gy * cm.transpose());
    }
    if (x->requires_grad) {
      std::vector<Scalar> dcols(static_cast<size_t>(K * L));
      ConstMapRM wm(w->data.data(), w->dim(0), K);
      MapRM dm(dcols.data(), K, L);
      dm.noalias() = wscale * (wm.transpose() * gy);
      col2im_acc(dcols.data(), C, H, W, k, spec, Ho, Wo, t.grad(x).data());
    }
  });
  return out;
}

Var linear(Tape& t, const Var& x, const Var& w, const Var& b, Scalar wscale) {
  const int out_dim = w->dim(0), in_dim = w->dim(1);
  if (x->size() != in_dim) throw ShapeError("linear: input size mismatch");
  auto out = make_var({out_dim}, x->requires_grad || w->requires_grad);
  {
    ConstMapRM wm(w->data.data(), out_dim, in_dim);
    Eigen::Map<const Eigen::VectorXd> xv(x->data.data(), in_dim);
    Eigen::Map<Eigen::VectorXd> ov(out->data.data(), out_dim);
    ov.noalias() = wscale * (wm * xv);
    if (b) ov += Eigen::Map<const Eigen::VectorXd>(b->data.data(), out_dim);
  }
  t.record([&t, x, w, b, out, wscale, out_dim, in_dim]() {
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    Eigen::Map<const Eigen::VectorXd> gy(og->data(), out_dim);
    if (b && b->requires_grad) {
      Eigen::Map<Eigen::VectorXd>(t.grad(b).data(), out_dim) += gy;
    }
    if (w->requires_grad) {
      MapRM gw(t.grad(w).data(), out_dim, in_dim);
      Eigen::Map<const Eigen::VectorXd> xv(x->data.data(), in_dim);
      gw.noalias() += wscale * (gy * xv.transpose());
    }
    if (x->requires_grad) {
      ConstMapRM wm(w->data.data(), out_dim, in_dim);
      Eigen::Map<Eigen::VectorXd>(t.grad(x).data(), in_dim).noalias() +=
          wscale * (wm.transpose() * gy);
    }
  });
  return out;
}

// ---- pointwise --------------------------------------------------------------

Var leaky_relu(Tape& t, const Var& x, Scalar slope) {
  auto out = make_var_like(x, x->requires_grad);
  for (size_t i = 0; i < x->data.size(); ++i) {
    Scalar v = x->data[i];
    out->data[i] = v > 0 ? v : slope * v;
  }
  out->shape = x->shape;
  t.record([&t, x, out, slope]() {
    if (!x->requires_grad) return;
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    auto& gx = t.grad(x);
    for (size_t i = 0; i < gx.size(); ++i) {
      gx[i] += (*og)[i] * (x->data[i] > 0 ? Scalar(1) : slope);
    }
  });
  return out;
}

Var tanh_op(Tape& t, const Var& x) {
  auto out = make_var_like(x, x->requires_grad);
  for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = std::tanh(x->data[i]);
  t.record([&t, x, out]() {
    if (!x->requires_grad) return;
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    auto& gx = t.grad(x);
    for (size_t i = 0; i < gx.size(); ++i) {
      gx[i] += (*og)[i] * (1.0 - out->data[i] * out->data[i]);
    }
  });
  return out;
}

Var sigmoid_op(Tape& t, const Var& x) {
  auto out = make_var_like(x, x->requires_grad);
  for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = 1.0 / (1.0 + std::exp(-x->data[i]));
  t.record([&t, x, out]() {
    if (!x->requires_grad) return;
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    auto& gx = t.grad(x);
    for (size_t i = 0; i < gx.size(); ++i) {
      gx[i] += (*og)[i] * out->data[i] * (1.0 - out->data[i]);
    }
  });
  return out;
}

Var add(Tape& t, const Var& a, const Var& b) {
  if (a->shape != b->shape) throw ShapeError("add: shape mismatch");
  auto out = make_var_like(a, a->requires_grad || b->requires_grad);
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
  t.record([&t, a, b, out]() {
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    if (a->requires_grad) {
      auto& ga = t.grad(a);
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += (*og)[i];
    }
    if (b->requires_grad) {
      auto& gb = t.grad(b);
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += (*og)[i];
    }
  });
  return out;
}

Var mul(Tape& t, const Var& a, const Var& b) {
  if (a->shape != b->shape) throw ShapeError("mul: shape mismatch");
  auto out = make_var_like(a, a->requires_grad || b->requires_grad);
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
  t.record([&t, a, b, out]() {
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    if (a->requires_grad) {
      auto& ga = t.grad(a);
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += (*og)[i] * b->data[i];
    }
    if (b->requires_grad) {
      auto& gb = t.grad(b);
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += (*og)[i] * a->data[i];
    }
  });
  return out;
}

Var scale(Tape& t, const Var& x, Scalar s) {
  auto out = make_var_like(x, x->requires_grad);
  for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = s * x->data[i];
  t.record([&t, x, out, s]() {
    if (!x->requires_grad) return;
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    auto& gx = t.grad(x);
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += s * (*og)[i];
  });
  return out;
}

Var lerp(Tape& t, const Var& a, const Var& b, Scalar alpha) {
  if (a->shape != b->shape) throw ShapeError("lerp: shape mismatch");
  auto out = make_var_like(a, a->requires_grad || b->requires_grad);
  for (size_t i = 0; i < a->data.size(); ++i) {
    out->data[i] = alpha * a->data[i] + (1.0 - alpha) * b->data[i];
  }
  t.record([&t, a, b, out, alpha]() {
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    if (a->requires_grad) {
      auto& ga = t.grad(a);
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += alpha * (*og)[i];
    }
    if (b->requires_grad) {
      auto& gb = t.grad(b);
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += (1.0 - alpha) * (*og)[i];
    }
  });
  return out;
}

Var concat_ch(Tape& t, const Var& a, const Var& b) {
  if (a->shape.size() != 3 || b->shape.size() != 3 || a->dim(1) != b->dim(1) ||
      a->dim(2) != b->dim(2)) {
    throw ShapeError("concat_ch: spatial dims mismatch");
  }
  auto out = make_var({a->dim(0) + b->dim(0), a->dim(1), a->dim(2)},
                      a->requires_grad || b->requires_grad);
  std::copy(a->data.begin(), a->data.end(), out->data.begin());
  std::copy(b->data.begin(), b->data.end(), out->data.begin() + a->size());
  t.record([&t, a, b, out]() {
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    if (a->requires_grad) {
      auto& ga = t.grad(a);
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += (*og)[i];
    }
    if (b->requires_grad) {
      auto& gb = t.grad(b);
      size_t off = a->data.size();
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += (*og)[off + i];
    }
  });
  return out;
}

Var reshape_copy(Tape& t, const Var& x, std::vector<int> shape) {
  if (shape_size(shape) != x->size()) throw ShapeError("reshape_copy: element count mismatch");
  auto out = make_var(std::move(shape), x->requires_grad);
  out->data = x->data;
  t.record([&t, x, out]() {
    if (!x->requires_grad) return;
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    auto& gx = t.grad(x);
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += (*og)[i];
  });
  return out;
}

// ---- normalization ----------------------------------------------------------

Var pixel_norm(Tape& t, const Var& x, Scalar eps) {
  const int C = x->dim(0);
  const int64_t plane = x->size() / C;
  auto out = make_var_like(x, x->requires_grad);
  auto inv = std::make_shared<std::vector<Scalar>>(static_cast<size_t>(plane));
  for (int64_t p = 0; p < plane; ++p) {
    Scalar m = 0;
    for (int c = 0; c < C; ++c) {
      Scalar v = x->data[static_cast<size_t>(c * plane + p)];
      m += v * v;
    }
    Scalar s = 1.0 / std::sqrt(m / C + eps);
    (*inv)[static_cast<size_t>(p)] = s;
    for (int c = 0; c < C; ++c) {
      out->data[static_cast<size_t>(c * plane + p)] = x->data[static_cast<size_t>(c * plane + p)] * s;
    }
  }
  t.record([&t, x, out, inv, C, plane]() {
    if (!x->requires_grad) return;
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    auto& gx = t.grad(x);
    for (int64_t p = 0; p < plane; ++p) {
      Scalar s = (*inv)[static_cast<size_t>(p)];
      Scalar dot = 0;
      for (int c = 0; c < C; ++c) {
        size_t i = static_cast<size_t>(c * plane + p);
        dot += (*og)[i] * x->data[i];
      }
      Scalar coef = s * s * s * dot / C;
      for (int c = 0; c < C; ++c) {
        size_t i = static_cast<size_t>(c * plane + p);
        gx[i] += s * (*og)[i] - coef * x->data[i];
      }
    }
  });
  return out;
}

Var instance_norm(Tape& t, const Var& x, const Var& gamma, const Var& beta, Scalar eps) {
  const int C = x->dim(0);
  const int64_t N = x->size() / C;
  if (gamma->size() != C || beta->size() != C) throw ShapeError("instance_norm: affine size");
  auto out = make_var_like(x, true);
  auto mean = std::make_shared<std::vector<Scalar>>(C);
  auto istd = std::make_shared<std::vector<Scalar>>(C);
  for (int c = 0; c < C; ++c) {
    const Scalar* xc = x->data.data() + c * N;
    Scalar m = 0;
    for (int64_t i = 0; i < N; ++i) m += xc[i];
    m /= N;
    Scalar v = 0;
    for (int64_t i = 0; i < N; ++i) v += (xc[i] - m) * (xc[i] - m);
    v /= N;
    Scalar is = 1.0 / std::sqrt(v + eps);
    (*mean)[c] = m;
    (*istd)[c] = is;
    Scalar g = gamma->data[c], b = beta->data[c];
    Scalar* oc = out->data.data() + c * N;
    for (int64_t i = 0; i < N; ++i) oc[i] = g * (xc[i] - m) * is + b;
  }
  t.record([&t, x, gamma, beta, out, mean, istd, C, N]() {
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    for (int c = 0; c < C; ++c) {
      const Scalar* xc = x->data.data() + c * N;
      const Scalar* gy = og->data() + c * N;
      Scalar m = (*mean)[c], is = (*istd)[c], g = gamma->data[c];
      Scalar sum_gy = 0, sum_gy_xhat = 0;
      for (int64_t i = 0; i < N; ++i) {
        sum_gy += gy[i];
        sum_gy_xhat += gy[i] * (xc[i] - m) * is;
      }
      if (beta->requires_grad) t.grad(beta)[c] += sum_gy;
      if (gamma->requires_grad) t.grad(gamma)[c] += sum_gy_xhat;
      if (x->requires_grad) {
        auto& gx = t.grad(x);
        Scalar* gxc = gx.data() + c * N;
        for (int64_t i = 0; i < N; ++i) {
          Scalar xhat = (xc[i] - m) * is;
          gxc[i] += g * is * (gy[i] - sum_gy / N - xhat * sum_gy_xhat / N);
        }
      }
    }
  });
  return out;
}

// ---- resampling -------------------------------------------------------------

Var upsample_nearest2(Tape& t, const Var& x) {
  const int C = x->dim(0), H = x->dim(1), W = x->dim(2);
  auto out = make_var({C, 2 * H, 2 * W}, x->requires_grad);
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < 2 * H; ++y) {
      const Scalar* src = x->data.data() + (static_cast<int64_t>(c) * H + y / 2) * W;
      Scalar* dst = out->data.data() + (static_cast<int64_t>(c) * 2 * H + y) * 2 * W;
      for (int xx = 0; xx < 2 * W; ++xx) dst[xx] = src[xx / 2];
    }
  }
  t.record([&t, x, out, C, H, W]() {
    if (!x->requires_grad) return;
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    auto& gx = t.grad(x);
    for (int c = 0; c < C; ++c) {
      for (int y = 0; y < 2 * H; ++y) {
        const Scalar* src = og->data() + (static_cast<int64_t>(c) * 2 * H + y) * 2 * W;
        Scalar* dst = gx.data() + (static_cast<int64_t>(c) * H + y / 2) * W;
        for (int xx = 0; xx < 2 * W; ++xx) dst[xx / 2] += src[xx];
      }
    }
  });
  return out;
}

Var upsample_nearest_to(Tape& t, const Var& x, int out_h, int out_w) {
  const int C = x->dim(0), H = x->dim(1), W = x->dim(2);
  if (out_h == H && out_w == W) return x;
  auto out = make_var({C, out_h, out_w}, x->requires_grad);
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < out_h; ++y) {
      int sy = static_cast<int>(static_cast<int64_t>(y) * H / out_h);
      const Scalar* src = x->data.data() + (static_cast<int64_t>(c) * H + sy) * W;
      Scalar* dst = out->data.data() + (static_cast<int64_t>(c) * out_h + y) * out_w;
      for (int xx = 0; xx < out_w; ++xx) {
        dst[xx] = src[static_cast<int64_t>(xx) * W / out_w];
      }
    }
  }
  t.record([&t, x, out, C, H, W, out_h, out_w]() {
    if (!x->requires_grad) return;
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    auto& gx = t.grad(x);
    for (int c = 0; c < C; ++c) {
      for (int y = 0; y < out_h; ++y) {
        int sy = static_cast<int>(static_cast<int64_t>(y) * H / out_h);
        const Scalar* src = og->data() + (static_cast<int64_t>(c) * out_h + y) * out_w;
        Scalar* dst = gx.data() + (static_cast<int64_t>(c) * H + sy) * W;
        for (int xx = 0; xx < out_w; ++xx) {
          dst[static_cast<int64_t>(xx) * W / out_w] += src[xx];
        }
      }
    }
  });
  return out;
}

Var avg_pool2(Tape& t, const Var& x) {
  const int C = x->dim(0), H = x->dim(1), W = x->dim(2);
  if (H % 2 || W % 2) throw ShapeError("avg_pool2: dims must be even");
  auto out = make_var({C, H / 2, W / 2}, x->requires_grad);
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < H / 2; ++y) {
      for (int xx = 0; xx < W / 2; ++xx) {
        const Scalar* p = x->data.data() + (static_cast<int64_t>(c) * H + 2 * y) * W + 2 * xx;
        out->data[(static_cast<int64_t>(c) * (H / 2) + y) * (W / 2) + xx] =
            0.25 * (p[0] + p[1] + p[W] + p[W + 1]);
      }
    }
  }
  t.record([&t, x, out, C, H, W]() {
    if (!x->requires_grad) return;
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    auto& gx = t.grad(x);
    for (int c = 0; c < C; ++c) {
      for (int y = 0; y < H / 2; ++y) {
        for (int xx = 0; xx < W / 2; ++xx) {
          Scalar g = 0.25 * (*og)[(static_cast<int64_t>(c) * (H / 2) + y) * (W / 2) + xx];
          Scalar* p = gx.data() + (static_cast<int64_t>(c) * H + 2 * y) * W + 2 * xx;
          p[0] += g;
          p[1] += g;
          p[W] += g;
          p[W + 1] += g;
        }
      }
    }
  });
  return out;
}

Var adaptive_avg_pool(Tape& t, const Var& x, int bins_h, int bins_w) {
  const int C = x->dim(0), H = x->dim(1), W = x->dim(2);
  auto out = make_var({C, bins_h, bins_w}, x->requires_grad);
  auto bounds = [](int size, int bins, int i) {
    int lo = static_cast<int>(static_cast<int64_t>(i) * size / bins);
    int hi = static_cast<int>(static_cast<int64_t>(i + 1) * size / bins);
    return std::pair<int, int>{lo, std::max(hi, lo + 1)};
  };
  for (int c = 0; c < C; ++c) {
    for (int by = 0; by < bins_h; ++by) {
      auto [y0, y1] = bounds(H, bins_h, by);
      for (int bx = 0; bx < bins_w; ++bx) {
        auto [x0, x1] = bounds(W, bins_w, bx);
        Scalar s = 0;
        for (int y = y0; y < y1; ++y) {
          for (int xx = x0; xx < x1; ++xx) {
            s += x->data[(static_cast<int64_t>(c) * H + y) * W + xx];
          }
        }
        out->data[(static_cast<int64_t>(c) * bins_h + by) * bins_w + bx] =
            s / ((y1 - y0) * (x1 - x0));
      }
    }
  }
  t.record([&t, x, out, C, H, W, bins_h, bins_w, bounds]() {
    if (!x->requires_grad) return;
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    auto& gx = t.grad(x);
    for (int c = 0; c < C; ++c) {
      for (int by = 0; by < bins_h; ++by) {
        auto [y0, y1] = bounds(H, bins_h, by);
        for (int bx = 0; bx < bins_w; ++bx) {
          auto [x0, x1] = bounds(W, bins_w, bx);
          Scalar g = (*og)[(static_cast<int64_t>(c) * bins_h + by) * bins_w + bx] /
                     ((y1 - y0) * (x1 - x0));
          for (int y = y0; y < y1; ++y) {
            for (int xx = x0; xx < x1; ++xx) {
              gx[(static_cast<int64_t>(c) * H + y) * W + xx] += g;
            }
          }
        }
      }
    }
  });
  return out;
}

// ---- reductions / losses ------------------------------------------------------

Var mean_all(Tape& t, const Var& x) {
  auto out = make_var({1}, x->requires_grad);
  Scalar s = 0;
  for (Scalar v : x->data) s += v;
  out->data[0] = s / static_cast<Scalar>(x->data.size());
  t.record([&t, x, out]() {
    if (!x->requires_grad) return;
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    Scalar g = (*og)[0] / static_cast<Scalar>(x->data.size());
    auto& gx = t.grad(x);
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
  return out;
}

Var mse_to_const(Tape& t, const Var& x, Scalar target) {
  auto out = make_var({1}, x->requires_grad);
  Scalar s = 0;
  for (Scalar v : x->data) s += (v - target) * (v - target);
  out->data[0] = s / static_cast<Scalar>(x->data.size());
  t.record([&t, x, out, target]() {
    if (!x->requires_grad) return;
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    Scalar g = 2.0 * (*og)[0] / static_cast<Scalar>(x->data.size());
    auto& gx = t.grad(x);
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g * (x->data[i] - target);
  });
  return out;
}

Var l1_to_ref(Tape& t, const Var& x, std::shared_ptr<const std::vector<Scalar>> ref) {
  if (ref->size() != x->data.size()) throw ShapeError("l1_to_ref: size mismatch");
  auto out = make_var({1}, x->requires_grad);
  Scalar s = 0;
  for (size_t i = 0; i < x->data.size(); ++i) s += std::abs(x->data[i] - (*ref)[i]);
  out->data[0] = s / static_cast<Scalar>(x->data.size());
  t.record([&t, x, out, ref]() {
    if (!x->requires_grad) return;
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    Scalar g = (*og)[0] / static_cast<Scalar>(x->data.size());
    auto& gx = t.grad(x);
    for (size_t i = 0; i < gx.size(); ++i) {
      Scalar d = x->data[i] - (*ref)[i];
      gx[i] += g * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
    }
  });
  return out;
}

Var softmax_cross_entropy(Tape& t, const Var& logits,
                          std::shared_ptr<const std::vector<uint8_t>> target,
                          const std::vector<Scalar>& class_weights) {
  const int C = logits->dim(0);
  const int64_t plane = logits->size() / C;
  if (static_cast<int64_t>(target->size()) != plane) {
    throw ShapeError("softmax_cross_entropy: target size mismatch");
  }
  std::vector<Scalar> w(class_weights);
  if (w.empty()) w.assign(static_cast<size_t>(C), 1.0);
  if (static_cast<int>(w.size()) != C) throw ShapeError("softmax_cross_entropy: weight size");

  // Keep softmax probabilities for the backward pass.
  auto probs = std::make_shared<std::vector<Scalar>>(logits->data.size());
  Scalar loss = 0, weight_sum = 0;
  for (int64_t p = 0; p < plane; ++p) {
    Scalar mx = -1e300;
    for (int c = 0; c < C; ++c) mx = std::max(mx, logits->data[static_cast<size_t>(c * plane + p)]);
    Scalar z = 0;
    for (int c = 0; c < C; ++c) {
      Scalar e = std::exp(logits->data[static_cast<size_t>(c * plane + p)] - mx);
      (*probs)[static_cast<size_t>(c * plane + p)] = e;
      z += e;
    }
    for (int c = 0; c < C; ++c) (*probs)[static_cast<size_t>(c * plane + p)] /= z;
    uint8_t tc = (*target)[static_cast<size_t>(p)];
    Scalar wt = w[tc];
    loss -= wt * std::log(std::max((*probs)[static_cast<size_t>(tc * plane + p)], 1e-300));
    weight_sum += wt;
  }
  auto out = make_var({1}, logits->requires_grad);
  out->data[0] = loss / weight_sum;

  auto wshared = std::make_shared<std::vector<Scalar>>(std::move(w));
  t.record([&t, logits, out, probs, target, wshared, C, plane, weight_sum]() {
    if (!logits->requires_grad) return;
    const auto* og = t.find_grad(out.get());
    if (!og) return;
    Scalar g = (*og)[0] / weight_sum;
    auto& gx = t.grad(logits);
    for (int64_t p = 0; p < plane; ++p) {
      uint8_t tc = (*target)[static_cast<size_t>(p)];
      Scalar wt = (*wshared)[tc];
      for (int c = 0; c < C; ++c) {
        size_t i = static_cast<size_t>(c * plane + p);
        Scalar ind = (c == tc) ? 1.0 : 0.0;
        gx[i] += g * wt * ((*probs)[i] - ind);
      }
    }
  });
  return out;
}

void softmax_channels(ChannelGrid& g) {
  const int C = g.channels;
  const int64_t plane = static_cast<int64_t>(g.height) * g.width;
  for (int64_t p = 0; p < plane; ++p) {
    Scalar mx = -1e300;
    for (int c = 0; c < C; ++c) mx = std::max(mx, g.values[static_cast<size_t>(c * plane + p)]);
    Scalar z = 0;
    for (int c = 0; c < C; ++c) {
      Scalar& v = g.values[static_cast<size_t>(c * plane + p)];
      v = std::exp(v - mx);
      z += v;
    }
    for (int c = 0; c < C; ++c) g.values[static_cast<size_t>(c * plane + p)] /= z;
  }
}

}  // namespace cxrgen::nn
