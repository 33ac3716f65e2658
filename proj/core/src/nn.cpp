#include "splatnorm/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace splatnorm {

Var Binder::bind(Tensor& param) {
  if (!param.defined()) throw std::invalid_argument("bind: parameter tensor is empty");
  if (trainable) {
    Var v = tape->leaf(param);
    bound.emplace_back(&param, v);
    return v;
  }
  return tape->constant(param);
}

namespace {

Tensor kaiming_uniform(Rng& rng, Shape shape, int64_t fan_in) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  double* p = t.unique_data();
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) p[i] = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

Conv2dLayer make_conv2d(Rng& rng, int cin, int cout, int k, int stride, Pad pad) {
  if (cin < 1 || cout < 1 || k < 1 || k % 2 == 0)
    throw std::invalid_argument("make_conv2d: bad channel counts or even kernel");
  Conv2dLayer layer;
  layer.w = kaiming_uniform(rng, {cout, cin, k, k}, int64_t{1} * cin * k * k);
  layer.b = Tensor::zeros({cout});
  layer.stride = stride;
  layer.pad = pad;
  return layer;
}

LinearLayer make_linear(Rng& rng, int in, int out) {
  if (in < 1 || out < 1) throw std::invalid_argument("make_linear: bad extents");
  LinearLayer layer;
  layer.w = kaiming_uniform(rng, {in, out}, in);
  layer.b = Tensor::zeros({out});
  return layer;
}

BatchNorm1d make_batchnorm(int dim) {
  if (dim < 1) throw std::invalid_argument("make_batchnorm: bad extent");
  BatchNorm1d bn;
  bn.gamma = Tensor::full({dim}, 1.0);
  bn.beta = Tensor::zeros({dim});
  bn.running_mean = Tensor::zeros({dim});
  bn.running_var = Tensor::full({dim}, 1.0);
  return bn;
}

Var forward(Binder& bind, Conv2dLayer& layer, Var x) {
  Var w = bind.bind(layer.w);
  Var b = bind.bind(layer.b);
  Var y = conv2d(x, w, layer.pad, layer.stride);
  // bias broadcast over [Co,Ho,Wo]
  const int64_t co = layer.b.dim(0);
  return add(y, reshape(b, {co, 1, 1}));
}

Var forward(Binder& bind, LinearLayer& layer, Var x) {
  Var w = bind.bind(layer.w);
  Var b = bind.bind(layer.b);
  return add(matmul(x, w), b);
}

Var forward(Binder& bind, BatchNorm1d& layer, Var x, bool training) {
  constexpr double kEps = 1e-5;
  constexpr double kMomentum = 0.1;
  Tape& t = *bind.tape;
  Var gamma = bind.bind(layer.gamma);
  Var beta = bind.bind(layer.beta);
  if (!training) {
    Var rm = t.constant(layer.running_mean);
    Var rv = t.constant(layer.running_var);
    Var xhat = mul(sub(x, rm), pow_const(add_const(rv, kEps), -0.5));
    return add(mul(xhat, gamma), beta);
  }
  Var mu = mean_axis(x, 0);                 // [D]
  Var xc = sub(x, mu);                      // [B,D]
  Var var = mean_axis(square(xc), 0);       // biased
  Var xhat = mul(xc, pow_const(add_const(var, kEps), -0.5));
  // running-stat update is a value-level side effect of the training pass
  const Tensor mu_v = mu.value();
  const Tensor var_v = var.value();
  const int64_t d = layer.gamma.dim(0);
  double* rm = layer.running_mean.unique_data();
  double* rv = layer.running_var.unique_data();
  for (int64_t i = 0; i < d; ++i) {
    rm[i] = (1.0 - kMomentum) * rm[i] + kMomentum * mu_v.at(i);
    rv[i] = (1.0 - kMomentum) * rv[i] + kMomentum * var_v.at(i);
  }
  return add(mul(xhat, gamma), beta);
}

Tensor sinusoidal_time_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0)
    throw std::invalid_argument("sinusoidal_time_embedding: dim must be even and >= 2");
  const int half = dim / 2;
  Tensor emb({dim});
  double* p = emb.unique_data();
  for (int j = 0; j < half; ++j) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(j) / half);
    p[2 * j] = std::sin(t * freq);
    p[2 * j + 1] = std::cos(t * freq);
  }
  return emb;
}

Var chw_from_hwc(Var x) {
  const Shape& s = x.value().shape();
  if (s.size() != 3) throw std::invalid_argument("chw_from_hwc: wants rank 3");
  const int64_t h = s[0], w = s[1], c = s[2];
  return reshape(transpose2d(reshape(x, {h * w, c})), {c, h, w});
}

Var hwc_from_chw(Var x) {
  const Shape& s = x.value().shape();
  if (s.size() != 3) throw std::invalid_argument("hwc_from_chw: wants rank 3");
  const int64_t c = s[0], h = s[1], w = s[2];
  return reshape(transpose2d(reshape(x, {c, h * w})), {h, w, c});
}

Var normalize_pixels_hwc(Var x, double min_norm, std::vector<char>* valid_out) {
  Tape& t = *x.tape();
  const Shape& s = x.value().shape();
  if (s.size() != 3 || s[2] != 3)
    throw std::invalid_argument("normalize_pixels_hwc: wants [H,W,3]");
  const int64_t h = s[0], w = s[1];
  Var n2 = sum_axis(square(x), -1, /*keepdim=*/true);  // [H,W,1]
  // mask invalid rows before the rescale so they stay exactly zero and
  // block the (potentially huge) 1/norm gradient
  Tensor mask({h, w, 1});
  {
    const Tensor n2v = n2.value();
    double* m = mask.unique_data();
    if (valid_out) valid_out->assign(static_cast<size_t>(h * w), 0);
    for (int64_t i = 0; i < h * w; ++i) {
      const bool ok = std::sqrt(n2v.at(i)) >= min_norm;
      m[i] = ok ? 1.0 : 0.0;
      if (valid_out && ok) (*valid_out)[static_cast<size_t>(i)] = 1;
    }
  }
  Var inv = pow_const(add_const(n2, 1e-24), -0.5);
  return mul(mul(x, inv), t.constant(mask));
}

Tensor& SgdMomentum::velocity_for(Tensor* param) {
  for (auto& [key, vel] : velocity_) {
    if (key == param) return vel;
  }
  velocity_.emplace_back(param, Tensor::zeros(param->shape()));
  return velocity_.back().second;
}

void SgdMomentum::step(Tape& tape, const std::vector<std::pair<Tensor*, Var>>& bound) {
  // Global-norm clip over every parameter the pass touched; parameters the
  // loss never reached contribute zero.
  double sq = 0.0;
  for (const auto& [param, var] : bound) {
    if (!tape.has_grad(var.id())) continue;
    const Tensor& g = var.grad();
    const double* p = g.data();
    const int64_t n = g.numel();
    for (int64_t i = 0; i < n; ++i) sq += p[i] * p[i];
  }
  const double norm = std::sqrt(sq);
  const double factor = (grad_clip > 0.0 && norm > grad_clip) ? grad_clip / norm : 1.0;
  for (const auto& [param, var] : bound) {
    Tensor& vel = velocity_for(param);
    double* v = vel.unique_data();
    double* p = param->unique_data();
    const int64_t n = param->numel();
    const double* g = tape.has_grad(var.id()) ? var.grad().data() : nullptr;
    for (int64_t i = 0; i < n; ++i) {
      const double gi = g ? factor * g[i] : 0.0;
      v[i] = momentum * v[i] + gi;
      p[i] -= lr * v[i];
    }
  }
}

}  // namespace splatnorm
