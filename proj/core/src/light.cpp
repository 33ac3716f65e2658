#include "splatnorm/light.hpp"

#include <cmath>
#include <stdexcept>

namespace splatnorm {
namespace {

constexpr double kTwoPi = 2.0 * M_PI;
constexpr int kGridN = 5;
constexpr double kGrid[kGridN] = {-1.0, -0.5, 0.0, 0.5, 1.0};

}  // namespace

LightField LightField::ambient(const double radiance[3]) {
  LightField l;
  l.kind = Kind::kAmbient;
  for (int i = 0; i < 3; ++i) l.radiance[i] = radiance[i];
  return l;
}

LightField LightField::directional(const double direction[3], const double radiance[3]) {
  double n = 0.0;
  for (int i = 0; i < 3; ++i) n += direction[i] * direction[i];
  n = std::sqrt(n);
  if (n < 1e-12) throw std::invalid_argument("light: zero direction");
  LightField l;
  l.kind = Kind::kDirectional;
  for (int i = 0; i < 3; ++i) {
    l.direction[i] = direction[i] / n;
    l.radiance[i] = radiance[i];
  }
  return l;
}

void LightField::effective_direction(double out[3]) const {
  if (kind == Kind::kDirectional) {
    for (int i = 0; i < 3; ++i) out[i] = direction[i];
  } else {
    out[0] = 0.0;
    out[1] = 0.0;
    out[2] = 1.0;
  }
}

GaborEval gabor(const double x[2], double xi, const double alpha[2]) {
  if (xi <= 0.0) throw std::invalid_argument("gabor: xi must be positive");
  const double r2 = x[0] * x[0] + x[1] * x[1];
  GaborEval e;
  e.amplitude = std::exp(-r2 / (2.0 * xi * xi)) / (kTwoPi * xi * xi);
  e.modulation = std::cos(kTwoPi * (alpha[0] * x[0] + alpha[1] * x[1]));
  return e;
}

double splat_footprint(const GaussianSplat& g) {
  double ls = g.log_scale[0];
  for (int i = 1; i < 3; ++i) ls = std::min(ls, g.log_scale[i]);
  return 0.5 * std::max(std::exp(ls), kMinScale);
}

double mean_gabor(const GaussianSplat& g) {
  if (g.lambda <= 0.0) throw std::invalid_argument("mean_gabor: lambda must be positive");
  const double w = splat_footprint(g);
  const double alpha[2] = {2.0 * g.grad_h[0] / g.lambda, 2.0 * g.grad_h[1] / g.lambda};
  double acc = 0.0;
  for (int i = 0; i < kGridN; ++i) {
    for (int j = 0; j < kGridN; ++j) {
      const double x[2] = {w * kGrid[i], w * kGrid[j]};
      const GaborEval e = gabor(x, g.xi, alpha);
      acc += e.amplitude * e.modulation;
    }
  }
  return acc / (kGridN * kGridN);
}

void effective_irradiance(const GaussianSplat& g, const LightField& light, double out[3]) {
  const double gbar = std::max(mean_gabor(g), 0.0);
  for (int c = 0; c < 3; ++c) out[c] = light.radiance[c] * gbar;
}

ShadingResult shade(const GaussianSplat& g, const LightField& light, const double view_pos[3]) {
  ShadingResult r;
  splat_normal(g, view_pos, r.normal);
  effective_irradiance(g, light, r.irradiance);
  double dir[3];
  light.effective_direction(dir);
  const double cosine =
      std::max(r.normal[0] * dir[0] + r.normal[1] * dir[1] + r.normal[2] * dir[2], 0.0);
  for (int c = 0; c < 3; ++c) r.l_out[c] = g.k_d[c] * cosine * r.irradiance[c];
  return r;
}

void shade_with_normal(const GaussianSplat& g, const LightField& light, const double n[3],
                       double out[3]) {
  if (std::fabs(n[2]) < 1e-6)
    throw std::invalid_argument("shade_with_normal: grazing normal, grad_h undefined");
  GaussianSplat h = g;
  h.grad_h[0] = -n[0] / n[2];
  h.grad_h[1] = -n[1] / n[2];
  double irr[3];
  effective_irradiance(h, light, irr);
  double dir[3];
  light.effective_direction(dir);
  const double cosine = std::max(n[0] * dir[0] + n[1] * dir[1] + n[2] * dir[2], 0.0);
  for (int c = 0; c < 3; ++c) out[c] = g.k_d[c] * cosine * irr[c];
}

void shade_grad_normal(const GaussianSplat& g, const LightField& light, const double n[3],
                       double out[3][3]) {
  if (std::fabs(n[2]) < 1e-6)
    throw std::invalid_argument("shade_grad_normal: grazing normal, gradient singular");
  const double gh[2] = {-n[0] / n[2], -n[1] / n[2]};

  GaussianSplat h = g;
  h.grad_h[0] = gh[0];
  h.grad_h[1] = gh[1];
  const double gbar = mean_gabor(h);
  const double gbar_pos = std::max(gbar, 0.0);

  double dir[3];
  light.effective_direction(dir);
  const double ndl = n[0] * dir[0] + n[1] * dir[1] + n[2] * dir[2];
  const double cosine = std::max(ndl, 0.0);
  const double cos_step = ndl > 0.0 ? 1.0 : 0.0;

  // dGbar/dalpha over the quadrature grid.
  const double w = splat_footprint(h);
  const double alpha[2] = {2.0 * gh[0] / h.lambda, 2.0 * gh[1] / h.lambda};
  double dg_dalpha[2] = {0.0, 0.0};
  for (int i = 0; i < kGridN; ++i) {
    for (int j = 0; j < kGridN; ++j) {
      const double x[2] = {w * kGrid[i], w * kGrid[j]};
      const GaborEval e = gabor(x, h.xi, alpha);
      const double phase = kTwoPi * (alpha[0] * x[0] + alpha[1] * x[1]);
      const double dmod = -std::sin(phase) * kTwoPi;
      dg_dalpha[0] += e.amplitude * dmod * x[0];
      dg_dalpha[1] += e.amplitude * dmod * x[1];
    }
  }
  dg_dalpha[0] /= kGridN * kGridN;
  dg_dalpha[1] /= kGridN * kGridN;

  const double g_step = gbar > 0.0 ? 1.0 : 0.0;
  // dGbar/dgrad_h, then the tangent rule d grad_h / d n.
  const double dg_dh[2] = {dg_dalpha[0] * 2.0 / h.lambda, dg_dalpha[1] * 2.0 / h.lambda};
  const double nz2 = n[2] * n[2];
  const double jh[2][3] = {{-1.0 / n[2], 0.0, n[0] / nz2}, {0.0, -1.0 / n[2], n[1] / nz2}};
  double dg_dn[3];
  for (int i = 0; i < 3; ++i)
    dg_dn[i] = g_step * (dg_dh[0] * jh[0][i] + dg_dh[1] * jh[1][i]);

  for (int c = 0; c < 3; ++c) {
    const double ec = light.radiance[c] * gbar_pos;
    for (int i = 0; i < 3; ++i) {
      out[c][i] = g.k_d[c] * (cos_step * dir[i] * ec + cosine * light.radiance[c] * dg_dn[i]);
    }
  }
}

double energy_loss_value(const Scene& scene, const LightField& light,
                         const Tensor& contributions, const double view_pos[3]) {
  const int64_t k = static_cast<int64_t>(scene.splats.size());
  if (k == 0) throw std::invalid_argument("energy_loss: empty scene");
  if (contributions.rank() != 2 || contributions.dim(0) != k || contributions.dim(1) != 3)
    throw std::invalid_argument("energy_loss: contributions must be K x 3");
  double acc = 0.0;
  for (int64_t i = 0; i < k; ++i) {
    const ShadingResult r = shade(scene.splats[static_cast<size_t>(i)], light, view_pos);
    for (int c = 0; c < 3; ++c) acc += std::fabs(r.l_out[c] - contributions.at(i * 3 + c));
  }
  return acc / static_cast<double>(k);
}

ShadeVars shade_vars(Tape& tape, const SceneVars& sv, Var normals_world,
                     const LightField& light) {
  const int64_t k = sv.xi.value().dim(0);

  Var min_ls = min_axis(sv.log_scale, -1, /*keepdim=*/false);  // K
  Var w = scale(exp(min_ls), 0.5);
  Var w2 = square(w);
  Var xi2 = square(sv.xi);
  Var inv_amp = scale(pow_const(xi2, -1.0), 1.0 / kTwoPi);

  Var inv_lambda = reshape(pow_const(sv.lambda, -1.0), {k, 1});
  Var alpha = scale(mul(sv.grad_h, inv_lambda), 2.0);  // K x 2
  Var a1 = select(alpha, -1, 0);
  Var a2 = select(alpha, -1, 1);
  Var a1w = mul(a1, w);
  Var a2w = mul(a2, w);

  Var sum = tape.constant(Tensor::zeros({k}));
  for (int i = 0; i < kGridN; ++i) {
    for (int j = 0; j < kGridN; ++j) {
      const double u1 = kGrid[i], u2 = kGrid[j];
      const double r2c = u1 * u1 + u2 * u2;
      Var env = exp(neg(div(scale(w2, 0.5 * r2c), xi2)));
      Var amp = mul(inv_amp, env);
      Var phase = scale(add(scale(a1w, u1), scale(a2w, u2)), kTwoPi);
      sum = add(sum, mul(amp, cos(phase)));
    }
  }
  Var gbar = scale(sum, 1.0 / (kGridN * kGridN));
  Var gbar_pos = reshape(relu(gbar), {k, 1});

  Tensor rad = Tensor::zeros({3});
  for (int c = 0; c < 3; ++c) rad.unique_data()[c] = light.radiance[c];
  Var irradiance = mul(gbar_pos, tape.constant(rad));  // K x 3

  double dir[3];
  light.effective_direction(dir);
  Tensor dir_t = Tensor::zeros({3});
  for (int c = 0; c < 3; ++c) dir_t.unique_data()[c] = dir[c];
  Var cosine = relu(sum_axis(mul(normals_world, tape.constant(dir_t)), -1, false));  // K

  ShadeVars out;
  out.irradiance = irradiance;
  out.color = mul(mul(sv.kd, irradiance), reshape(cosine, {k, 1}));
  return out;
}

Var energy_loss_vars(Var shade_color, Var contributions) {
  return mean_all(sum_axis(abs(sub(shade_color, contributions)), -1, false));
}

}  // namespace splatnorm
