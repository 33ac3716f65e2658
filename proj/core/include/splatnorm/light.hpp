#pragma once

#include "splatnorm/scene.hpp"
#include "splatnorm/tape.hpp"
#include "splatnorm/tensor.hpp"

namespace splatnorm {

struct LightField {
  enum class Kind { kAmbient, kDirectional };
  Kind kind = Kind::kAmbient;
  double direction[3] = {0, 0, 1};  // unit, surface toward light; directional only
  double radiance[3] = {1, 1, 1};

  static LightField ambient(const double radiance[3]);
  static LightField directional(const double direction[3], const double radiance[3]);
  // Shading direction: the light direction, or +z for ambient.
  void effective_direction(double out[3]) const;
};

struct GaborEval {
  double amplitude;   // isotropic envelope 1/(2 pi xi^2) exp(-|x|^2 / (2 xi^2))
  double modulation;  // cos(2 pi alpha . x)
};
GaborEval gabor(const double x[2], double xi, const double alpha[2]);

// Footprint half-width: 0.5 * smallest splat scale (floored).
double splat_footprint(const GaussianSplat& g);

// Mean of amplitude*modulation over the 5x5 grid on [-w, w]^2 with
// alpha = 2 grad_h / lambda.
double mean_gabor(const GaussianSplat& g);

// E[c] = radiance[c] * max(mean_gabor, 0).
void effective_irradiance(const GaussianSplat& g, const LightField& light, double out[3]);

struct ShadingResult {
  double l_out[3];
  double irradiance[3];
  double normal[3];  // world frame, flipped toward the viewer
};
ShadingResult shade(const GaussianSplat& g, const LightField& light, const double view_pos[3]);

// shade with an explicit unit normal; grad_h is re-derived from it by the
// heightfield rule grad_h = (-n_x/n_z, -n_y/n_z). n and the light direction
// must share a frame whose +z is the height axis. Throws when |n_z| < 1e-6.
void shade_with_normal(const GaussianSplat& g, const LightField& light, const double n[3],
                       double out[3]);

// Jacobian of shade_with_normal: out[c][i] = d l_out[c] / d n_i.
void shade_grad_normal(const GaussianSplat& g, const LightField& light, const double n[3],
                       double out[3][3]);

// Mean over splats of the channel-summed L1 gap between the shaded color and
// the rendered per-splat contribution (K x 3).
double energy_loss_value(const Scene& scene, const LightField& light,
                         const Tensor& contributions, const double view_pos[3]);

struct ShadeVars {
  Var color;       // K x 3
  Var irradiance;  // K x 3
};
// normals_world from splat_normals_vars; the light is a graph constant.
ShadeVars shade_vars(Tape& tape, const SceneVars& sv, Var normals_world, const LightField& light);

Var energy_loss_vars(Var shade_color, Var contributions);

}  // namespace splatnorm
