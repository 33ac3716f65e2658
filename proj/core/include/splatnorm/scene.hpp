#pragma once

#include <vector>

#include "splatnorm/camera.hpp"
#include "splatnorm/tape.hpp"
#include "splatnorm/tensor.hpp"

namespace splatnorm {

// exp(log_scale) is floored here so covariances stay invertible.
inline constexpr double kMinScale = 1e-6;
// 2D covariances are dilated by this after projection (screen-space
// low-pass; keeps sub-pixel splats rasterizable).
inline constexpr double kCovDilation = 0.3;

struct GaussianSplat {
  double mu[3] = {0, 0, 0};
  double rot[4] = {1, 0, 0, 0};  // unit quaternion, (w, x, y, z)
  double log_scale[3] = {0, 0, 0};
  double opacity_logit = 0.0;
  double k_d[3] = {1, 1, 1};  // diffuse albedo, each in [0, 1]
  double grad_h[2] = {0, 0};  // surface height gradient in the local tangent frame
  double xi = 1.0;            // Gabor envelope width, > 0
  double lambda = 1.0;        // carrier wavelength, > 0
};

struct Scene {
  std::vector<GaussianSplat> splats;
  double background[3] = {0, 0, 0};
};

// Quaternion need not be unit; it is normalized internally. out is row-major.
void quat_to_rotmat(const double q[4], double out[9]);

// Sigma = R * diag(s^2) * R^T with s = max(exp(log_scale), kMinScale).
void covariance3d(const GaussianSplat& g, double out[9]);

// Unnormalized density exp(-0.5 (x-mu)^T Sigma^{-1} (x-mu)).
double eval_gaussian(const double x[3], const GaussianSplat& g);

// Index of the first-smallest scale axis; its rotated column is the normal.
int minor_axis_index(const double log_scale[3]);

// World-frame unit normal, flipped so it faces view_pos.
void splat_normal(const GaussianSplat& g, const double view_pos[3], double out[3]);

struct ProjectedSplat {
  double mean2d[2] = {0, 0};
  double cov2d[4] = {0, 0, 0, 0};  // row-major 2x2, dilation included
  double depth = 0.0;
  bool culled = false;  // behind the near plane
};

ProjectedSplat project(const GaussianSplat& g, const Camera& cam);

// Stacked trainable parameterization of a K-splat scene. Opacity and albedo
// live as logits, xi/lambda as logs, so every leaf is unconstrained.
struct SceneParams {
  Tensor mu;             // K x 3
  Tensor rot;            // K x 4, normalized on use
  Tensor log_scale;      // K x 3
  Tensor opacity_logit;  // K
  Tensor kd_logit;       // K x 3
  Tensor grad_h;         // K x 2
  Tensor log_xi;         // K
  Tensor log_lambda;     // K
  double background[3] = {0, 0, 0};

  // Identity rotations, unit scales/xi/lambda, logits at 0.
  static SceneParams defaults(int64_t count);
  int64_t count() const { return mu.dim(0); }
};

Scene materialize(const SceneParams& p);
SceneParams to_params(const Scene& s);

// Tape bindings. Leaves when trainable, constants otherwise; quat comes out
// normalized, sigma/kd through sigmoid, xi/lambda through exp.
struct SceneVars {
  Var mu, quat, log_scale, sigma, kd, grad_h, xi, lambda;
};
SceneVars bind_scene(Tape& tape, const SceneParams& p, bool trainable);

// x / sqrt(sum(x^2, last) + 1e-24), rows of shape (..., d).
Var normalize_rows(Var m);

// Row-wise Hamilton product of K x 4 quaternions (w, x, y, z).
Var quat_mul_vars(Var a, Var b);

Var quat_rotmat_vars(Var quat);                 // K x 4 -> K x 3 x 3
Var covariance_vars(Var quat, Var log_scale);   // -> K x 3 x 3

struct ProjVars {
  Var mean2d;  // K x 2
  Var cov2d;   // K x 2 x 2
  Var depth;   // K
  std::vector<char> culled;
};
ProjVars project_vars(Tape& tape, Var mu, Var cov3d, const Camera& cam);

// World-frame splat normals (K x 3); flip toward the camera is decided from
// current values and enters the graph as a constant sign.
Var splat_normals_vars(Tape& tape, Var rotmat, Var log_scale, Var mu, const Camera& cam);

// Map-frame conversion of world normals under a fixed camera.
Var normals_to_map_vars(Tape& tape, Var normals_world, const Camera& cam);

}  // namespace splatnorm
