#pragma once

#include <functional>
#include <string>
#include <vector>

#include "splatnorm/camera.hpp"
#include "splatnorm/nn.hpp"
#include "splatnorm/scene.hpp"
#include "splatnorm/tape.hpp"
#include "splatnorm/tensor.hpp"

namespace splatnorm {

inline constexpr int kSplatFeatureDim = 18;  // mu3 quat4 ls3 op1 kd3 gh2 xi1 lam1
inline constexpr int kFeatureChannels = 32;

// Image-conditioned splat regressor: three stride-2 conv+relu stages
// (3->16->32->64), global average pool, then a five-layer FC head whose
// hidden layers carry batch norm. One K x 18 parameter block per image.
struct EncoderNet {
  Conv2dLayer conv1, conv2, conv3;
  LinearLayer fc1, fc2, fc3, fc4, fc5;
  BatchNorm1d bn1, bn2, bn3, bn4;
  int splat_count = 0;

  static EncoderNet init(Rng& rng, int splat_count);
};

// images are [H,W,3] in [0,1]; result is [B, K*18].
Var forward(Binder& bind, EncoderNet& net, const std::vector<Tensor>& images, bool training);

// Head activations -> constrained scene parameterization:
//   mu        = (0,0,3) + tanh(raw)
//   quat      = normalize(raw + (1,0,0,0))
//   log_scale = 3*tanh(raw) - 2.5   (always above the ln(1e-6) floor)
//   sigma, kd = sigmoid(raw)
//   grad_h    = 2*tanh(raw)
//   xi,lambda = exp(2*tanh(raw))
SceneVars head_to_scene(Tape& tape, Var k18);  // [K,18]

// Value-side twin of head_to_scene: unconstrained SceneParams that
// materialize/bind to exactly the same constrained values.
SceneParams scene_params_from_head(const Tensor& k18, const double background[3]);

// Splat parameters averaged onto an H/4 x W/4 grid under Gaussian footprint
// weights (2D Mahalanobis, cutoff 1e-4, per-cell normalization by total
// weight + 1e-12). Weights come from current values and enter the graph as a
// constant matrix; the parameters flow through it.
Var splat_param_grid(Tape& tape, const SceneVars& sv, const ProjVars& proj, const Camera& cam);

// Three-level pyramid over the parameter grid (H/4, H/8, H/16), each level
// mapped to kFeatureChannels by a 1x1 lateral conv.
struct FpnNet {
  Conv2dLayer down1, down2;      // stride-2 3x3, 18->32->32, relu
  Conv2dLayer lat1, lat2, lat3;  // 1x1 laterals

  static FpnNet init(Rng& rng);
};

struct FeaturePyramid {
  Var f1, f2, f3;
};

FeaturePyramid forward(Binder& bind, FpnNet& net, Var grid);

void visit_params(EncoderNet& net, const ParamVisitor& fn);
void visit_params(FpnNet& net, const ParamVisitor& fn);

// ---- analytic surface normals from splat statistics ----

// The m nearest splats to p by Mahalanobis distance under each splat's own
// covariance, with softmin weights w_j ~ exp(-d_j^2/2) normalized to sum 1
// (distances are shifted by their minimum before exponentiating).
std::vector<std::pair<int, double>> mahalanobis_weights(const Scene& scene, const double p[3],
                                                        int m);

// Smallest-eigenvector normal of the weighted covariance of neighbor means,
// flipped toward view_pos. False when the neighborhood is degenerate.
bool pca_normal(const Scene& scene, const double p[3], const double view_pos[3], int m,
                double out[3]);

// Per-pixel PCA normals evaluated at the back-projected point of the
// alpha-weighted mean depth. Pixels at or below alpha_threshold give zero.
// Output is map-frame, H x W x 3.
Tensor pca_normal_map(const Scene& scene, const Camera& cam, const Tensor& alpha,
                      const Tensor& depth, int m = 8, double alpha_threshold = 0.5);

}  // namespace splatnorm
