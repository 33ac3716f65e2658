#pragma once

#include "splatnorm/tape.hpp"
#include "splatnorm/tensor.hpp"

namespace splatnorm {

// SSIM stabilizers for unit-range images (pinned, not derived from a dynamic
// range parameter).
inline constexpr double kSsimC1 = 1e-4;
inline constexpr double kSsimC2 = 9e-4;

Var mse_loss(Var a, Var b);
Var mae_loss(Var a, Var b);

// Mean over splats of the smallest per-splat scale exp(min log_scale);
// gradient follows the first minimizing axis.
Var scale_loss(Var log_scale);

// MAE between coverage maps (H x W).
Var contour_loss(Var alpha_pred, Var alpha_target);

// Mean SSIM between H x W x 3 images: 11x11 Gaussian window (std 1.5),
// valid windows only, channels averaged. Requires H, W >= 11.
Var ssim(Var a, Var b);

struct ReprojectionWeights {
  double scale = 0.01;
  double contour = 1.0;
  double ssim = 1.0;
};

// w_scale * scale_loss + w_contour * contour + w_ssim * (1 - ssim).
Var reprojection_loss(Var rendered_rgb, Var rendered_alpha, Var log_scale,
                      Var target_rgb, Var target_alpha, const ReprojectionWeights& w);

}  // namespace splatnorm
