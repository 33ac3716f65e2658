#include "splatnorm/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace splatnorm {
namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimStd = 1.5;

Tensor ssim_kernel() {
  Tensor k = Tensor::zeros({1, 1, kSsimWindow, kSsimWindow});
  double* p = k.unique_data();
  const int c = kSsimWindow / 2;
  double total = 0.0;
  for (int y = 0; y < kSsimWindow; ++y) {
    for (int x = 0; x < kSsimWindow; ++x) {
      const double dy = y - c, dx = x - c;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * kSsimStd * kSsimStd));
      p[y * kSsimWindow + x] = v;
      total += v;
    }
  }
  for (int i = 0; i < kSsimWindow * kSsimWindow; ++i) p[i] /= total;
  return k;
}

Var channel_plane(Var img, int c) {
  const Shape& s = img.value().shape();
  return reshape(select(img, -1, c), {1, s[0], s[1]});
}

}  // namespace

Var mse_loss(Var a, Var b) { return mean_all(square(sub(a, b))); }

Var mae_loss(Var a, Var b) { return mean_all(abs(sub(a, b))); }

Var scale_loss(Var log_scale) {
  if (log_scale.value().rank() != 2 || log_scale.value().dim(1) != 3)
    throw std::invalid_argument("scale_loss: expected K x 3 log scales");
  return mean_all(exp(min_axis(log_scale, -1, false)));
}

Var contour_loss(Var alpha_pred, Var alpha_target) {
  if (!shapes_equal(alpha_pred.value().shape(), alpha_target.value().shape()))
    throw std::invalid_argument("contour_loss: shape mismatch");
  return mean_all(abs(sub(alpha_pred, alpha_target)));
}

Var ssim(Var a, Var b) {
  const Shape& sa = a.value().shape();
  if (sa.size() != 3 || sa[2] != 3 || !shapes_equal(sa, b.value().shape()))
    throw std::invalid_argument("ssim: expected matching H x W x 3 images");
  if (sa[0] < kSsimWindow || sa[1] < kSsimWindow)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");

  Tape& tape = *a.tape();
  Var kernel = tape.constant(ssim_kernel());

  Var acc;
  for (int c = 0; c < 3; ++c) {
    Var x = channel_plane(a, c);
    Var y = channel_plane(b, c);
    Var mu_x = conv2d(x, kernel, Pad::kValid);
    Var mu_y = conv2d(y, kernel, Pad::kValid);
    Var mu_xx = square(mu_x);
    Var mu_yy = square(mu_y);
    Var mu_xy = mul(mu_x, mu_y);
    Var var_x = sub(conv2d(square(x), kernel, Pad::kValid), mu_xx);
    Var var_y = sub(conv2d(square(y), kernel, Pad::kValid), mu_yy);
    Var cov_xy = sub(conv2d(mul(x, y), kernel, Pad::kValid), mu_xy);

    Var num = mul(add_const(scale(mu_xy, 2.0), kSsimC1), add_const(scale(cov_xy, 2.0), kSsimC2));
    Var den = mul(add_const(add(mu_xx, mu_yy), kSsimC1), add_const(add(var_x, var_y), kSsimC2));
    Var channel = mean_all(div(num, den));
    acc = c == 0 ? channel : add(acc, channel);
  }
  return scale(acc, 1.0 / 3.0);
}

Var reprojection_loss(Var rendered_rgb, Var rendered_alpha, Var log_scale,
                      Var target_rgb, Var target_alpha, const ReprojectionWeights& w) {
  Var term = scale(scale_loss(log_scale), w.scale);
  term = add(term, scale(contour_loss(rendered_alpha, target_alpha), w.contour));
  Var s = ssim(rendered_rgb, target_rgb);
  term = add(term, scale(add_const(neg(s), 1.0), w.ssim));
  return term;
}

}  // namespace splatnorm
