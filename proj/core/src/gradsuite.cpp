#include <cmath>

#include "splatnorm/camera.hpp"
#include "splatnorm/diffusion.hpp"
#include "splatnorm/geo_features.hpp"
#include "splatnorm/gradcheck.hpp"
#include "splatnorm/light.hpp"
#include "splatnorm/losses.hpp"
#include "splatnorm/nn.hpp"
#include "splatnorm/rasterizer.hpp"
#include "splatnorm/rng.hpp"
#include "splatnorm/scene.hpp"

namespace splatnorm {

namespace {

Tensor uniform_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  double* p = t.unique_data();
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) p[i] = rng.uniform(lo, hi);
  return t;
}

// Random constant projection to a scalar; spreads coverage over every output
// coordinate instead of probing only the sum direction.
Var wsum(Tape& tape, Var v, uint64_t salt) {
  Rng rng(salt);
  Tensor w = uniform_tensor(rng, v.value().shape(), -1.0, 1.0);
  return sum_all(mul(v, tape.constant(std::move(w))));
}

// Shared scene leaf layout for the geometry checks: mu, rot, log_scale,
// opacity, kd logits, grad_h, xi/lambda pre-activations.
std::vector<Tensor> scene_leaves(Rng& rng, int64_t k) {
  std::vector<Tensor> in;
  Tensor mu = uniform_tensor(rng, {k, 3}, -0.4, 0.4);
  for (int64_t j = 0; j < k; ++j) mu.unique_data()[j * 3 + 2] = rng.uniform(2.6, 3.4);
  in.push_back(mu);
  in.push_back(uniform_tensor(rng, {k, 4}, -0.8, 0.8));
  in.push_back(uniform_tensor(rng, {k, 3}, -1.8, -0.6));
  in.push_back(uniform_tensor(rng, {k}, -0.8, 0.8));
  in.push_back(uniform_tensor(rng, {k, 3}, -0.7, 0.7));
  in.push_back(uniform_tensor(rng, {k, 2}, -0.5, 0.5));
  in.push_back(uniform_tensor(rng, {k}, -0.4, 0.4));
  in.push_back(uniform_tensor(rng, {k}, -0.4, 0.4));
  return in;
}

SceneVars scene_vars_from_leaves(const std::vector<Var>& l) {
  SceneVars sv;
  sv.mu = l[0];
  sv.quat = normalize_rows(l[1]);
  sv.log_scale = l[2];
  sv.sigma = sigmoid(l[3]);
  sv.kd = sigmoid(l[4]);
  sv.grad_h = l[5];
  sv.xi = exp(l[6]);
  sv.lambda = exp(l[7]);
  return sv;
}

LightField suite_light() {
  const double dir[3] = {0.3, 0.45, -0.84};
  const double rad[3] = {1.0, 0.9, 1.1};
  double n = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
  double unit[3] = {dir[0] / n, dir[1] / n, dir[2] / n};
  return LightField::directional(unit, rad);
}

struct NamedBuilder {
  const char* name;
  double tolerance;
  GradCheckResult (*run)(uint64_t seed);
};

GradCheckResult run_elementwise(uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> in{uniform_tensor(rng, {3, 4}, -1.2, 1.2),
                         uniform_tensor(rng, {4}, -1.0, 1.0),
                         uniform_tensor(rng, {1}, -0.8, 0.8)};
  return finite_diff_check(
      [](Tape& t, const std::vector<Var>& l) {
        Var y = mul(tanh(l[0]), sigmoid(l[1]));
        y = add(y, exp(scale(l[0], 0.3)));
        y = div(y, add_const(square(l[2]), 1.5));
        y = add(y, log(add_const(square(l[0]), 0.7)));
        y = add(y, sqrt(add_const(square(l[1]), 0.2)));
        y = add(y, mul(sin(l[0]), cos(scale(l[1], 1.7))));
        y = add(y, pow_const(add_const(sigmoid(l[0]), 0.5), 1.7));
        return add(mean_all(y), wsum(t, y, 11));
      },
      in);
}

GradCheckResult run_structural(uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> in{uniform_tensor(rng, {4, 6}, -1.0, 1.0),
                         uniform_tensor(rng, {4, 6}, -1.0, 1.0)};
  return finite_diff_check(
      [](Tape& t, const std::vector<Var>& l) {
        Var c = concat({l[0], l[1]}, 0);                    // [8,6]
        Var s = slice(c, 1, 1, 4);                          // [8,4]
        Var g = gather_rows(s, {7, 0, 3, 3, 5});            // [5,4]
        Var st = stack_last({select(g, 1, 0), select(g, 1, 2)});  // [5,2]
        Var tr = transpose2d(reshape(c, {12, 4}));          // [4,12]
        // [4,1] + [1,12]: two-sided broadcast so the stride-0 scatter is covered
        Var red = add(reshape(sum_axis(tr, -1), {4, 1}), mean_axis(tr, 0, true));
        Var mm = add(min_axis(l[0], 1), max_axis(transpose2d(l[1]), 0));
        return add(add(wsum(t, st, 21), wsum(t, red, 22)), wsum(t, mm, 23));
      },
      in);
}

GradCheckResult run_matmul(uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> in{uniform_tensor(rng, {3, 5}, -1.0, 1.0),
                         uniform_tensor(rng, {5, 4}, -1.0, 1.0)};
  return finite_diff_check(
      [](Tape& t, const std::vector<Var>& l) {
        Var y = matmul(tanh(l[0]), l[1]);
        return wsum(t, matmul(y, transpose2d(y)), 31);
      },
      in);
}

GradCheckResult run_conv_pool(uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> in{uniform_tensor(rng, {2, 8, 8}, -1.0, 1.0),
                         uniform_tensor(rng, {3, 2, 3, 3}, -0.6, 0.6),
                         uniform_tensor(rng, {2, 3, 3, 3}, -0.6, 0.6)};
  GradCheckOptions opt;
  opt.max_coords_per_input = 32;
  return finite_diff_check(
      [](Tape& t, const std::vector<Var>& l) {
        Var y = relu(conv2d(l[0], l[1], Pad::kSame, 1));         // [3,8,8]
        Var z = conv2d(y, l[2], Pad::kValid, 2);                 // [2,3,3]
        Var u = upsample_nearest2(tanh(z));                      // [2,6,6]
        Var pa = pool2d(u, PoolKind::kAvg, 2);
        Var pm = pool2d(y, PoolKind::kMax, 4);
        Var gp = pool2d(y, PoolKind::kAvg, 0);
        return add(add(wsum(t, pa, 41), wsum(t, pm, 42)), wsum(t, gp, 43));
      },
      in, opt);
}

GradCheckResult run_row_normalization(uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> in{uniform_tensor(rng, {5, 4}, 0.3, 1.2),
                         uniform_tensor(rng, {5, 4}, -1.2, -0.3),
                         uniform_tensor(rng, {4, 4, 3}, 0.2, 1.0)};
  return finite_diff_check(
      [](Tape& t, const std::vector<Var>& l) {
        Var q = quat_mul_vars(normalize_rows(l[0]), normalize_rows(l[1]));
        Var r = quat_rotmat_vars(normalize_rows(l[0]));
        Var n = normalize_pixels_hwc(l[2]);
        return add(add(wsum(t, q, 51), wsum(t, r, 52)), wsum(t, n, 53));
      },
      in);
}

// Density exp(-0.5 d^T Sigma^{-1} d) with the inverse assembled on the tape
// from the factored form R diag(exp(-2 ls)) R^T.
GradCheckResult run_gaussian_density(uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> in{uniform_tensor(rng, {3, 3}, -0.4, 0.4),   // mu
                         uniform_tensor(rng, {3, 4}, -0.8, 0.8),   // rot
                         uniform_tensor(rng, {3, 3}, -1.2, 0.2),   // log_scale
                         uniform_tensor(rng, {3, 3}, -0.9, 0.9)};  // probe points
  return finite_diff_check(
      [](Tape& t, const std::vector<Var>& l) {
        Var rot = quat_rotmat_vars(normalize_rows(l[1]));            // [K,3,3]
        Var d = sub(l[3], l[0]);                                     // [K,3]
        Var local = sum_axis(mul(rot, reshape(d, {3, 3, 1})), 1);    // R^T d
        Var q = sum_axis(mul(square(local), exp(scale(l[2], -2.0))), -1);
        return wsum(t, exp(scale(q, -0.5)), 55);
      },
      in);
}

GradCheckResult run_scene_projection(uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> in = scene_leaves(rng, 4);
  return finite_diff_check(
      [](Tape& t, const std::vector<Var>& l) {
        SceneVars sv = scene_vars_from_leaves(l);
        const Camera cam = Camera::canonical(16, 16);
        Var cov3d = covariance_vars(sv.quat, sv.log_scale);
        ProjVars proj = project_vars(t, sv.mu, cov3d, cam);
        return add(add(wsum(t, proj.mean2d, 61), wsum(t, proj.cov2d, 62)),
                   wsum(t, proj.depth, 63));
      },
      in);
}

GradCheckResult run_splat_shading(uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> in = scene_leaves(rng, 4);
  in.push_back(uniform_tensor(rng, {4, 3}, 0.0, 0.5));  // contribution target
  return finite_diff_check(
      [](Tape& t, const std::vector<Var>& l) {
        SceneVars sv = scene_vars_from_leaves(l);
        const Camera cam = Camera::canonical(16, 16);
        Var rotmat = quat_rotmat_vars(sv.quat);
        Var n_world = splat_normals_vars(t, rotmat, sv.log_scale, sv.mu, cam);
        ShadeVars sh = shade_vars(t, sv, n_world, suite_light());
        Var e = energy_loss_vars(sh.color, l[8]);
        return add(add(wsum(t, sh.color, 71), wsum(t, sh.irradiance, 72)), e);
      },
      in);
}

GradCheckResult run_rasterize(uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> in = scene_leaves(rng, 4);
  GradCheckOptions opt;
  opt.max_coords_per_input = 16;
  return finite_diff_check(
      [](Tape& t, const std::vector<Var>& l) {
        SceneVars sv = scene_vars_from_leaves(l);
        const Camera cam = Camera::canonical(12, 12);
        const double bg[3] = {0.05, 0.1, 0.15};
        RenderOptions ro;
        ro.tile_size = 8;
        Var cov3d = covariance_vars(sv.quat, sv.log_scale);
        ProjVars proj = project_vars(t, sv.mu, cov3d, cam);
        Var rotmat = quat_rotmat_vars(sv.quat);
        Var n_world = splat_normals_vars(t, rotmat, sv.log_scale, sv.mu, cam);
        ShadeVars sh = shade_vars(t, sv, n_world, suite_light());
        Var n_map = normals_to_map_vars(t, n_world, cam);
        RenderVars r = rasterize_vars(t, proj.mean2d, proj.cov2d, proj.depth, sv.sigma, sh.color,
                                      n_map, proj.culled, cam.width, cam.height, bg, ro);
        Var y = add(wsum(t, r.rgb, 81), wsum(t, r.alpha, 82));
        y = add(y, wsum(t, r.normal, 83));
        y = add(y, wsum(t, r.depth, 84));
        return add(y, wsum(t, r.contribution, 85));
      },
      in, opt);
}

GradCheckResult run_losses(uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> in{uniform_tensor(rng, {12, 12, 3}, 0.1, 0.9),
                         uniform_tensor(rng, {12, 12, 3}, 0.1, 0.9),
                         uniform_tensor(rng, {12, 12}, -1.0, 1.0),
                         uniform_tensor(rng, {3, 3}, -1.6, -0.4)};
  GradCheckOptions opt;
  opt.max_coords_per_input = 32;
  return finite_diff_check(
      [](Tape& t, const std::vector<Var>& l) {
        Var target_rgb = t.constant(Tensor::full({12, 12, 3}, 0.4));
        Var target_alpha = t.constant(Tensor::full({12, 12}, 0.6));
        ReprojectionWeights w;
        Var y = reprojection_loss(l[0], sigmoid(l[2]), l[3], target_rgb, target_alpha, w);
        y = add(y, ssim(l[0], l[1]));
        return add(y, mse_loss(l[1], target_rgb));
      },
      in, opt);
}

GradCheckResult run_score_fusion_gate(uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> in{uniform_tensor(rng, {8, 8, 3}, -0.9, 0.9),
                         uniform_tensor(rng, {kFeatureChannels, 2, 2}, -0.8, 0.8),
                         uniform_tensor(rng, {kFeatureChannels, 2, 2}, -0.8, 0.8),
                         uniform_tensor(rng, {8, 8}, -1.0, 1.0)};
  GradCheckOptions opt;
  opt.max_coords_per_input = 16;
  return finite_diff_check(
      [](Tape& t, const std::vector<Var>& l) {
        Rng net_rng(977);
        ScoreNet score = ScoreNet::init(net_rng);
        FusionNet fusion = FusionNet::init(net_rng);
        GateNet gate = GateNet::init(net_rng);
        Binder frz(t, /*train=*/false);
        Var cond = forward(frz, fusion, l[1], l[2]);
        Var eps_hat = forward(frz, score, l[0], 7, cond);
        Var n_a = normalize_pixels_hwc(add(l[0], t.constant(Tensor::full({8, 8, 3}, 0.4))));
        Tensor up = Tensor::zeros({8, 8, 3});
        for (int64_t i = 0; i < 64; ++i) up.unique_data()[i * 3 + 2] = 1.0;
        Var n_b = t.constant(up);
        Var g = forward(frz, gate, n_a, n_b, sigmoid(l[3]));
        Var fused = gated_fuse_vars(n_a, n_b, g);
        return add(add(wsum(t, eps_hat, 91), wsum(t, fused, 92)), wsum(t, g, 93));
      },
      in, opt);
}

GradCheckResult run_diffusion_linear(uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> in{uniform_tensor(rng, {6, 6, 3}, -1.0, 1.0),
                         uniform_tensor(rng, {6, 6, 3}, -1.0, 1.0)};
  return finite_diff_check(
      [](Tape& t, const std::vector<Var>& l) {
        const NoiseSchedule ns = NoiseSchedule::cosine(40);
        Var x_t = forward_noise_vars(ns, l[0], 17, l[1]);
        Var x0 = predict_x0_vars(ns, x_t, 17, scale(l[1], 0.9));
        return add(wsum(t, x_t, 101), wsum(t, x0, 102));
      },
      in);
}

constexpr NamedBuilder kChecks[] = {
    {"elementwise_chain", 1e-6, run_elementwise},
    {"structural_ops", 1e-6, run_structural},
    {"matmul", 1e-6, run_matmul},
    {"conv_pool_upsample", 1e-6, run_conv_pool},
    {"row_normalization", 1e-6, run_row_normalization},
    {"gaussian_density", 1e-6, run_gaussian_density},
    {"scene_projection", 1e-5, run_scene_projection},
    {"splat_shading", 1e-5, run_splat_shading},
    {"rasterize_full", 1e-4, run_rasterize},
    {"losses_ssim", 1e-5, run_losses},
    {"score_fusion_gate", 1e-5, run_score_fusion_gate},
    {"diffusion_linear", 1e-6, run_diffusion_linear},
};

}  // namespace

std::vector<SuiteCheck> run_gradient_suite(uint64_t seed, int seeds_per_check) {
  std::vector<SuiteCheck> out;
  for (const NamedBuilder& nb : kChecks) {
    SuiteCheck sc;
    sc.name = nb.name;
    sc.tolerance = nb.tolerance;
    for (int i = 0; i < seeds_per_check; ++i) {
      const uint64_t s = Rng(seed).fork(static_cast<uint64_t>(i) + 1).next_u64();
      const GradCheckResult r = nb.run(s);
      sc.max_rel_error = std::max(sc.max_rel_error, r.max_rel_error);
      sc.skipped += r.skipped_kinks;
    }
    sc.passed = sc.max_rel_error <= sc.tolerance;
    out.push_back(std::move(sc));
  }
  return out;
}

}  // namespace splatnorm
