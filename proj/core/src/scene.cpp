#include "splatnorm/scene.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace splatnorm {
namespace {

constexpr double kLogMinScale = -13.815510557964274;  // ln(1e-6)

double logit(double p) {
  const double c = std::clamp(p, 1e-12, 1.0 - 1e-12);
  return std::log(c / (1.0 - c));
}

}  // namespace

void quat_to_rotmat(const double q[4], double out[9]) {
  const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  if (n < 1e-12) throw std::invalid_argument("quat_to_rotmat: zero quaternion");
  const double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
  out[0] = 1 - 2 * (y * y + z * z);
  out[1] = 2 * (x * y - w * z);
  out[2] = 2 * (x * z + w * y);
  out[3] = 2 * (x * y + w * z);
  out[4] = 1 - 2 * (x * x + z * z);
  out[5] = 2 * (y * z - w * x);
  out[6] = 2 * (x * z - w * y);
  out[7] = 2 * (y * z + w * x);
  out[8] = 1 - 2 * (x * x + y * y);
}

void covariance3d(const GaussianSplat& g, double out[9]) {
  double r[9];
  quat_to_rotmat(g.rot, r);
  double s2[3];
  for (int i = 0; i < 3; ++i) {
    const double s = std::max(std::exp(g.log_scale[i]), kMinScale);
    s2[i] = s * s;
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += r[i * 3 + k] * r[j * 3 + k] * s2[k];
      out[i * 3 + j] = acc;
    }
  }
}

double eval_gaussian(const double x[3], const GaussianSplat& g) {
  double s[9];
  covariance3d(g, s);
  const double a = s[0], b = s[1], c = s[2], d = s[4], e = s[5], f = s[8];
  const double det = a * (d * f - e * e) - b * (b * f - c * e) + c * (b * e - c * d);
  if (det <= 0.0) throw std::runtime_error("eval_gaussian: covariance not positive definite");
  const double i00 = (d * f - e * e) / det;
  const double i01 = (c * e - b * f) / det;
  const double i02 = (b * e - c * d) / det;
  const double i11 = (a * f - c * c) / det;
  const double i12 = (b * c - a * e) / det;
  const double i22 = (a * d - b * b) / det;
  const double dx = x[0] - g.mu[0], dy = x[1] - g.mu[1], dz = x[2] - g.mu[2];
  const double q = dx * (i00 * dx + i01 * dy + i02 * dz) +
                   dy * (i01 * dx + i11 * dy + i12 * dz) +
                   dz * (i02 * dx + i12 * dy + i22 * dz);
  return std::exp(-0.5 * q);
}

int minor_axis_index(const double log_scale[3]) {
  int best = 0;
  for (int i = 1; i < 3; ++i)
    if (log_scale[i] < log_scale[best]) best = i;
  return best;
}

void splat_normal(const GaussianSplat& g, const double view_pos[3], double out[3]) {
  double r[9];
  quat_to_rotmat(g.rot, r);
  const int j = minor_axis_index(g.log_scale);
  double n[3] = {r[0 * 3 + j], r[1 * 3 + j], r[2 * 3 + j]};
  const double to_view[3] = {view_pos[0] - g.mu[0], view_pos[1] - g.mu[1], view_pos[2] - g.mu[2]};
  const double d = n[0] * to_view[0] + n[1] * to_view[1] + n[2] * to_view[2];
  const double sign = d < 0.0 ? -1.0 : 1.0;
  out[0] = sign * n[0];
  out[1] = sign * n[1];
  out[2] = sign * n[2];
}

ProjectedSplat project(const GaussianSplat& g, const Camera& cam) {
  ProjectedSplat p;
  double mu_cam[3];
  cam.world_to_cam(g.mu, mu_cam);
  p.depth = mu_cam[2];
  if (mu_cam[2] <= kNearPlane) {
    p.culled = true;
    return p;
  }
  const double z = mu_cam[2];
  p.mean2d[0] = cam.fx * mu_cam[0] / z + cam.cx;
  p.mean2d[1] = cam.fy * mu_cam[1] / z + cam.cy;

  double sigma[9];
  covariance3d(g, sigma);
  // M = W Sigma W^T in the camera frame.
  double ws[9];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += cam.rotation[i * 3 + k] * sigma[k * 3 + j];
      ws[i * 3 + j] = acc;
    }
  double m[9];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += ws[i * 3 + k] * cam.rotation[j * 3 + k];
      m[i * 3 + j] = acc;
    }

  const double a = cam.fx / z;
  const double b = -cam.fx * mu_cam[0] / (z * z);
  const double c = cam.fy / z;
  const double d = -cam.fy * mu_cam[1] / (z * z);
  p.cov2d[0] = a * a * m[0] + 2 * a * b * m[2] + b * b * m[8] + kCovDilation;
  p.cov2d[1] = a * c * m[1] + a * d * m[2] + b * c * m[5] + b * d * m[8];
  p.cov2d[2] = p.cov2d[1];
  p.cov2d[3] = c * c * m[4] + 2 * c * d * m[5] + d * d * m[8] + kCovDilation;
  return p;
}

SceneParams SceneParams::defaults(int64_t count) {
  SceneParams p;
  p.mu = Tensor::zeros({count, 3});
  p.rot = Tensor::zeros({count, 4});
  for (int64_t k = 0; k < count; ++k) p.rot.unique_data()[k * 4] = 1.0;
  p.log_scale = Tensor::zeros({count, 3});
  p.opacity_logit = Tensor::zeros({count});
  p.kd_logit = Tensor::zeros({count, 3});
  p.grad_h = Tensor::zeros({count, 2});
  p.log_xi = Tensor::zeros({count});
  p.log_lambda = Tensor::zeros({count});
  return p;
}

Scene materialize(const SceneParams& p) {
  const int64_t k = p.count();
  Scene s;
  s.splats.resize(static_cast<size_t>(k));
  for (int i = 0; i < 3; ++i) s.background[i] = p.background[i];
  for (int64_t i = 0; i < k; ++i) {
    GaussianSplat& g = s.splats[static_cast<size_t>(i)];
    for (int j = 0; j < 3; ++j) g.mu[j] = p.mu.at(i * 3 + j);
    double qn = 0.0;
    for (int j = 0; j < 4; ++j) qn += p.rot.at(i * 4 + j) * p.rot.at(i * 4 + j);
    qn = std::sqrt(qn + 1e-24);
    for (int j = 0; j < 4; ++j) g.rot[j] = p.rot.at(i * 4 + j) / qn;
    for (int j = 0; j < 3; ++j) g.log_scale[j] = p.log_scale.at(i * 3 + j);
    g.opacity_logit = p.opacity_logit.at(i);
    for (int j = 0; j < 3; ++j) g.k_d[j] = 1.0 / (1.0 + std::exp(-p.kd_logit.at(i * 3 + j)));
    for (int j = 0; j < 2; ++j) g.grad_h[j] = p.grad_h.at(i * 2 + j);
    g.xi = std::exp(p.log_xi.at(i));
    g.lambda = std::exp(p.log_lambda.at(i));
  }
  return s;
}

SceneParams to_params(const Scene& s) {
  const int64_t k = static_cast<int64_t>(s.splats.size());
  SceneParams p = SceneParams::defaults(k);
  for (int i = 0; i < 3; ++i) p.background[i] = s.background[i];
  for (int64_t i = 0; i < k; ++i) {
    const GaussianSplat& g = s.splats[static_cast<size_t>(i)];
    for (int j = 0; j < 3; ++j) p.mu.unique_data()[i * 3 + j] = g.mu[j];
    for (int j = 0; j < 4; ++j) p.rot.unique_data()[i * 4 + j] = g.rot[j];
    for (int j = 0; j < 3; ++j) p.log_scale.unique_data()[i * 3 + j] = g.log_scale[j];
    p.opacity_logit.unique_data()[i] = g.opacity_logit;
    for (int j = 0; j < 3; ++j) p.kd_logit.unique_data()[i * 3 + j] = logit(g.k_d[j]);
    for (int j = 0; j < 2; ++j) p.grad_h.unique_data()[i * 2 + j] = g.grad_h[j];
    if (g.xi <= 0.0 || g.lambda <= 0.0)
      throw std::invalid_argument("to_params: xi and lambda must be positive");
    p.log_xi.unique_data()[i] = std::log(g.xi);
    p.log_lambda.unique_data()[i] = std::log(g.lambda);
  }
  return p;
}

Var normalize_rows(Var m) {
  Var ss = sum_axis(square(m), -1, /*keepdim=*/true);
  Var inv = pow_const(add_const(ss, 1e-24), -0.5);
  return mul(m, inv);
}

Var quat_mul_vars(Var a, Var b) {
  Var w1 = select(a, 1, 0), x1 = select(a, 1, 1), y1 = select(a, 1, 2), z1 = select(a, 1, 3);
  Var w2 = select(b, 1, 0), x2 = select(b, 1, 1), y2 = select(b, 1, 2), z2 = select(b, 1, 3);
  Var w = sub(sub(sub(mul(w1, w2), mul(x1, x2)), mul(y1, y2)), mul(z1, z2));
  Var x = sub(add(add(mul(w1, x2), mul(x1, w2)), mul(y1, z2)), mul(z1, y2));
  Var y = add(add(sub(mul(w1, y2), mul(x1, z2)), mul(y1, w2)), mul(z1, x2));
  Var z = add(sub(add(mul(w1, z2), mul(x1, y2)), mul(y1, x2)), mul(z1, w2));
  return stack_last({w, x, y, z});
}

SceneVars bind_scene(Tape& tape, const SceneParams& p, bool trainable) {
  auto bind = [&](const Tensor& t) { return trainable ? tape.leaf(t) : tape.constant(t); };
  SceneVars v;
  v.mu = bind(p.mu);
  v.quat = normalize_rows(bind(p.rot));
  Var raw_ls = bind(p.log_scale);
  // Scale floor: max(x, ln(kMinScale)) written with relu so the graph is explicit.
  v.log_scale = add_const(relu(add_const(raw_ls, -kLogMinScale)), kLogMinScale);
  v.sigma = sigmoid(bind(p.opacity_logit));
  v.kd = sigmoid(bind(p.kd_logit));
  v.grad_h = bind(p.grad_h);
  v.xi = exp(bind(p.log_xi));
  v.lambda = exp(bind(p.log_lambda));
  return v;
}

namespace {

struct RotEntries {
  Var r[3][3];
};

RotEntries rot_entries(Var quat) {
  Var w = select(quat, -1, 0);
  Var x = select(quat, -1, 1);
  Var y = select(quat, -1, 2);
  Var z = select(quat, -1, 3);
  Var xx = square(x), yy = square(y), zz = square(z);
  Var wx = mul(w, x), wy = mul(w, y), wz = mul(w, z);
  Var xy = mul(x, y), xz = mul(x, z), yz = mul(y, z);
  RotEntries e;
  e.r[0][0] = add_const(scale(add(yy, zz), -2.0), 1.0);
  e.r[0][1] = scale(sub(xy, wz), 2.0);
  e.r[0][2] = scale(add(xz, wy), 2.0);
  e.r[1][0] = scale(add(xy, wz), 2.0);
  e.r[1][1] = add_const(scale(add(xx, zz), -2.0), 1.0);
  e.r[1][2] = scale(sub(yz, wx), 2.0);
  e.r[2][0] = scale(sub(xz, wy), 2.0);
  e.r[2][1] = scale(add(yz, wx), 2.0);
  e.r[2][2] = add_const(scale(add(xx, yy), -2.0), 1.0);
  return e;
}

}  // namespace

Var quat_rotmat_vars(Var quat) {
  const int64_t k = quat.value().dim(0);
  RotEntries e = rot_entries(quat);
  std::vector<Var> flat;
  flat.reserve(9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) flat.push_back(e.r[i][j]);
  return reshape(stack_last(flat), {k, 3, 3});
}

Var covariance_vars(Var quat, Var log_scale) {
  const int64_t k = quat.value().dim(0);
  RotEntries e = rot_entries(quat);
  Var s2 = exp(scale(log_scale, 2.0));  // K x 3
  Var s2c[3] = {select(s2, -1, 0), select(s2, -1, 1), select(s2, -1, 2)};
  Var entry[3][3];
  for (int i = 0; i < 3; ++i) {
    for (int j = i; j < 3; ++j) {
      Var acc = mul(mul(e.r[i][0], e.r[j][0]), s2c[0]);
      acc = add(acc, mul(mul(e.r[i][1], e.r[j][1]), s2c[1]));
      acc = add(acc, mul(mul(e.r[i][2], e.r[j][2]), s2c[2]));
      entry[i][j] = acc;
      entry[j][i] = acc;
    }
  }
  std::vector<Var> flat;
  flat.reserve(9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) flat.push_back(entry[i][j]);
  return reshape(stack_last(flat), {k, 3, 3});
}

ProjVars project_vars(Tape& tape, Var mu, Var cov3d, const Camera& cam) {
  const Tensor& mu_val = mu.value();
  const int64_t k = mu_val.dim(0);

  Tensor wt = Tensor::zeros({3, 3});  // W^T so mu_cam = mu * W^T
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) wt.unique_data()[j * 3 + i] = cam.rotation[i * 3 + j];
  Tensor tr = Tensor::zeros({3});
  for (int i = 0; i < 3; ++i) tr.unique_data()[i] = cam.translation[i];

  Var mu_cam = add(matmul(mu, tape.constant(wt)), tape.constant(tr));

  Var x = select(mu_cam, -1, 0);
  Var y = select(mu_cam, -1, 1);
  Var z = select(mu_cam, -1, 2);

  ProjVars out;
  out.culled.assign(static_cast<size_t>(k), 0);
  const Tensor& z_val = z.value();
  Tensor mask = Tensor::zeros({k});
  Tensor fill = Tensor::zeros({k});
  for (int64_t i = 0; i < k; ++i) {
    const bool cull = z_val.at(i) <= kNearPlane;
    out.culled[static_cast<size_t>(i)] = cull ? 1 : 0;
    mask.unique_data()[i] = cull ? 0.0 : 1.0;
    fill.unique_data()[i] = cull ? 1.0 : 0.0;
  }
  // Culled splats get z replaced by 1 so the graph stays finite; their
  // gradients are cut by the mask and the rasterizer skips them.
  Var z_safe = add(mul(z, tape.constant(mask)), tape.constant(fill));
  Var inv_z = pow_const(z_safe, -1.0);

  Var u = add_const(scale(mul(x, inv_z), cam.fx), cam.cx);
  Var v = add_const(scale(mul(y, inv_z), cam.fy), cam.cy);
  out.mean2d = stack_last({u, v});
  out.depth = z;

  // M = W Sigma W^T, computed on 9-vectors with a constant 9x9 operator.
  Tensor q9 = Tensor::zeros({9, 9});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int kk = 0; kk < 3; ++kk)
        for (int l = 0; l < 3; ++l)
          q9.unique_data()[(kk * 3 + l) * 9 + (i * 3 + j)] =
              cam.rotation[i * 3 + kk] * cam.rotation[j * 3 + l];
  Var m9 = matmul(reshape(cov3d, {k, 9}), tape.constant(q9));
  Var m00 = select(m9, -1, 0);
  Var m01 = select(m9, -1, 1);
  Var m02 = select(m9, -1, 2);
  Var m11 = select(m9, -1, 4);
  Var m12 = select(m9, -1, 5);
  Var m22 = select(m9, -1, 8);

  Var a = scale(inv_z, cam.fx);
  Var b = neg(mul(mul(a, x), inv_z));
  Var c = scale(inv_z, cam.fy);
  Var d = neg(mul(mul(c, y), inv_z));

  Var c00 = add_const(
      add(add(mul(square(a), m00), scale(mul(mul(a, b), m02), 2.0)), mul(square(b), m22)),
      kCovDilation);
  Var c01 = add(add(mul(mul(a, c), m01), mul(mul(a, d), m02)),
                add(mul(mul(b, c), m12), mul(mul(b, d), m22)));
  Var c11 = add_const(
      add(add(mul(square(c), m11), scale(mul(mul(c, d), m12), 2.0)), mul(square(d), m22)),
      kCovDilation);
  out.cov2d = reshape(stack_last({c00, c01, c01, c11}), {k, 2, 2});
  return out;
}

Var splat_normals_vars(Tape& tape, Var rotmat, Var log_scale, Var mu, const Camera& cam) {
  const Tensor& ls = log_scale.value();
  const Tensor& rm = rotmat.value();
  const Tensor& mu_val = mu.value();
  const int64_t k = ls.dim(0);

  double cam_pos[3];
  cam.position(cam_pos);

  Tensor onehot = Tensor::zeros({k, 1, 3});
  Tensor sign = Tensor::zeros({k, 1});
  for (int64_t i = 0; i < k; ++i) {
    const double lsr[3] = {ls.at(i * 3), ls.at(i * 3 + 1), ls.at(i * 3 + 2)};
    const int axis = minor_axis_index(lsr);
    onehot.unique_data()[i * 3 + axis] = 1.0;
    double dot = 0.0;
    for (int r = 0; r < 3; ++r)
      dot += rm.at(i * 9 + r * 3 + axis) * (cam_pos[r] - mu_val.at(i * 3 + r));
    sign.unique_data()[i] = dot < 0.0 ? -1.0 : 1.0;
  }
  // Column pick as a reduction so the graph needs no per-row gather.
  Var col = sum_axis(mul(rotmat, tape.constant(onehot)), -1, /*keepdim=*/false);  // K x 3
  return mul(col, tape.constant(sign));
}

Var normals_to_map_vars(Tape& tape, Var normals_world, const Camera& cam) {
  // Map frame = diag(1,-1,-1) * camera frame; fold into one constant matrix.
  Tensor mt = Tensor::zeros({3, 3});  // (F W)^T
  for (int i = 0; i < 3; ++i) {
    const double f = i == 0 ? 1.0 : -1.0;
    for (int j = 0; j < 3; ++j) mt.unique_data()[j * 3 + i] = f * cam.rotation[i * 3 + j];
  }
  return matmul(normals_world, tape.constant(mt));
}

}  // namespace splatnorm
