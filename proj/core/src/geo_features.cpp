#include "splatnorm/geo_features.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "splatnorm/eig3.hpp"

namespace splatnorm {

namespace {
constexpr int kHeadHidden = 256;
constexpr double kGridCutoff = 1e-4;
}  // namespace

EncoderNet EncoderNet::init(Rng& rng, int splat_count) {
  if (splat_count < 1) throw std::invalid_argument("EncoderNet: splat_count must be >= 1");
  EncoderNet net;
  net.splat_count = splat_count;
  net.conv1 = make_conv2d(rng, 3, 16, 3, /*stride=*/2);
  net.conv2 = make_conv2d(rng, 16, 32, 3, /*stride=*/2);
  net.conv3 = make_conv2d(rng, 32, 64, 3, /*stride=*/2);
  net.fc1 = make_linear(rng, 64, kHeadHidden);
  net.fc2 = make_linear(rng, kHeadHidden, kHeadHidden);
  net.fc3 = make_linear(rng, kHeadHidden, kHeadHidden);
  net.fc4 = make_linear(rng, kHeadHidden, kHeadHidden);
  net.fc5 = make_linear(rng, kHeadHidden, splat_count * kSplatFeatureDim);
  net.bn1 = make_batchnorm(kHeadHidden);
  net.bn2 = make_batchnorm(kHeadHidden);
  net.bn3 = make_batchnorm(kHeadHidden);
  net.bn4 = make_batchnorm(kHeadHidden);
  return net;
}

Var forward(Binder& bind, EncoderNet& net, const std::vector<Tensor>& images, bool training) {
  if (images.empty()) throw std::invalid_argument("EncoderNet: empty batch");
  Tape& t = *bind.tape;
  std::vector<Var> feats;
  feats.reserve(images.size());
  for (const Tensor& img : images) {
    if (img.rank() != 3 || img.dim(2) != 3)
      throw std::invalid_argument("EncoderNet: images must be [H,W,3]");
    Var x = chw_from_hwc(t.constant(img));
    x = relu(forward(bind, net.conv1, x));
    x = relu(forward(bind, net.conv2, x));
    x = relu(forward(bind, net.conv3, x));
    x = pool2d(x, PoolKind::kAvg, 0);  // [64,1,1]
    feats.push_back(reshape(x, {1, 64}));
  }
  Var h = feats.size() == 1 ? feats[0] : concat(feats, 0);  // [B,64]
  h = relu(forward(bind, net.bn1, forward(bind, net.fc1, h), training));
  h = relu(forward(bind, net.bn2, forward(bind, net.fc2, h), training));
  h = relu(forward(bind, net.bn3, forward(bind, net.fc3, h), training));
  h = relu(forward(bind, net.bn4, forward(bind, net.fc4, h), training));
  return forward(bind, net.fc5, h);  // [B, K*18]
}

SceneVars head_to_scene(Tape& tape, Var k18) {
  const Shape& s = k18.value().shape();
  if (s.size() != 2 || s[1] != kSplatFeatureDim)
    throw std::invalid_argument("head_to_scene: wants [K,18], got " + shape_str(s));
  SceneVars v;
  v.mu = add(tanh(slice(k18, 1, 0, 3)), tape.constant(Tensor({3}, {0.0, 0.0, 3.0})));
  v.quat = normalize_rows(
      add(slice(k18, 1, 3, 4), tape.constant(Tensor({4}, {1.0, 0.0, 0.0, 0.0}))));
  v.log_scale = add_const(scale(tanh(slice(k18, 1, 7, 3)), 3.0), -2.5);
  v.sigma = sigmoid(select(k18, 1, 10));
  v.kd = sigmoid(slice(k18, 1, 11, 3));
  v.grad_h = scale(tanh(slice(k18, 1, 14, 2)), 2.0);
  v.xi = exp(scale(tanh(select(k18, 1, 16)), 2.0));
  v.lambda = exp(scale(tanh(select(k18, 1, 17)), 2.0));
  return v;
}

SceneParams scene_params_from_head(const Tensor& k18, const double background[3]) {
  const Shape& s = k18.shape();
  if (s.size() != 2 || s[1] != kSplatFeatureDim)
    throw std::invalid_argument("scene_params_from_head: wants [K,18]");
  const int64_t k = s[0];
  SceneParams p = SceneParams::defaults(k);
  for (int j = 0; j < 3; ++j) p.background[j] = background[j];
  const double* r = k18.data();
  double* mu = p.mu.unique_data();
  double* rot = p.rot.unique_data();
  double* ls = p.log_scale.unique_data();
  double* op = p.opacity_logit.unique_data();
  double* kd = p.kd_logit.unique_data();
  double* gh = p.grad_h.unique_data();
  double* xi = p.log_xi.unique_data();
  double* lam = p.log_lambda.unique_data();
  for (int64_t i = 0; i < k; ++i) {
    const double* row = r + i * kSplatFeatureDim;
    mu[i * 3 + 0] = std::tanh(row[0]);
    mu[i * 3 + 1] = std::tanh(row[1]);
    mu[i * 3 + 2] = 3.0 + std::tanh(row[2]);
    rot[i * 4 + 0] = row[3] + 1.0;
    for (int j = 1; j < 4; ++j) rot[i * 4 + j] = row[3 + j];
    for (int j = 0; j < 3; ++j) ls[i * 3 + j] = 3.0 * std::tanh(row[7 + j]) - 2.5;
    op[i] = row[10];
    for (int j = 0; j < 3; ++j) kd[i * 3 + j] = row[11 + j];
    for (int j = 0; j < 2; ++j) gh[i * 2 + j] = 2.0 * std::tanh(row[14 + j]);
    xi[i] = 2.0 * std::tanh(row[16]);
    lam[i] = 2.0 * std::tanh(row[17]);
  }
  return p;
}

Var splat_param_grid(Tape& tape, const SceneVars& sv, const ProjVars& proj, const Camera& cam) {
  const int64_t k = sv.mu.value().dim(0);
  if (cam.width % 4 != 0 || cam.height % 4 != 0)
    throw std::invalid_argument("splat_param_grid: image extents must be multiples of 4");
  const int64_t gw = cam.width / 4, gh = cam.height / 4;
  const int64_t cells = gh * gw;

  Tensor weights = Tensor::zeros({cells, k});
  {
    const Tensor mean2d = proj.mean2d.value();
    const Tensor cov2d = proj.cov2d.value();
    double* wm = weights.unique_data();
    // q <= -2 ln(cutoff) bounds the reachable cells of one splat
    const double q_max = -2.0 * std::log(kGridCutoff);
    for (int64_t j = 0; j < k; ++j) {
      if (proj.culled[static_cast<size_t>(j)]) continue;
      const double a = cov2d.at(j * 4 + 0), b = cov2d.at(j * 4 + 1), d = cov2d.at(j * 4 + 3);
      const double det = a * d - b * b;
      if (det <= 1e-18 || a <= 0.0 || d <= 0.0) continue;
      const double c00 = d / det, c01 = -b / det, c11 = a / det;
      const double mx = mean2d.at(j * 2 + 0), my = mean2d.at(j * 2 + 1);
      const double tr = a + d;
      const double gap = std::sqrt(std::max(0.25 * (a - d) * (a - d) + b * b, 0.0));
      const double lam_max = 0.5 * tr + gap;
      const double radius = std::sqrt(std::max(q_max * lam_max, 0.0));
      const int64_t gx0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor((mx - radius - 1.5) / 4.0)));
      const int64_t gx1 = std::min<int64_t>(gw - 1, static_cast<int64_t>(std::ceil((mx + radius - 1.5) / 4.0)));
      const int64_t gy0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor((my - radius - 1.5) / 4.0)));
      const int64_t gy1 = std::min<int64_t>(gh - 1, static_cast<int64_t>(std::ceil((my + radius - 1.5) / 4.0)));
      for (int64_t gy = gy0; gy <= gy1; ++gy) {
        for (int64_t gx = gx0; gx <= gx1; ++gx) {
          const double dx = (gx * 4 + 1.5) - mx;
          const double dy = (gy * 4 + 1.5) - my;
          const double q = c00 * dx * dx + 2.0 * c01 * dx * dy + c11 * dy * dy;
          const double w = std::exp(-0.5 * q);
          if (w < kGridCutoff) continue;
          wm[(gy * gw + gx) * k + j] = w;
        }
      }
    }
    for (int64_t c = 0; c < cells; ++c) {
      double total = 0.0;
      for (int64_t j = 0; j < k; ++j) total += wm[c * k + j];
      const double inv = 1.0 / (total + 1e-12);
      for (int64_t j = 0; j < k; ++j) wm[c * k + j] *= inv;
    }
  }

  Var feat = concat({sv.mu, sv.quat, sv.log_scale, reshape(sv.sigma, {k, 1}), sv.kd, sv.grad_h,
                     reshape(sv.xi, {k, 1}), reshape(sv.lambda, {k, 1})},
                    1);  // [K,18]
  Var grid = matmul(tape.constant(weights), feat);  // [cells,18]
  return reshape(transpose2d(grid), {kSplatFeatureDim, gh, gw});
}

FpnNet FpnNet::init(Rng& rng) {
  FpnNet net;
  net.down1 = make_conv2d(rng, kSplatFeatureDim, kFeatureChannels, 3, /*stride=*/2);
  net.down2 = make_conv2d(rng, kFeatureChannels, kFeatureChannels, 3, /*stride=*/2);
  net.lat1 = make_conv2d(rng, kSplatFeatureDim, kFeatureChannels, 1);
  net.lat2 = make_conv2d(rng, kFeatureChannels, kFeatureChannels, 1);
  net.lat3 = make_conv2d(rng, kFeatureChannels, kFeatureChannels, 1);
  return net;
}

FeaturePyramid forward(Binder& bind, FpnNet& net, Var grid) {
  Var s2 = relu(forward(bind, net.down1, grid));
  Var s3 = relu(forward(bind, net.down2, s2));
  FeaturePyramid p;
  p.f1 = forward(bind, net.lat1, grid);
  p.f2 = forward(bind, net.lat2, s2);
  p.f3 = forward(bind, net.lat3, s3);
  return p;
}

namespace {

void visit_conv(const std::string& prefix, Conv2dLayer& c, const ParamVisitor& fn) {
  fn(prefix + ".w", c.w);
  fn(prefix + ".b", c.b);
}

void visit_linear(const std::string& prefix, LinearLayer& l, const ParamVisitor& fn) {
  fn(prefix + ".w", l.w);
  fn(prefix + ".b", l.b);
}

void visit_bn(const std::string& prefix, BatchNorm1d& b, const ParamVisitor& fn) {
  fn(prefix + ".gamma", b.gamma);
  fn(prefix + ".beta", b.beta);
  fn(prefix + ".running_mean", b.running_mean);
  fn(prefix + ".running_var", b.running_var);
}

}  // namespace

void visit_params(EncoderNet& net, const ParamVisitor& fn) {
  visit_conv("encoder.conv1", net.conv1, fn);
  visit_conv("encoder.conv2", net.conv2, fn);
  visit_conv("encoder.conv3", net.conv3, fn);
  visit_linear("encoder.fc1", net.fc1, fn);
  visit_linear("encoder.fc2", net.fc2, fn);
  visit_linear("encoder.fc3", net.fc3, fn);
  visit_linear("encoder.fc4", net.fc4, fn);
  visit_linear("encoder.fc5", net.fc5, fn);
  visit_bn("encoder.bn1", net.bn1, fn);
  visit_bn("encoder.bn2", net.bn2, fn);
  visit_bn("encoder.bn3", net.bn3, fn);
  visit_bn("encoder.bn4", net.bn4, fn);
}

void visit_params(FpnNet& net, const ParamVisitor& fn) {
  visit_conv("fpn.down1", net.down1, fn);
  visit_conv("fpn.down2", net.down2, fn);
  visit_conv("fpn.lat1", net.lat1, fn);
  visit_conv("fpn.lat2", net.lat2, fn);
  visit_conv("fpn.lat3", net.lat3, fn);
}

// ---- analytic surface normals ----

namespace {

// inverse via adjugate; false when not positive-definite enough to trust
bool invert3(const double m[9], double out[9]) {
  const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                     m[2] * (m[3] * m[7] - m[4] * m[6]);
  if (!(det > 1e-30)) return false;
  const double inv = 1.0 / det;
  out[0] = (m[4] * m[8] - m[5] * m[7]) * inv;
  out[1] = (m[2] * m[7] - m[1] * m[8]) * inv;
  out[2] = (m[1] * m[5] - m[2] * m[4]) * inv;
  out[3] = (m[5] * m[6] - m[3] * m[8]) * inv;
  out[4] = (m[0] * m[8] - m[2] * m[6]) * inv;
  out[5] = (m[2] * m[3] - m[0] * m[5]) * inv;
  out[6] = (m[3] * m[7] - m[4] * m[6]) * inv;
  out[7] = (m[1] * m[6] - m[0] * m[7]) * inv;
  out[8] = (m[0] * m[4] - m[1] * m[3]) * inv;
  return true;
}

}  // namespace

std::vector<std::pair<int, double>> mahalanobis_weights(const Scene& scene, const double p[3],
                                                        int m) {
  if (m < 1) throw std::invalid_argument("mahalanobis_weights: m must be >= 1");
  const int n = static_cast<int>(scene.splats.size());
  std::vector<std::pair<double, int>> d2;  // (distance^2, index)
  d2.reserve(static_cast<size_t>(n));
  for (int j = 0; j < n; ++j) {
    const GaussianSplat& g = scene.splats[static_cast<size_t>(j)];
    double cov[9], prec[9];
    covariance3d(g, cov);
    if (!invert3(cov, prec)) continue;
    const double dx = g.mu[0] - p[0], dy = g.mu[1] - p[1], dz = g.mu[2] - p[2];
    const double q = prec[0] * dx * dx + prec[4] * dy * dy + prec[8] * dz * dz +
                     2.0 * (prec[1] * dx * dy + prec[2] * dx * dz + prec[5] * dy * dz);
    d2.emplace_back(q, j);
  }
  const int take = std::min<int>(m, static_cast<int>(d2.size()));
  std::partial_sort(d2.begin(), d2.begin() + take, d2.end());
  std::vector<std::pair<int, double>> out;
  out.reserve(static_cast<size_t>(take));
  if (take == 0) return out;
  const double shift = d2[0].first;  // softmin stabilization
  double total = 0.0;
  for (int i = 0; i < take; ++i) total += std::exp(-0.5 * (d2[static_cast<size_t>(i)].first - shift));
  for (int i = 0; i < take; ++i) {
    const auto& [q, j] = d2[static_cast<size_t>(i)];
    out.emplace_back(j, std::exp(-0.5 * (q - shift)) / total);
  }
  return out;
}

bool pca_normal(const Scene& scene, const double p[3], const double view_pos[3], int m,
                double out[3]) {
  const auto nb = mahalanobis_weights(scene, p, m);
  if (nb.size() < 3) return false;
  double mean[3] = {0, 0, 0};
  for (const auto& [j, w] : nb)
    for (int a = 0; a < 3; ++a) mean[a] += w * scene.splats[static_cast<size_t>(j)].mu[a];
  double c[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
  for (const auto& [j, w] : nb) {
    const double* mu = scene.splats[static_cast<size_t>(j)].mu;
    const double d[3] = {mu[0] - mean[0], mu[1] - mean[1], mu[2] - mean[2]};
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) c[a * 3 + b] += w * d[a] * d[b];
  }
  if (c[0] + c[4] + c[8] < 1e-18) return false;
  const SymEig3 eig = sym_eig3(c);
  for (int a = 0; a < 3; ++a) out[a] = eig.eigenvectors[0][a];
  const double toward = (view_pos[0] - p[0]) * out[0] + (view_pos[1] - p[1]) * out[1] +
                        (view_pos[2] - p[2]) * out[2];
  if (toward < 0.0)
    for (int a = 0; a < 3; ++a) out[a] = -out[a];
  return true;
}

Tensor pca_normal_map(const Scene& scene, const Camera& cam, const Tensor& alpha,
                      const Tensor& depth, int m, double alpha_threshold) {
  const int64_t h = cam.height, w = cam.width;
  if (alpha.rank() != 2 || alpha.dim(0) != h || alpha.dim(1) != w)
    throw std::invalid_argument("pca_normal_map: alpha must be [H,W]");
  if (depth.rank() != 2 || depth.dim(0) != h || depth.dim(1) != w)
    throw std::invalid_argument("pca_normal_map: depth must be [H,W]");
  double view_pos[3];
  cam.position(view_pos);
  Tensor out = Tensor::zeros({h, w, 3});
  double* po = out.unique_data();
  const double* pa = alpha.data();
  const double* pd = depth.data();
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const int64_t i = y * w + x;
      const double a = pa[i];
      if (a <= alpha_threshold) continue;
      const double z = pd[i] / a;  // alpha-weighted mean depth
      if (!(z > kNearPlane)) continue;
      double p[3];
      cam.back_project(static_cast<double>(x), static_cast<double>(y), z, p);
      double n_world[3];
      if (!pca_normal(scene, p, view_pos, m, n_world)) continue;
      double n_map[3];
      cam.normal_world_to_map(n_world, n_map);
      for (int c = 0; c < 3; ++c) po[i * 3 + c] = n_map[c];
    }
  }
  return out;
}

}  // namespace splatnorm
