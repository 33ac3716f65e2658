#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "splatnorm/camera.hpp"
#include "splatnorm/geo_features.hpp"
#include "splatnorm/metrics.hpp"
#include "splatnorm/rng.hpp"
#include "splatnorm/scene.hpp"

using namespace splatnorm;

namespace {

Tensor rand_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  double* p = t.unique_data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = rng.uniform(lo, hi);
  return t;
}

// Flat disc splats scattered over the plane z = z0.
Scene plane_scene(Rng& rng, int count, double z0) {
  Scene s;
  for (int i = 0; i < count; ++i) {
    GaussianSplat g;
    g.mu[0] = rng.uniform(-1.0, 1.0);
    g.mu[1] = rng.uniform(-1.0, 1.0);
    g.mu[2] = z0;
    g.log_scale[0] = g.log_scale[1] = std::log(0.3);
    g.log_scale[2] = std::log(0.01);
    s.splats.push_back(g);
  }
  return s;
}

Scene sphere_scene(Rng& rng, int count, double radius, const double center[3]) {
  Scene s;
  for (int i = 0; i < count; ++i) {
    double d[3];
    double n2 = 0;
    do {
      n2 = 0;
      for (double& v : d) {
        v = rng.uniform(-1.0, 1.0);
        n2 += v * v;
      }
    } while (n2 < 1e-3 || n2 > 1.0);
    const double inv = 1.0 / std::sqrt(n2);
    GaussianSplat g;
    for (int k = 0; k < 3; ++k) g.mu[k] = center[k] + radius * d[k] * inv;
    // orient the flat axis along the outward radial direction
    const double nx = d[0] * inv, ny = d[1] * inv, nz = d[2] * inv;
    // quaternion rotating +z to (nx, ny, nz)
    const double w = 1.0 + nz;
    if (w > 1e-9) {
      g.rot[0] = w;
      g.rot[1] = -ny;
      g.rot[2] = nx;
      g.rot[3] = 0.0;
    } else {
      g.rot[0] = 0.0;
      g.rot[1] = 1.0;  // 180 degrees about x
      g.rot[2] = 0.0;
      g.rot[3] = 0.0;
    }
    g.log_scale[0] = g.log_scale[1] = std::log(0.15);
    g.log_scale[2] = std::log(0.01);
    s.splats.push_back(g);
  }
  return s;
}

}  // namespace

TEST_CASE("mahalanobis weights prefer the nearest splat") {
  Scene s;
  for (int i = 0; i < 4; ++i) {
    GaussianSplat g;
    g.mu[0] = static_cast<double>(i);
    g.mu[2] = 3.0;
    g.log_scale[0] = g.log_scale[1] = g.log_scale[2] = std::log(0.2);
    s.splats.push_back(g);
  }
  const double p[3] = {0.05, 0.0, 3.0};
  auto w = mahalanobis_weights(s, p, 3);
  REQUIRE(w.size() == 3);
  CHECK(w[0].first == 0);
  double sum = 0;
  for (auto& [idx, wt] : w) {
    CHECK(wt >= 0.0);
    sum += wt;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(w[0].second > w[1].second);

  // m larger than the scene clamps
  auto all = mahalanobis_weights(s, p, 99);
  CHECK(all.size() == 4);
}

TEST_CASE("pca normal on a plane is the plane normal") {
  Rng rng(19);
  Scene s = plane_scene(rng, 60, 3.0);
  const double view[3] = {0, 0, 0};
  for (int trial = 0; trial < 10; ++trial) {
    const double p[3] = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 3.0};
    double n[3];
    REQUIRE(pca_normal(s, p, view, 8, n));
    CHECK(std::abs(n[0]) < 1e-6);
    CHECK(std::abs(n[1]) < 1e-6);
    CHECK(n[2] == doctest::Approx(-1.0).epsilon(1e-9));  // flipped toward the camera
  }
}

TEST_CASE("pca normal degenerates gracefully") {
  Scene s;  // two splats: not enough neighbors for a plane fit
  for (int i = 0; i < 2; ++i) {
    GaussianSplat g;
    g.mu[0] = i;
    g.mu[2] = 3.0;
    s.splats.push_back(g);
  }
  const double p[3] = {0, 0, 3.0}, view[3] = {0, 0, 0};
  double n[3];
  CHECK(!pca_normal(s, p, view, 8, n));
}

TEST_CASE("pca normals on a tangent sphere track analytic normals") {
  Rng rng(23);
  const double center[3] = {0, 0, 3};
  Scene s = sphere_scene(rng, 400, 0.8, center);
  const double view[3] = {0, 0, 0};

  // the visible-side filter keeps roughly a third of the directions
  std::vector<double> errs;
  for (int trial = 0; trial < 150; ++trial) {
    double d[3];
    double n2 = 0;
    for (double& v : d) {
      v = rng.uniform(-1, 1);
      n2 += v * v;
    }
    if (n2 < 1e-3) continue;
    const double inv = 1.0 / std::sqrt(n2);
    double p[3], truth[3];
    for (int k = 0; k < 3; ++k) {
      truth[k] = d[k] * inv;
      p[k] = center[k] + 0.8 * truth[k];
    }
    // visible side only; the estimator flips toward the camera
    double to_view[3] = {view[0] - p[0], view[1] - p[1], view[2] - p[2]};
    double dot = 0;
    for (int k = 0; k < 3; ++k) dot += truth[k] * to_view[k];
    if (dot < 0.2) continue;

    double n[3];
    if (!pca_normal(s, p, view, 8, n)) continue;
    errs.push_back(angular_error_deg(n, truth));
  }
  REQUIRE(errs.size() >= 20);
  std::sort(errs.begin(), errs.end());
  const double median = errs[errs.size() / 2];
  CHECK(median < 5.0);
}

TEST_CASE("pca normal map masks empty pixels") {
  Rng rng(29);
  Scene s = plane_scene(rng, 40, 3.0);
  Camera cam = Camera::canonical(16, 16);
  Tensor alpha = Tensor::zeros({16, 16});
  Tensor depth = Tensor::full({16, 16}, 3.0);
  // only the left half is covered
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 8; ++x) alpha.unique_data()[y * 16 + x] = 1.0;

  Tensor nm = pca_normal_map(s, cam, alpha, depth, 8, 0.5);
  REQUIRE(shapes_equal(nm.shape(), {16, 16, 3}));
  for (int y = 0; y < 16; ++y)
    for (int x = 8; x < 16; ++x)
      for (int c = 0; c < 3; ++c) CHECK(nm.at((y * 16 + x) * 3 + c) == 0.0);

  // covered pixels: map-frame plane normal is +z
  int covered = 0;
  for (int y = 4; y < 12; ++y)
    for (int x = 2; x < 6; ++x) {
      const int64_t pid = y * 16 + x;
      if (std::abs(nm.at(pid * 3 + 2) - 1.0) < 1e-6) ++covered;
    }
  CHECK(covered >= 28);
}

TEST_CASE("encoder emits one parameter block per image") {
  Rng rng(41);
  EncoderNet net = EncoderNet::init(rng, 6);
  Rng ir(7);
  std::vector<Tensor> images;
  for (int i = 0; i < 3; ++i) images.push_back(rand_tensor(ir, {32, 32, 3}, 0.0, 1.0));

  Tape t;
  Binder bind(t, false);
  Var out = forward(bind, net, images, true);
  REQUIRE(out.value().rank() == 2);
  CHECK(out.value().dim(0) == 3);
  CHECK(out.value().dim(1) == 6 * kSplatFeatureDim);
  CHECK(out.value().all_finite());

  // eval mode consumes running stats and stays deterministic
  Tape t2;
  Binder bind2(t2, false);
  Var e1 = forward(bind2, net, images, false);
  Tape t3;
  Binder bind3(t3, false);
  Var e2 = forward(bind3, net, images, false);
  CHECK(std::memcmp(e1.value().data(), e2.value().data(),
                    static_cast<size_t>(e1.value().numel()) * sizeof(double)) == 0);
}

TEST_CASE("head activations land in the documented boxes") {
  Rng rng(43);
  Tensor k18 = rand_tensor(rng, {5, kSplatFeatureDim}, -3.0, 3.0);
  Tape t;
  SceneVars sv = head_to_scene(t, t.constant(k18));

  for (int64_t j = 0; j < 5; ++j) {
    for (int c = 0; c < 3; ++c) {
      const double mu = sv.mu.value().at(j * 3 + c);
      const double lo = (c == 2 ? 3.0 : 0.0) - 1.0, hi = (c == 2 ? 3.0 : 0.0) + 1.0;
      CHECK(mu > lo);
      CHECK(mu < hi);
      const double ls = sv.log_scale.value().at(j * 3 + c);
      CHECK(ls > -5.5 - 1e-9);
      CHECK(ls < 0.5 + 1e-9);
      CHECK(sv.kd.value().at(j * 3 + c) > 0.0);
      CHECK(sv.kd.value().at(j * 3 + c) < 1.0);
    }
    double qn = 0;
    for (int c = 0; c < 4; ++c) {
      const double q = sv.quat.value().at(j * 4 + c);
      qn += q * q;
    }
    CHECK(qn == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sv.sigma.value().at(j) > 0.0);
    CHECK(sv.sigma.value().at(j) < 1.0);
    CHECK(sv.xi.value().at(j) >= std::exp(-2.0) - 1e-12);
    CHECK(sv.xi.value().at(j) <= std::exp(2.0) + 1e-12);
  }
}

TEST_CASE("value-side head twin binds to identical values") {
  Rng rng(47);
  Tensor k18 = rand_tensor(rng, {4, kSplatFeatureDim}, -2.5, 2.5);
  const double bg[3] = {0, 0, 0};

  Tape t;
  SceneVars direct = head_to_scene(t, t.constant(k18));
  SceneParams params = scene_params_from_head(k18, bg);
  Tape t2;
  SceneVars bound = bind_scene(t2, params, false);

  auto close = [](const Tensor& a, const Tensor& b) {
    REQUIRE(shapes_equal(a.shape(), b.shape()));
    for (int64_t i = 0; i < a.numel(); ++i)
      CHECK(a.at(i) == doctest::Approx(b.at(i)).epsilon(1e-12));
  };
  close(direct.mu.value(), bound.mu.value());
  close(direct.quat.value(), bound.quat.value());
  close(direct.log_scale.value(), bound.log_scale.value());
  close(direct.sigma.value(), bound.sigma.value());
  close(direct.kd.value(), bound.kd.value());
  close(direct.grad_h.value(), bound.grad_h.value());
  close(direct.xi.value(), bound.xi.value());
  close(direct.lambda.value(), bound.lambda.value());
}

TEST_CASE("splat grid drops one splat's parameters at its pixel") {
  Camera cam = Camera::canonical(32, 32);
  SceneParams p = SceneParams::defaults(1);
  p.mu.unique_data()[2] = 3.0;  // on-axis
  p.log_scale.unique_data()[0] = std::log(0.2);
  p.log_scale.unique_data()[1] = std::log(0.2);
  p.log_scale.unique_data()[2] = std::log(0.2);

  Tape t;
  SceneVars sv = bind_scene(t, p, false);
  Var cov3d = covariance_vars(sv.quat, sv.log_scale);
  ProjVars proj = project_vars(t, sv.mu, cov3d, cam);
  Var grid = splat_param_grid(t, sv, proj, cam);
  REQUIRE(shapes_equal(grid.value().shape(), {kSplatFeatureDim, 8, 8}));

  // the cell under the projected center carries the normalized feature
  const int cx = static_cast<int>(proj.mean2d.value().at(0) / 4.0);
  const int cy = static_cast<int>(proj.mean2d.value().at(1) / 4.0);
  const int64_t cell = cy * 8 + cx;
  CHECK(grid.value().at(0 * 64 + cell) == doctest::Approx(p.mu.at(0)).epsilon(1e-9));
  CHECK(grid.value().at(2 * 64 + cell) == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(grid.value().at(3 * 64 + cell) == doctest::Approx(1.0).epsilon(1e-9));   // quat w
  CHECK(grid.value().at(10 * 64 + cell) == doctest::Approx(0.5).epsilon(1e-9));  // opacity

  // far corners see nothing of a 0.2-scale splat
  CHECK(grid.value().at(2 * 64 + 0) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("feature pyramid halves twice") {
  Rng rng(53);
  FpnNet net = FpnNet::init(rng);
  Tape t;
  Binder bind(t, false);
  Var grid = t.constant(rand_tensor(rng, {kSplatFeatureDim, 16, 16}, -1.0, 1.0));
  FeaturePyramid pyr = forward(bind, net, grid);
  CHECK(shapes_equal(pyr.f1.value().shape(), {kFeatureChannels, 16, 16}));
  CHECK(shapes_equal(pyr.f2.value().shape(), {kFeatureChannels, 8, 8}));
  CHECK(shapes_equal(pyr.f3.value().shape(), {kFeatureChannels, 4, 4}));
  CHECK(pyr.f1.value().all_finite());
}

TEST_CASE("parameter visitors name every tensor once") {
  Rng rng(59);
  EncoderNet enc = EncoderNet::init(rng, 4);
  FpnNet fpn = FpnNet::init(rng);

  std::vector<std::string> names;
  visit_params(enc, [&](const std::string& n, Tensor& v) {
    CHECK(v.defined());
    names.push_back(n);
  });
  visit_params(fpn, [&](const std::string& n, Tensor& v) {
    CHECK(v.defined());
    names.push_back(n);
  });
  REQUIRE(!names.empty());
  std::vector<std::string> sorted = names;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());

  // batch norm state rides along with the weights
  bool saw_running = false;
  for (const auto& n : names) saw_running |= n.find("running") != std::string::npos;
  CHECK(saw_running);
}

TEST_CASE("encoder init is seed-deterministic") {
  Rng a(61), b(61);
  EncoderNet e1 = EncoderNet::init(a, 4);
  EncoderNet e2 = EncoderNet::init(b, 4);
  CHECK(std::memcmp(e1.conv1.w.data(), e2.conv1.w.data(),
                    static_cast<size_t>(e1.conv1.w.numel()) * sizeof(double)) == 0);
  CHECK(std::memcmp(e1.fc5.w.data(), e2.fc5.w.data(),
                    static_cast<size_t>(e1.fc5.w.numel()) * sizeof(double)) == 0);
}
