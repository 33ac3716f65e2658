#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "splatnorm/camera.hpp"
#include "splatnorm/eig3.hpp"
#include "splatnorm/light.hpp"
#include "splatnorm/rng.hpp"
#include "splatnorm/scene.hpp"

using namespace splatnorm;

namespace {

constexpr double kPi = 3.14159265358979323846;

void normalize3(double v[3]) {
  double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  for (int i = 0; i < 3; ++i) v[i] /= n;
}

double dot3(const double a[3], const double b[3]) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

// Cyclic Jacobi rotations; independent of the closed-form path under test.
void jacobi_eig3(const double m[9], double evals[3], double evecs[3][3]) {
  double a[3][3] = {{m[0], m[1], m[2]}, {m[1], m[4], m[5]}, {m[2], m[5], m[8]}};
  double v[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = std::abs(a[0][1]) + std::abs(a[0][2]) + std::abs(a[1][2]);
    if (off < 1e-15) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        if (std::abs(a[p][q]) < 1e-18) continue;
        double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int k = 0; k < 3; ++k) {
          double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }
  int order[3] = {0, 1, 2};
  double d[3] = {a[0][0], a[1][1], a[2][2]};
  for (int i = 0; i < 2; ++i)
    for (int j = i + 1; j < 3; ++j)
      if (d[order[j]] < d[order[i]]) std::swap(order[i], order[j]);
  for (int i = 0; i < 3; ++i) {
    evals[i] = d[order[i]];
    for (int k = 0; k < 3; ++k) evecs[i][k] = v[k][order[i]];
  }
}

// Gauss-Legendre nodes/weights on [a, b] by Newton on the Legendre recurrence.
void gauss_legendre(int n, double a, double b, std::vector<double>& xs, std::vector<double>& ws) {
  xs.resize(n);
  ws.resize(n);
  for (int i = 0; i < n; ++i) {
    double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      double dp = n * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
      double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    double dp = n * (x * p1 - p0) / (x * x - 1.0);
    xs[static_cast<size_t>(i)] = a + (b - a) * 0.5 * (x + 1.0);
    ws[static_cast<size_t>(i)] = (b - a) / ((1.0 - x * x) * dp * dp);
  }
}

// Hemisphere integral of E * vmf(omega; dir, kappa) * max(omega . n, 0) over
// the unit sphere; the clamp realizes the Omega+ restriction. vMF density is
// kept in log space so kappa = 1000 does not overflow.
double vmf_cosine_integral(const double dir[3], const double n[3], double kappa) {
  double e1[3];
  if (std::abs(dir[0]) < 0.9) {
    e1[0] = 0;
    e1[1] = -dir[2];
    e1[2] = dir[1];
  } else {
    e1[0] = -dir[2];
    e1[1] = 0;
    e1[2] = dir[0];
  }
  normalize3(e1);
  double e2[3] = {dir[1] * e1[2] - dir[2] * e1[1], dir[2] * e1[0] - dir[0] * e1[2],
                  dir[0] * e1[1] - dir[1] * e1[0]};
  const double norm = kappa / (2.0 * kPi * (1.0 - std::exp(-2.0 * kappa)));
  std::vector<double> us, uw;
  const double u_min = std::cos(0.25);  // mass below is ~exp(-kappa/32), negligible
  gauss_legendre(220, u_min, 1.0, us, uw);
  const int nphi = 256;
  double total = 0.0;
  for (size_t i = 0; i < us.size(); ++i) {
    const double u = us[i];
    const double su = std::sqrt(std::max(0.0, 1.0 - u * u));
    const double dens = norm * std::exp(kappa * (u - 1.0));
    double phi_acc = 0.0;
    for (int j = 0; j < nphi; ++j) {
      const double phi = 2.0 * kPi * j / nphi;
      double w[3];
      for (int c = 0; c < 3; ++c)
        w[c] = su * (std::cos(phi) * e1[c] + std::sin(phi) * e2[c]) + u * dir[c];
      phi_acc += std::max(dot3(w, n), 0.0);
    }
    total += uw[i] * dens * phi_acc * (2.0 * kPi / nphi);
  }
  return total;
}

}  // namespace

TEST_CASE("quaternion to rotation matrix") {
  double r[9];
  const double ident[4] = {1, 0, 0, 0};
  quat_to_rotmat(ident, r);
  for (int i = 0; i < 9; ++i) CHECK(r[i] == doctest::Approx(i % 4 == 0 ? 1.0 : 0.0));

  // 90 degrees about z maps x to y
  const double c = std::cos(kPi / 4), s = std::sin(kPi / 4);
  const double qz[4] = {c, 0, 0, s};
  quat_to_rotmat(qz, r);
  double x[3] = {1, 0, 0}, y[3];
  for (int i = 0; i < 3; ++i) y[i] = r[i * 3] * x[0] + r[i * 3 + 1] * x[1] + r[i * 3 + 2] * x[2];
  CHECK(y[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(1.0));

  // scaling the quaternion must not change the rotation
  const double q2[4] = {2 * c, 0, 0, 2 * s};
  double r2[9];
  quat_to_rotmat(q2, r2);
  for (int i = 0; i < 9; ++i) CHECK(r[i] == doctest::Approx(r2[i]).epsilon(1e-14));
}

TEST_CASE("covariance composition and the scale floor") {
  GaussianSplat g;
  g.log_scale[0] = std::log(0.5);
  g.log_scale[1] = std::log(1.0);
  g.log_scale[2] = std::log(2.0);
  double cov[9];
  covariance3d(g, cov);
  CHECK(cov[0] == doctest::Approx(0.25));
  CHECK(cov[4] == doctest::Approx(1.0));
  CHECK(cov[8] == doctest::Approx(4.0));
  CHECK(cov[1] == doctest::Approx(0.0).epsilon(1e-15));

  GaussianSplat tiny;
  tiny.log_scale[0] = tiny.log_scale[1] = tiny.log_scale[2] = -40.0;
  covariance3d(tiny, cov);
  CHECK(cov[0] == doctest::Approx(kMinScale * kMinScale));

  // rotating 90 degrees about z swaps the x/y variances
  GaussianSplat rot = g;
  rot.rot[0] = std::cos(kPi / 4);
  rot.rot[3] = std::sin(kPi / 4);
  covariance3d(rot, cov);
  CHECK(cov[0] == doctest::Approx(1.0));
  CHECK(cov[4] == doctest::Approx(0.25));
  CHECK(cov[8] == doctest::Approx(4.0));
}

TEST_CASE("gaussian density evaluation") {
  GaussianSplat g;
  g.mu[0] = 1.0;
  g.mu[1] = -2.0;
  g.mu[2] = 3.0;
  g.log_scale[0] = std::log(0.5);
  CHECK(eval_gaussian(g.mu, g) == doctest::Approx(1.0));

  double x[3] = {1.5, -2.0, 3.0};  // one sigma along the first axis
  CHECK(eval_gaussian(x, g) == doctest::Approx(std::exp(-0.5)));
}

TEST_CASE("splat normal is the minor axis flipped to the viewer") {
  CHECK(minor_axis_index(std::vector<double>{0.0, 0.0, -2.0}.data()) == 2);
  CHECK(minor_axis_index(std::vector<double>{-1.0, -1.0, 0.0}.data()) == 0);  // tie: first

  GaussianSplat g;
  g.mu[2] = 3.0;
  g.log_scale[2] = -2.0;  // flattest along local z
  double n[3];
  const double view_front[3] = {0, 0, 0};
  splat_normal(g, view_front, n);
  CHECK(n[2] == doctest::Approx(-1.0));  // faces the camera at the origin

  const double view_behind[3] = {0, 0, 10};
  splat_normal(g, view_behind, n);
  CHECK(n[2] == doctest::Approx(1.0));
}

TEST_CASE("projection puts an on-axis splat at the principal point") {
  Camera cam = Camera::canonical(32, 32);
  CHECK(cam.fx == doctest::Approx(0.875 * 32));
  CHECK(cam.cx == doctest::Approx(15.5));

  GaussianSplat g;
  g.mu[2] = 3.0;
  g.log_scale[0] = g.log_scale[1] = g.log_scale[2] = std::log(0.2);
  ProjectedSplat p = project(g, cam);
  CHECK(!p.culled);
  CHECK(p.mean2d[0] == doctest::Approx(cam.cx));
  CHECK(p.mean2d[1] == doctest::Approx(cam.cy));
  CHECK(p.depth == doctest::Approx(3.0));

  // isotropic splat on-axis: cov2d = (fx s / z)^2 I + dilation
  const double expect = std::pow(cam.fx * 0.2 / 3.0, 2) + kCovDilation;
  CHECK(p.cov2d[0] == doctest::Approx(expect).epsilon(1e-9));
  CHECK(p.cov2d[3] == doctest::Approx(expect).epsilon(1e-9));
  CHECK(p.cov2d[1] == doctest::Approx(0.0).epsilon(1e-9));

  GaussianSplat behind;
  behind.mu[2] = -1.0;
  CHECK(project(behind, cam).culled);
  GaussianSplat at_plane;
  at_plane.mu[2] = kNearPlane * 0.5;
  CHECK(project(at_plane, cam).culled);
}

TEST_CASE("camera transforms invert each other") {
  const double eye[3] = {1.0, -2.0, 0.5}, target[3] = {0.2, 0.1, 3.0}, up[3] = {0, 1, 0};
  Camera cam = Camera::look_at(eye, target, up, 48, 32, 40.0);

  double uv[2], depth;
  REQUIRE(cam.project_point(target, uv, &depth));
  CHECK(uv[0] == doctest::Approx(cam.cx).epsilon(1e-9));
  CHECK(uv[1] == doctest::Approx(cam.cy).epsilon(1e-9));

  double pos[3];
  cam.position(pos);
  for (int i = 0; i < 3; ++i) CHECK(pos[i] == doctest::Approx(eye[i]).epsilon(1e-9));

  Rng rng(21);
  for (int i = 0; i < 10; ++i) {
    double p[3] = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(2, 5)};
    double c[3], back[3];
    cam.world_to_cam(p, c);
    cam.cam_to_world(c, back);
    for (int k = 0; k < 3; ++k) CHECK(back[k] == doctest::Approx(p[k]).epsilon(1e-10));
    if (cam.project_point(p, uv, &depth)) {
      cam.back_project(uv[0], uv[1], depth, back);
      for (int k = 0; k < 3; ++k) CHECK(back[k] == doctest::Approx(p[k]).epsilon(1e-9));
    }
  }
}

TEST_CASE("normal map frame faces the viewer") {
  Camera cam = Camera::canonical(16, 16);
  const double toward_cam[3] = {0, 0, -1};  // world normal facing the origin camera
  double m[3];
  cam.normal_world_to_map(toward_cam, m);
  CHECK(m[0] == doctest::Approx(0.0));
  CHECK(m[1] == doctest::Approx(0.0));
  CHECK(m[2] == doctest::Approx(1.0));

  Rng rng(33);
  for (int i = 0; i < 10; ++i) {
    double n[3] = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    normalize3(n);
    double map[3], back[3];
    cam.normal_world_to_map(n, map);
    cam.normal_map_to_world(map, back);
    for (int k = 0; k < 3; ++k) CHECK(back[k] == doctest::Approx(n[k]).epsilon(1e-12));
  }
}

TEST_CASE("closed-form eigensolver agrees with jacobi sweeps") {
  Rng rng(55);
  for (int trial = 0; trial < 50; ++trial) {
    double b[9];
    for (double& v : b) v = rng.uniform(-2, 2);
    // symmetrize as B B^T + small ridge
    double m[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) m[i * 3 + j] += b[i * 3 + k] * b[j * 3 + k];
    m[0] += 1e-6;
    m[4] += 1e-6;
    m[8] += 1e-6;

    SymEig3 e = sym_eig3(m);
    double jv[3], jvec[3][3];
    jacobi_eig3(m, jv, jvec);

    CHECK(e.eigenvalues[0] <= e.eigenvalues[1] + 1e-12);
    CHECK(e.eigenvalues[1] <= e.eigenvalues[2] + 1e-12);
    for (int i = 0; i < 3; ++i)
      CHECK(e.eigenvalues[i] == doctest::Approx(jv[i]).epsilon(1e-8));

    // orthonormal frame
    for (int i = 0; i < 3; ++i) {
      CHECK(dot3(e.eigenvectors[i], e.eigenvectors[i]) == doctest::Approx(1.0).epsilon(1e-10));
      for (int j = i + 1; j < 3; ++j)
        CHECK(dot3(e.eigenvectors[i], e.eigenvectors[j]) == doctest::Approx(0.0).epsilon(1e-8));
    }

    // matching subspaces where the spectrum is separated
    for (int i = 0; i < 3; ++i) {
      double gap = 1e30;
      for (int j = 0; j < 3; ++j)
        if (j != i) gap = std::min(gap, std::abs(jv[j] - jv[i]));
      if (gap > 1e-4)
        CHECK(std::abs(dot3(e.eigenvectors[i], jvec[i])) == doctest::Approx(1.0).epsilon(1e-6));
    }

    // residual ||M v - lambda v||
    for (int i = 0; i < 3; ++i) {
      for (int r = 0; r < 3; ++r) {
        double mv = 0;
        for (int c = 0; c < 3; ++c) mv += m[r * 3 + c] * e.eigenvectors[i][c];
        CHECK(mv == doctest::Approx(e.eigenvalues[i] * e.eigenvectors[i][r]).epsilon(1e-6));
      }
    }
  }

  // fully isotropic input resolves to the documented axis order
  const double iso[9] = {2, 0, 0, 0, 2, 0, 0, 0, 2};
  SymEig3 e = sym_eig3(iso);
  CHECK(e.eigenvectors[0][2] == doctest::Approx(1.0));
  CHECK(e.eigenvectors[1][1] == doctest::Approx(1.0));
  CHECK(e.eigenvectors[2][0] == doctest::Approx(1.0));
}

TEST_CASE("scene params materialize and rebind") {
  SceneParams p = SceneParams::defaults(3);
  CHECK(p.count() == 3);
  Scene s = materialize(p);
  REQUIRE(s.splats.size() == 3);
  CHECK(s.splats[0].rot[0] == 1.0);
  CHECK(s.splats[0].xi == doctest::Approx(1.0));

  SceneParams back = to_params(materialize(p));
  for (int64_t i = 0; i < back.mu.numel(); ++i)
    CHECK(back.mu.at(i) == doctest::Approx(p.mu.at(i)));

  Tape t;
  SceneVars sv = bind_scene(t, p, false);
  CHECK(sv.sigma.value().at(0) == doctest::Approx(0.5));  // sigmoid(0)
  CHECK(sv.xi.value().at(0) == doctest::Approx(1.0));
  double qn = 0;
  for (int i = 0; i < 4; ++i) qn += sv.quat.value().at(i) * sv.quat.value().at(i);
  CHECK(qn == doctest::Approx(1.0).epsilon(1e-12));

  // deep floor: bound scale never drops below ln(kMinScale)
  SceneParams deep = SceneParams::defaults(1);
  deep.log_scale.unique_data()[0] = -40.0;
  Tape t2;
  SceneVars sv2 = bind_scene(t2, deep, false);
  CHECK(sv2.log_scale.value().at(0) == doctest::Approx(std::log(kMinScale)).epsilon(1e-9));
}

TEST_CASE("gabor kernel primitives") {
  const double origin[2] = {0, 0};
  const double alpha[2] = {0.3, -0.2};
  GaborEval at0 = gabor(origin, 0.5, alpha);
  CHECK(at0.amplitude == doctest::Approx(1.0 / (2 * kPi * 0.25)));
  CHECK(at0.modulation == doctest::Approx(1.0));

  const double x[2] = {0.4, 0.1};
  GaborEval gx = gabor(x, 0.5, alpha);
  const double r2 = 0.4 * 0.4 + 0.1 * 0.1;
  CHECK(gx.amplitude == doctest::Approx(std::exp(-r2 / 0.5) / (2 * kPi * 0.25)));
  CHECK(gx.modulation == doctest::Approx(std::cos(2 * kPi * (0.3 * 0.4 - 0.2 * 0.1))));
}

TEST_CASE("mean gabor follows its grid definition") {
  GaussianSplat g;
  g.log_scale[0] = std::log(0.8);
  g.log_scale[1] = std::log(0.6);
  g.log_scale[2] = std::log(0.9);
  g.grad_h[0] = 0.2;
  g.grad_h[1] = -0.1;
  g.xi = 0.7;
  g.lambda = 1.3;

  const double w = splat_footprint(g);
  CHECK(w == doctest::Approx(0.5 * 0.6));

  const double alpha[2] = {2 * g.grad_h[0] / g.lambda, 2 * g.grad_h[1] / g.lambda};
  double acc = 0;
  for (int iy = 0; iy < 5; ++iy)
    for (int ix = 0; ix < 5; ++ix) {
      const double x[2] = {-w + 2 * w * ix / 4.0, -w + 2 * w * iy / 4.0};
      GaborEval e = gabor(x, g.xi, alpha);
      acc += e.amplitude * e.modulation;
    }
  CHECK(mean_gabor(g) == doctest::Approx(acc / 25.0).epsilon(1e-12));
}

TEST_CASE("irradiance clamps negative interference to zero") {
  GaussianSplat g;
  g.xi = 2.0;  // wide envelope: modulation dominates the grid mean
  g.lambda = 0.5;
  const double rad[3] = {1.0, 2.0, 0.5};
  LightField light = LightField::ambient(rad);

  bool found_negative = false;
  for (double gh = 0.2; gh < 3.0; gh += 0.05) {
    g.grad_h[0] = gh;
    g.grad_h[1] = gh * 0.7;
    if (mean_gabor(g) < -1e-6) {
      found_negative = true;
      break;
    }
  }
  REQUIRE(found_negative);
  double e[3];
  effective_irradiance(g, light, e);
  for (int c = 0; c < 3; ++c) CHECK(e[c] == 0.0);

  g.grad_h[0] = g.grad_h[1] = 0.0;  // pure envelope, strictly positive
  const double mg = mean_gabor(g);
  CHECK(mg > 0.0);
  effective_irradiance(g, light, e);
  for (int c = 0; c < 3; ++c) CHECK(e[c] == doctest::Approx(rad[c] * mg));
}

TEST_CASE("shade composes albedo, cosine and irradiance") {
  GaussianSplat g;
  g.mu[2] = 3.0;
  g.log_scale[2] = -2.0;  // normal along -z toward the origin camera
  g.k_d[0] = 0.25;
  g.k_d[1] = 0.5;
  g.k_d[2] = 0.75;
  g.xi = 0.8;
  g.lambda = 1.1;

  double ldir[3] = {0.3, -0.2, -0.5};
  normalize3(ldir);
  const double rad[3] = {1.5, 1.0, 0.5};
  LightField light = LightField::directional(ldir, rad);

  const double view[3] = {0, 0, 0};
  ShadingResult r = shade(g, light, view);
  CHECK(r.normal[2] == doctest::Approx(-1.0));

  double e[3];
  effective_irradiance(g, light, e);
  const double cosine = std::max(dot3(r.normal, ldir), 0.0);
  for (int c = 0; c < 3; ++c) {
    CHECK(r.irradiance[c] == doctest::Approx(e[c]));
    CHECK(r.l_out[c] == doctest::Approx(g.k_d[c] * cosine * e[c]).epsilon(1e-12));
  }

  // light behind the surface: clamped to black
  double away[3] = {0, 0, 1};
  ShadingResult dark = shade(g, LightField::directional(away, rad), view);
  for (int c = 0; c < 3; ++c) CHECK(dark.l_out[c] == 0.0);
}

TEST_CASE("shade_with_normal rederives the height gradient") {
  GaussianSplat g;
  g.k_d[0] = g.k_d[1] = g.k_d[2] = 0.6;
  g.xi = 0.9;
  g.lambda = 1.2;

  double n[3] = {0.2, -0.3, 0.93};
  normalize3(n);
  double ldir[3] = {0.1, 0.2, 0.97};
  normalize3(ldir);
  const double rad[3] = {1.0, 1.0, 1.0};
  LightField light = LightField::directional(ldir, rad);

  double out[3];
  shade_with_normal(g, light, n, out);

  GaussianSplat h = g;  // independent recomposition via the documented rule
  h.grad_h[0] = -n[0] / n[2];
  h.grad_h[1] = -n[1] / n[2];
  double e[3];
  effective_irradiance(h, light, e);
  const double cosine = std::max(dot3(n, ldir), 0.0);
  for (int c = 0; c < 3; ++c) CHECK(out[c] == doctest::Approx(g.k_d[c] * cosine * e[c]));

  double flat[3] = {1, 0, 0};  // height axis degenerate
  CHECK_THROWS(shade_with_normal(g, light, flat, out));
}

TEST_CASE("analytic shading jacobian matches finite differences") {
  GaussianSplat g;
  g.k_d[0] = 0.3;
  g.k_d[1] = 0.9;
  g.k_d[2] = 0.5;
  g.xi = 0.8;
  g.lambda = 1.4;
  double n[3] = {0.15, 0.1, 0.98};
  normalize3(n);
  double ldir[3] = {-0.2, 0.3, 0.93};
  normalize3(ldir);
  const double rad[3] = {1.2, 0.7, 1.0};
  LightField light = LightField::directional(ldir, rad);

  double jac[3][3];
  shade_grad_normal(g, light, n, jac);
  const double h = 1e-6;
  for (int i = 0; i < 3; ++i) {
    double np[3] = {n[0], n[1], n[2]}, nm[3] = {n[0], n[1], n[2]};
    np[i] += h;
    nm[i] -= h;
    double fp[3], fm[3];
    shade_with_normal(g, light, np, fp);
    shade_with_normal(g, light, nm, fm);
    for (int c = 0; c < 3; ++c)
      CHECK(jac[c][i] == doctest::Approx((fp[c] - fm[c]) / (2 * h)).epsilon(1e-4));
  }
}

TEST_CASE("directional shading matches hemisphere quadrature") {
  // Concentrated incident field: L_i = E * vMF(kappa). The reference
  // integrates albedo * L_i * cos over omega+ directly.
  const double kappa = 1000.0;
  Rng rng(71);
  for (int trial = 0; trial < 20; ++trial) {
    GaussianSplat g;
    g.mu[2] = 3.0;
    g.log_scale[0] = rng.uniform(-0.4, 0.2);
    g.log_scale[1] = rng.uniform(-0.4, 0.2);
    g.log_scale[2] = -3.0;  // normal along local z
    // mild tilt keeps the normal well inside the lit hemisphere
    const double tilt = rng.uniform(0.0, 0.5);
    const double az = rng.uniform(0.0, 2 * kPi);
    g.rot[0] = std::cos(tilt / 2);
    g.rot[1] = std::sin(tilt / 2) * std::cos(az);
    g.rot[2] = std::sin(tilt / 2) * std::sin(az);
    for (int i = 0; i < 3; ++i) g.k_d[i] = rng.uniform(0.2, 1.0);
    g.grad_h[0] = rng.uniform(-0.1, 0.1);
    g.grad_h[1] = rng.uniform(-0.1, 0.1);
    g.xi = rng.uniform(0.5, 1.2);
    g.lambda = rng.uniform(1.0, 2.0);

    double ldir[3] = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), -1.0};
    normalize3(ldir);
    double rad[3];
    for (int i = 0; i < 3; ++i) rad[i] = rng.uniform(0.5, 1.5);
    LightField light = LightField::directional(ldir, rad);

    const double view[3] = {0, 0, 0};
    ShadingResult r = shade(g, light, view);
    REQUIRE(r.irradiance[0] > 1e-9);  // config keeps the gabor mean positive
    REQUIRE(dot3(r.normal, ldir) > 0.2);

    const double geom = vmf_cosine_integral(ldir, r.normal, kappa);
    for (int c = 0; c < 3; ++c) {
      const double reference = g.k_d[c] * r.irradiance[c] * geom;
      CHECK(std::abs(r.l_out[c] - reference) <= 0.03 * std::abs(reference));
    }
  }
}

TEST_CASE("energy loss measures the shading gap") {
  SceneParams p = SceneParams::defaults(2);
  Scene s = materialize(p);
  const double rad[3] = {1, 1, 1};
  double dir[3] = {0, 0, -1};
  LightField light = LightField::directional(dir, rad);
  const double view[3] = {0, 0, -5};

  // contributions equal to the shaded colors -> zero loss
  Tensor contrib({2, 3});
  for (int j = 0; j < 2; ++j) {
    ShadingResult r = shade(s.splats[static_cast<size_t>(j)], light, view);
    for (int c = 0; c < 3; ++c) contrib.unique_data()[j * 3 + c] = r.l_out[c];
  }
  CHECK(energy_loss_value(s, light, contrib, view) == doctest::Approx(0.0).epsilon(1e-12));

  Tensor off = contrib.clone();
  off.unique_data()[0] += 0.5;
  CHECK(energy_loss_value(s, light, off, view) == doctest::Approx(0.25));  // 0.5 / 2 splats
}
