#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "splatnorm/camera.hpp"
#include "splatnorm/rasterizer.hpp"
#include "splatnorm/rng.hpp"
#include "splatnorm/scene.hpp"
#include "splatnorm/threading.hpp"

using namespace splatnorm;

namespace {

bool bits_equal(const Tensor& a, const Tensor& b) {
  if (!shapes_equal(a.shape(), b.shape())) return false;
  return std::memcmp(a.data(), b.data(), static_cast<size_t>(a.numel()) * sizeof(double)) == 0;
}

// One splat sitting exactly on a pixel center with an isotropic unit conic.
RasterInputs single_splat(int size, double px, double py, double sigma) {
  RasterInputs in;
  in.width = size;
  in.height = size;
  in.mean2d = Tensor({1, 2}, {px, py});
  in.cov2d = Tensor({1, 2, 2}, {1, 0, 0, 1});
  in.depth = Tensor({1}, {2.0});
  in.sigma = Tensor({1}, {sigma});
  in.color = Tensor({1, 3}, {0.8, 0.4, 0.2});
  in.normal = Tensor({1, 3}, {0, 0, 1});
  return in;
}

Scene random_scene(Rng& rng, int count) {
  Scene s;
  for (int i = 0; i < count; ++i) {
    GaussianSplat g;
    g.mu[0] = rng.uniform(-0.8, 0.8);
    g.mu[1] = rng.uniform(-0.8, 0.8);
    g.mu[2] = rng.uniform(2.0, 4.0);
    double q[4];
    for (double& v : q) v = rng.uniform(-1, 1);
    std::memcpy(g.rot, q, sizeof(q));
    for (double& v : g.log_scale) v = rng.uniform(-2.5, -0.5);
    g.opacity_logit = rng.uniform(-1.0, 2.5);
    for (double& v : g.k_d) v = rng.uniform(0.1, 1.0);
    g.grad_h[0] = rng.uniform(-0.3, 0.3);
    g.grad_h[1] = rng.uniform(-0.3, 0.3);
    g.xi = rng.uniform(0.4, 1.5);
    g.lambda = rng.uniform(0.6, 2.0);
    s.splats.push_back(g);
  }
  s.background[0] = 0.05;
  s.background[1] = 0.1;
  s.background[2] = 0.0;
  return s;
}

LightField test_light() {
  double dir[3] = {0.3, 0.4, -0.867};
  const double n = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
  for (double& d : dir) d /= n;
  const double rad[3] = {1.0, 1.0, 1.0};
  return LightField::directional(dir, rad);
}

}  // namespace

TEST_CASE("single splat composites by the book") {
  RasterInputs in = single_splat(9, 4.0, 4.0, 0.7);
  in.background[0] = 0.5;
  RenderOptions opt;
  opt.tile_size = 4;
  RasterForward f = raster_forward(in, opt);

  // center pixel: q = 0, alpha = sigma
  const int64_t pid = 4 * 9 + 4;
  CHECK(f.out.alpha.at(pid) == doctest::Approx(0.7));
  CHECK(f.out.rgb.at(pid * 3 + 0) == doctest::Approx(0.7 * 0.8 + 0.3 * 0.5));
  CHECK(f.out.rgb.at(pid * 3 + 1) == doctest::Approx(0.7 * 0.4));
  CHECK(f.out.depth.at(pid) == doctest::Approx(0.7 * 2.0));
  CHECK(f.out.normal.at(pid * 3 + 2) == doctest::Approx(1.0));

  // one pixel to the right: q = 1, alpha = sigma exp(-1/2)
  const double a1 = 0.7 * std::exp(-0.5);
  CHECK(f.out.alpha.at(pid + 1) == doctest::Approx(a1).epsilon(1e-12));

  // per-splat contribution equals the sum of blended color over pixels
  double acc = 0;
  for (int64_t p = 0; p < 81; ++p) {
    const double t_bg = 1.0 - f.out.alpha.at(p);
    acc += f.out.rgb.at(p * 3) - t_bg * 0.5;
  }
  CHECK(f.out.contribution.at(0) == doctest::Approx(acc).epsilon(1e-9));
}

TEST_CASE("opacity saturates at the alpha clamp") {
  RasterInputs in = single_splat(5, 2.0, 2.0, 5.0);  // sigma > 1 on purpose
  RenderOptions opt;
  RasterForward f = raster_forward(in, opt);
  CHECK(f.out.alpha.at(2 * 5 + 2) == doctest::Approx(kAlphaMax));
}

TEST_CASE("the 1/255 cutoff is a hard skip") {
  RasterInputs in = single_splat(9, 4.0, 4.0, 0.5);
  RenderOptions opt;
  RasterForward f = raster_forward(in, opt);
  // q_max = 2 ln(255 sigma); the first pixel past the radius contributes 0
  const double qmax = 2.0 * std::log(255.0 * 0.5);
  const int64_t row = 4, col0 = 4;
  for (int64_t c = 0; c < 9; ++c) {
    const double dx = static_cast<double>(c) - col0;
    const double q = dx * dx;
    const double expect = q <= qmax ? 0.5 * std::exp(-0.5 * q) : 0.0;
    CHECK(f.out.alpha.at(row * 9 + c) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("two splats blend front to back") {
  RasterInputs in;
  in.width = in.height = 5;
  in.mean2d = Tensor({2, 2}, {2, 2, 2, 2});
  in.cov2d = Tensor({2, 2, 2}, {1, 0, 0, 1, 1, 0, 0, 1});
  in.depth = Tensor({2}, {3.0, 1.0});  // second splat is closer
  in.sigma = Tensor({2}, {0.6, 0.4});
  in.color = Tensor({2, 3}, {1, 0, 0, 0, 1, 0});
  in.normal = Tensor({2, 3}, {0, 0, 1, 0, 0, 1});
  RenderOptions opt;
  RasterForward f = raster_forward(in, opt);

  const int64_t pid = 2 * 5 + 2;
  // blend order: depth ascending -> green first
  CHECK(f.out.rgb.at(pid * 3 + 1) == doctest::Approx(0.4));
  CHECK(f.out.rgb.at(pid * 3 + 0) == doctest::Approx(0.6 * 0.6));
  CHECK(f.out.alpha.at(pid) == doctest::Approx(0.4 + 0.6 * 0.6));
  CHECK(f.out.depth.at(pid) == doctest::Approx(0.4 * 1.0 + 0.36 * 3.0));

  // skip flag removes a splat entirely
  in.skip = {1, 0};
  RasterForward f2 = raster_forward(in, opt);
  CHECK(f2.out.rgb.at(pid * 3 + 0) == doctest::Approx(0.0));
  CHECK(f2.out.alpha.at(pid) == doctest::Approx(0.4));
}

TEST_CASE("tiled and brute-force paths are bit-identical") {
  Rng rng(211);
  for (int trial = 0; trial < 20; ++trial) {
    Scene s = random_scene(rng, 1 + static_cast<int>(rng.next_below(64)));
    Camera cam = Camera::canonical(32, 32);
    LightField light = test_light();
    for (int early = 0; early <= 1; ++early) {
      RenderOptions tiled;
      tiled.tile_size = 8;
      tiled.early_stop = early != 0;
      RenderOptions brute = tiled;
      brute.brute_force = true;
      RenderOutput a = render(s, cam, light, tiled);
      RenderOutput b = render(s, cam, light, brute);
      CHECK(bits_equal(a.rgb, b.rgb));
      CHECK(bits_equal(a.alpha, b.alpha));
      CHECK(bits_equal(a.normal, b.normal));
      CHECK(bits_equal(a.depth, b.depth));
      CHECK(bits_equal(a.contribution, b.contribution));
    }
  }
}

TEST_CASE("thread count does not change the image") {
  Rng rng(97);
  Scene s = random_scene(rng, 24);
  Camera cam = Camera::canonical(32, 32);
  LightField light = test_light();
  RenderOptions opt;

  const int prev = thread_count();
  set_thread_count(1);
  RenderOutput a = render(s, cam, light, opt);
  set_thread_count(7);
  RenderOutput b = render(s, cam, light, opt);
  set_thread_count(prev);
  CHECK(bits_equal(a.rgb, b.rgb));
  CHECK(bits_equal(a.contribution, b.contribution));
}

TEST_CASE("early stop leaves occluded splats without gradient") {
  RasterInputs in;
  in.width = in.height = 5;
  in.mean2d = Tensor({2, 2}, {2, 2, 2, 2});
  // wide enough that q <= 0.016 everywhere, so sigma 0.999 clamps at every pixel
  in.cov2d = Tensor({2, 2, 2}, {500, 0, 0, 500, 500, 0, 0, 500});
  in.depth = Tensor({2}, {1.0, 2.0});
  in.sigma = Tensor({2}, {0.999, 0.8});  // front splat clamps to kAlphaMax
  in.color = Tensor({2, 3}, {1, 1, 1, 1, 1, 1});
  in.normal = Tensor({2, 3}, {0, 0, 1, 0, 0, 1});
  RenderOptions opt;
  opt.early_stop = true;
  RasterForward f = raster_forward(in, opt);

  Tensor grgb = Tensor::full({5, 5, 3}, 1.0);
  Tensor galpha = Tensor::zeros({5, 5});
  Tensor gnormal = Tensor::zeros({5, 5, 3});
  Tensor gdepth = Tensor::zeros({5, 5});
  Tensor gcontrib = Tensor::zeros({2, 3});
  RasterUpstream up{&grgb, &galpha, &gnormal, &gdepth, &gcontrib};
  RasterGrads g = raster_backward(in, opt, f, up);

  // transmittance after the front splat is 0.01 > kEarlyStopT at alpha 0.99,
  // so the back splat still records; push the front to the clamp and the
  // second round of blending keeps T = 0.01: back splat IS reached here.
  CHECK(std::abs(g.color.at(3)) > 0.0);

  // T after three clamped splats is (1 - 0.99)^3 < 1e-4, so a fourth splat
  // behind them is never blended and carries exactly zero gradient
  RasterInputs in4 = in;
  in4.mean2d = Tensor({4, 2}, {2, 2, 2, 2, 2, 2, 2, 2});
  in4.cov2d =
      Tensor({4, 2, 2}, {500, 0, 0, 500, 500, 0, 0, 500, 500, 0, 0, 500, 500, 0, 0, 500});
  in4.depth = Tensor({4}, {1.0, 2.0, 3.0, 4.0});
  in4.sigma = Tensor({4}, {0.999, 0.999, 0.999, 0.8});
  in4.color = Tensor({4, 3}, {1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1});
  in4.normal = Tensor({4, 3}, {0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 1});
  RasterForward f4 = raster_forward(in4, opt);
  Tensor gcontrib4 = Tensor::zeros({4, 3});
  RasterUpstream up4{&grgb, &galpha, &gnormal, &gdepth, &gcontrib4};
  RasterGrads g4 = raster_backward(in4, opt, f4, up4);
  for (int c = 0; c < 3; ++c) CHECK(g4.color.at(9 + c) == 0.0);
  CHECK(g4.sigma.at(3) == 0.0);
  CHECK(g4.mean2d.at(6) == 0.0);
}

TEST_CASE("graph render equals the value render bitwise") {
  Rng rng(303);
  Scene s = random_scene(rng, 12);
  Camera cam = Camera::canonical(24, 24);
  LightField light = test_light();
  RenderOptions opt;
  opt.tile_size = 8;

  RenderOutput plain = render(s, cam, light, opt);

  SceneParams params = to_params(s);
  std::memcpy(params.background, s.background, sizeof(s.background));
  Tape t;
  SceneVars sv = bind_scene(t, params, false);
  RenderVars rv = render_vars(t, sv, cam, light, s.background, opt);
  CHECK(bits_equal(rv.rgb.value(), plain.rgb));
  CHECK(bits_equal(rv.alpha.value(), plain.alpha));
  CHECK(bits_equal(rv.normal.value(), plain.normal));
  CHECK(bits_equal(rv.depth.value(), plain.depth));
  CHECK(bits_equal(rv.contribution.value(), plain.contribution));
}

TEST_CASE("rasterizer backward against finite differences") {
  RasterInputs in;
  in.width = in.height = 7;
  in.mean2d = Tensor({2, 2}, {3.1, 2.9, 3.6, 3.4});
  in.cov2d = Tensor({2, 2, 2}, {1.5, 0.2, 0.2, 1.2, 2.0, -0.3, -0.3, 1.1});
  in.depth = Tensor({2}, {2.0, 3.0});
  in.sigma = Tensor({2}, {0.6, 0.5});
  in.color = Tensor({2, 3}, {0.9, 0.2, 0.4, 0.1, 0.8, 0.3});
  in.normal = Tensor({2, 3}, {0, 0, 1, 0.6, 0, 0.8});
  in.background[1] = 0.2;
  RenderOptions opt;
  opt.tile_size = 4;

  // scalar objective: weighted sums of every output
  Rng wr(9);
  auto objective = [&](const RasterInputs& x) {
    RasterForward f = raster_forward(x, opt);
    Rng w(9);
    double acc = 0;
    for (int64_t i = 0; i < f.out.rgb.numel(); ++i) acc += f.out.rgb.at(i) * w.uniform(-1, 1);
    for (int64_t i = 0; i < f.out.alpha.numel(); ++i) acc += f.out.alpha.at(i) * w.uniform(-1, 1);
    for (int64_t i = 0; i < f.out.normal.numel(); ++i) acc += f.out.normal.at(i) * w.uniform(-1, 1);
    for (int64_t i = 0; i < f.out.depth.numel(); ++i) acc += f.out.depth.at(i) * w.uniform(-1, 1);
    for (int64_t i = 0; i < f.out.contribution.numel(); ++i)
      acc += f.out.contribution.at(i) * w.uniform(-1, 1);
    return acc;
  };

  RasterForward f = raster_forward(in, opt);
  Rng w(9);
  Tensor grgb({7, 7, 3}), galpha({7, 7}), gnormal({7, 7, 3}), gdepth({7, 7}), gcontrib({2, 3});
  for (int64_t i = 0; i < grgb.numel(); ++i) grgb.unique_data()[i] = w.uniform(-1, 1);
  for (int64_t i = 0; i < galpha.numel(); ++i) galpha.unique_data()[i] = w.uniform(-1, 1);
  for (int64_t i = 0; i < gnormal.numel(); ++i) gnormal.unique_data()[i] = w.uniform(-1, 1);
  for (int64_t i = 0; i < gdepth.numel(); ++i) gdepth.unique_data()[i] = w.uniform(-1, 1);
  for (int64_t i = 0; i < gcontrib.numel(); ++i) gcontrib.unique_data()[i] = w.uniform(-1, 1);
  RasterUpstream up{&grgb, &galpha, &gnormal, &gdepth, &gcontrib};
  RasterGrads g = raster_backward(in, opt, f, up);

  const double h = 1e-6;
  auto check_input = [&](Tensor RasterInputs::* field, const Tensor& analytic) {
    for (int64_t i = 0; i < analytic.numel(); ++i) {
      RasterInputs xp = in, xm = in;
      (xp.*field) = (in.*field).clone();
      (xm.*field) = (in.*field).clone();
      (xp.*field).unique_data()[i] += h;
      (xm.*field).unique_data()[i] -= h;
      const double num = (objective(xp) - objective(xm)) / (2 * h);
      const double a = analytic.at(i);
      CHECK(std::abs(a - num) <= 1e-4 * std::max({std::abs(a), std::abs(num), 1e-3}));
    }
  };
  check_input(&RasterInputs::mean2d, g.mean2d);
  check_input(&RasterInputs::cov2d, g.cov2d);
  check_input(&RasterInputs::depth, g.depth);
  check_input(&RasterInputs::sigma, g.sigma);
  check_input(&RasterInputs::color, g.color);
  check_input(&RasterInputs::normal, g.normal);
}

TEST_CASE("render on an empty scene is background") {
  Scene s;
  s.background[0] = 0.3;
  Camera cam = Camera::canonical(8, 8);
  RenderOptions opt;
  RenderOutput out = render(s, cam, test_light(), opt);
  for (int64_t p = 0; p < 64; ++p) {
    CHECK(out.rgb.at(p * 3 + 0) == doctest::Approx(0.3));
    CHECK(out.alpha.at(p) == 0.0);
    CHECK(out.normal.at(p * 3 + 2) == 0.0);
  }
}
