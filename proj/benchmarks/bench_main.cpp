#include <benchmark/benchmark.h>

#include <cstring>

#include "splatnorm/camera.hpp"
#include "splatnorm/diffusion.hpp"
#include "splatnorm/light.hpp"
#include "splatnorm/nn.hpp"
#include "splatnorm/rasterizer.hpp"
#include "splatnorm/rng.hpp"
#include "splatnorm/scene.hpp"
#include "splatnorm/tape.hpp"

using namespace splatnorm;

namespace {

Scene bench_scene(int count) {
  Rng rng(1);
  Scene s;
  for (int i = 0; i < count; ++i) {
    GaussianSplat g;
    g.mu[0] = rng.uniform(-0.8, 0.8);
    g.mu[1] = rng.uniform(-0.8, 0.8);
    g.mu[2] = rng.uniform(2.0, 4.0);
    for (double& v : g.rot) v = rng.uniform(-1, 1);
    for (double& v : g.log_scale) v = rng.uniform(-2.5, -0.5);
    g.opacity_logit = rng.uniform(-1.0, 2.5);
    for (double& v : g.k_d) v = rng.uniform(0.1, 1.0);
    s.splats.push_back(g);
  }
  return s;
}

LightField bench_light() {
  const double dir[3] = {0.37139067635, 0.0, -0.92847669088};
  const double rad[3] = {1.0, 1.0, 1.0};
  return LightField::directional(dir, rad);
}

void render_forward(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const int side = static_cast<int>(state.range(1));
  const Scene s = bench_scene(k);
  const Camera cam = Camera::canonical(side, side);
  const LightField light = bench_light();
  RenderOptions opt;
  for (auto _ : state) {
    RenderOutput out = render(s, cam, light, opt);
    benchmark::DoNotOptimize(out.rgb.data());
  }
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(render_forward)->Args({64, 64})->Args({256, 64})->Args({256, 128});

void render_backward(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const int side = static_cast<int>(state.range(1));
  SceneParams params = to_params(bench_scene(k));
  const Camera cam = Camera::canonical(side, side);
  const LightField light = bench_light();
  const double bg[3] = {0, 0, 0};
  RenderOptions opt;
  for (auto _ : state) {
    Tape t;
    SceneVars sv = bind_scene(t, params, /*trainable=*/true);
    RenderVars rv = render_vars(t, sv, cam, light, bg, opt);
    Var loss = mean_all(square(rv.rgb));
    t.backward(loss);
    benchmark::DoNotOptimize(sv.mu.grad().data());
  }
}
BENCHMARK(render_backward)->Args({64, 64})->Args({256, 64});

void conv2d_forward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int side = static_cast<int>(state.range(1));
  Rng rng(2);
  Tensor x({c, side, side});
  Tensor w({c, c, 3, 3});
  for (double* p = x.unique_data(); p != x.unique_data() + x.numel(); ++p) p[0] = rng.normal();
  for (double* p = w.unique_data(); p != w.unique_data() + w.numel(); ++p) p[0] = rng.normal();
  for (auto _ : state) {
    Tape t;
    Var y = conv2d(t.constant(x), t.constant(w), Pad::kSame, 1);
    benchmark::DoNotOptimize(y.value().data());
  }
}
BENCHMARK(conv2d_forward)->Args({16, 64})->Args({32, 32});

void score_net_step(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  Rng rng(3);
  ScoreNet net = ScoreNet::init(rng);
  NoiseSchedule ns = NoiseSchedule::cosine(50);
  Tensor n0({side, side, 3});
  for (double* p = n0.unique_data(); p != n0.unique_data() + n0.numel(); ++p)
    p[0] = rng.uniform(-1, 1);
  SgdMomentum opt(1e-4, 0.9, 10.0);
  Rng step_rng(4);
  for (auto _ : state) {
    const int t_step = 1 + static_cast<int>(step_rng.next_u64() % 50);
    Tensor eps(n0.shape());
    for (double* p = eps.unique_data(); p != eps.unique_data() + eps.numel(); ++p)
      p[0] = step_rng.normal();
    Tape tape;
    Binder bind(tape, true);
    Var xt = forward_noise_vars(ns, tape.constant(n0), t_step, tape.constant(eps));
    Var pred = forward(bind, net, xt, t_step, Var{});
    Var loss = mean_all(square(sub(pred, tape.constant(eps))));
    tape.backward(loss);
    opt.step(tape, bind.bound);
    benchmark::DoNotOptimize(loss.value().data());
  }
}
BENCHMARK(score_net_step)->Arg(16)->Arg(32);

}  // namespace

BENCHMARK_MAIN();
